#pragma once

// Reverse-mode autodiff over an op tape. Each differentiable op records a
// backward closure; backward() replays the closures in reverse record order.
// With recording off the same entry points double as the inference path.

#include <functional>
#include <vector>

#include "bgcut/conv_kernels.hpp"
#include "bgcut/tensor.hpp"

namespace bgcut {

template <class T>
struct VariableT {
  TensorT<T> value;
  TensorT<T> grad;  // always same shape as value, zero-initialized
  bool requires_grad = true;

  VariableT() = default;
  explicit VariableT(TensorT<T> v, bool rg = true)
      : value(std::move(v)), grad(TensorT<T>::zeros_like(value)), requires_grad(rg) {}

  void zero_grad() { fill_value(grad, T(0)); }
};

using Variable = VariableT<float>;

// Handle to an intermediate result. node < 0 means no gradient flows
// through it (a constant, or produced while recording was off).
template <class T>
struct ValueT {
  TensorT<T> tensor;
  int node = -1;
};

template <class T>
class TapeT {
 public:
  using Value = ValueT<T>;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // With recording off, ops compute forward only and return constants.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  // When enabled every op output is checked for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

  Value leaf(VariableT<T>& var);
  Value constant(TensorT<T> t) { return Value{std::move(t), -1}; }

  Value conv2d(const Value& x, const Value& w, const Value& b, const Conv2dSpec& spec);
  Value conv2d_transpose(const Value& x, const Value& w, const Value& b, int stride, int pad);
  Value relu(const Value& x);
  Value add(const Value& a, const Value& b);
  Value mul(const Value& a, const Value& b);
  Value scale(const Value& a, T alpha);
  Value concat_channels(const std::vector<Value>& xs);
  Value reshape(const Value& x, Shape shape);
  // out[n*k+j] = x[n]; pairs each batch row with k consecutive output rows.
  Value repeat_batch(const Value& x, int k);
  Value batch_norm(const Value& x, VariableT<T>& gamma, VariableT<T>& beta,
                   TensorT<T>& running_mean, TensorT<T>& running_var, bool training,
                   T momentum = T(0.9), T eps = T(1e-5));
  Value global_avg_pool(const Value& x);
  Value upsample_tile(const Value& x, int th, int tw);
  Value upsample_bilinear(const Value& x, int th, int tw);
  Value softmax_channel(const Value& x);
  Value softmax_ce_loss(const Value& scores, const TensorT<int>& labels, int ignore_label);
  Value l2_loss(const Value& pred, const TensorT<T>& target);
  Value sum_all(const Value& x);
  Value weighted_sum(const Value& x, const TensorT<T>& weights);
  Value zero_pad2d(const Value& x, int top, int bottom, int left, int right);
  Value crop2d(const Value& x, int top, int left, int h, int w);

  // Seeds the root gradient with ones (the gradient of sum(root)) and runs
  // all recorded closures in reverse order. Ops whose output never reached
  // the root keep an empty gradient and are skipped, so unused variables
  // end up with exactly zero grad.
  void backward(const Value& root);

  void reset() { nodes_.clear(); }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Gradient buffer of a recorded node, allocated on first use.
  TensorT<T>& grad_buffer(int node);
  const TensorT<T>* grad_of(int node) const;

 private:
  struct Node {
    Shape shape;
    TensorT<T> grad;
    std::function<void(TapeT&)> back;
  };

  int push(Shape shape);
  Value finish(TensorT<T> out, int node);
  void accumulate(int node, const TensorT<T>& g);

  std::vector<Node> nodes_;
  bool recording_ = true;
  bool check_finite_ = false;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace bgcut
