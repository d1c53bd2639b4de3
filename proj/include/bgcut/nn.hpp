#pragma once

// Layer parameter bundles, initialization, the SGD optimizer, and the poly
// learning-rate schedule. Layers are plain structs; forward helpers run
// them on a tape so the same code serves training and inference.

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bgcut/tape.hpp"

namespace bgcut {

template <class T>
struct ConvLayerT {
  // Weight layout [Cout,Cin,kh,kw]; transposed layers use [Cin,Cout,kh,kw].
  VariableT<T> w;
  VariableT<T> b;  // undefined value when the layer has no bias
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  bool transpose = false;
  // Original filter indices still present, for pruning provenance.
  std::vector<int> kept_out;

  bool has_bias() const { return b.value.defined(); }
  int out_channels() const { return transpose ? w.value.dim(1) : w.value.dim(0); }
  int in_channels() const { return transpose ? w.value.dim(0) : w.value.dim(1); }
  int kernel() const { return w.value.dim(2); }
};

template <class T>
struct BatchNormLayerT {
  VariableT<T> gamma;
  VariableT<T> beta;
  TensorT<T> running_mean;
  TensorT<T> running_var;

  int channels() const { return gamma.value.dim(0); }
};

using ConvLayer = ConvLayerT<float>;
using BatchNormLayer = BatchNormLayerT<float>;

template <class T>
ConvLayerT<T> make_conv(int cin, int cout, int k, int stride, int pad, int dilation, bool bias,
                        Rng& rng);
template <class T>
ConvLayerT<T> make_conv_transpose(int cin, int cout, int k, int stride, int pad, bool bias,
                                  Rng& rng);
template <class T>
BatchNormLayerT<T> make_batch_norm(int channels);

template <class T>
ValueT<T> conv_forward(TapeT<T>& tape, ConvLayerT<T>& layer, const ValueT<T>& x);
template <class T>
ValueT<T> bn_forward(TapeT<T>& tape, BatchNormLayerT<T>& layer, const ValueT<T>& x, bool training);
template <class T>
ValueT<T> conv_bn_relu(TapeT<T>& tape, ConvLayerT<T>& conv, BatchNormLayerT<T>& bn,
                       const ValueT<T>& x, bool training);

template <class T>
using ParamFn = std::function<void(const std::string&, VariableT<T>&)>;
template <class T>
using BufferFn = std::function<void(const std::string&, TensorT<T>&)>;

template <class T>
void visit_params(ConvLayerT<T>& l, const std::string& prefix, const ParamFn<T>& fn);
template <class T>
void visit_params(BatchNormLayerT<T>& l, const std::string& prefix, const ParamFn<T>& fn);
template <class T>
void visit_buffers(BatchNormLayerT<T>& l, const std::string& prefix, const BufferFn<T>& fn);

template <class U, class T>
ConvLayerT<U> cast_layer(const ConvLayerT<T>& l);
template <class U, class T>
BatchNormLayerT<U> cast_layer(const BatchNormLayerT<T>& l);

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v
template <class T>
void sgd_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& velocity, T lr, T momentum,
              T weight_decay);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(double momentum = 0.9, double weight_decay = 1e-4)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void add(Variable* p, double lr_scale = 1.0);
  void add_named(const std::string& name, Variable* p, double lr_scale = 1.0);
  void zero_grad();
  void step(double lr);
  std::size_t size() const { return entries_.size(); }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  struct Entry {
    Variable* p;
    Tensor velocity;
    double lr_scale;
  };
  std::vector<Entry> entries_;
  double momentum_;
  double weight_decay_;
};

// base_lr * (1 - iter/max_iter)^power, clamped to iter in [0, max_iter].
double poly_lr(double base_lr, double power, long iter, long max_iter);

}  // namespace bgcut
