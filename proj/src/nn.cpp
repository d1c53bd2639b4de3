#include "bgcut/nn.hpp"

#include <cmath>

namespace bgcut {

template <class T>
ConvLayerT<T> make_conv(int cin, int cout, int k, int stride, int pad, int dilation, bool bias,
                        Rng& rng) {
  require(cin >= 1 && cout >= 1 && k >= 1, Errc::invalid_argument, "conv channels/kernel must be positive");
  ConvLayerT<T> l;
  l.w = VariableT<T>(TensorT<T>({cout, cin, k, k}));
  const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  fill_normal(l.w.value, 0.0, stddev, rng);
  if (bias) l.b = VariableT<T>(TensorT<T>({cout}));
  l.stride = stride;
  l.pad = pad;
  l.dilation = dilation;
  l.kept_out.resize(static_cast<std::size_t>(cout));
  std::iota(l.kept_out.begin(), l.kept_out.end(), 0);
  return l;
}

template <class T>
ConvLayerT<T> make_conv_transpose(int cin, int cout, int k, int stride, int pad, bool bias,
                                  Rng& rng) {
  require(cin >= 1 && cout >= 1 && k >= 1, Errc::invalid_argument, "deconv channels/kernel must be positive");
  ConvLayerT<T> l;
  l.w = VariableT<T>(TensorT<T>({cin, cout, k, k}));
  const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  fill_normal(l.w.value, 0.0, stddev, rng);
  if (bias) l.b = VariableT<T>(TensorT<T>({cout}));
  l.stride = stride;
  l.pad = pad;
  l.transpose = true;
  l.kept_out.resize(static_cast<std::size_t>(cout));
  std::iota(l.kept_out.begin(), l.kept_out.end(), 0);
  return l;
}

template <class T>
BatchNormLayerT<T> make_batch_norm(int channels) {
  BatchNormLayerT<T> l;
  l.gamma = VariableT<T>(TensorT<T>::full({channels}, T(1)));
  l.beta = VariableT<T>(TensorT<T>({channels}));
  l.running_mean = TensorT<T>({channels});
  l.running_var = TensorT<T>::full({channels}, T(1));
  return l;
}

template <class T>
ValueT<T> conv_forward(TapeT<T>& tape, ConvLayerT<T>& layer, const ValueT<T>& x) {
  ValueT<T> w = tape.leaf(layer.w);
  ValueT<T> b = layer.has_bias() ? tape.leaf(layer.b) : tape.constant(TensorT<T>{});
  if (layer.transpose) return tape.conv2d_transpose(x, w, b, layer.stride, layer.pad);
  return tape.conv2d(x, w, b, Conv2dSpec{layer.stride, layer.pad, layer.dilation});
}

template <class T>
ValueT<T> bn_forward(TapeT<T>& tape, BatchNormLayerT<T>& layer, const ValueT<T>& x, bool training) {
  return tape.batch_norm(x, layer.gamma, layer.beta, layer.running_mean, layer.running_var,
                         training);
}

template <class T>
ValueT<T> conv_bn_relu(TapeT<T>& tape, ConvLayerT<T>& conv, BatchNormLayerT<T>& bn,
                       const ValueT<T>& x, bool training) {
  return tape.relu(bn_forward(tape, bn, conv_forward(tape, conv, x), training));
}

template <class T>
void visit_params(ConvLayerT<T>& l, const std::string& prefix, const ParamFn<T>& fn) {
  fn(prefix + ".w", l.w);
  if (l.has_bias()) fn(prefix + ".b", l.b);
}

template <class T>
void visit_params(BatchNormLayerT<T>& l, const std::string& prefix, const ParamFn<T>& fn) {
  fn(prefix + ".gamma", l.gamma);
  fn(prefix + ".beta", l.beta);
}

template <class T>
void visit_buffers(BatchNormLayerT<T>& l, const std::string& prefix, const BufferFn<T>& fn) {
  fn(prefix + ".running_mean", l.running_mean);
  fn(prefix + ".running_var", l.running_var);
}

template <class U, class T>
ConvLayerT<U> cast_layer(const ConvLayerT<T>& l) {
  ConvLayerT<U> o;
  o.w = VariableT<U>(l.w.value.template cast<U>());
  if (l.has_bias()) o.b = VariableT<U>(l.b.value.template cast<U>());
  o.stride = l.stride;
  o.pad = l.pad;
  o.dilation = l.dilation;
  o.transpose = l.transpose;
  o.kept_out = l.kept_out;
  return o;
}

template <class U, class T>
BatchNormLayerT<U> cast_layer(const BatchNormLayerT<T>& l) {
  BatchNormLayerT<U> o;
  o.gamma = VariableT<U>(l.gamma.value.template cast<U>());
  o.beta = VariableT<U>(l.beta.value.template cast<U>());
  o.running_mean = l.running_mean.template cast<U>();
  o.running_var = l.running_var.template cast<U>();
  return o;
}

template <class T>
void sgd_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& velocity, T lr, T momentum,
              T weight_decay) {
  require(param.same_shape(grad) && param.same_shape(velocity), Errc::shape_mismatch,
          "sgd_step: param/grad/velocity shapes must match");
  require(grad.all_finite(), Errc::numeric, "sgd_step: non-finite gradient");
  T* p = param.data();
  const T* g = grad.data();
  T* v = velocity.data();
  for (std::int64_t i = 0; i < param.size(); ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
    p[i] -= lr * v[i];
  }
}

void SgdOptimizer::add(Variable* p, double lr_scale) {
  entries_.push_back(Entry{p, Tensor::zeros_like(p->value), lr_scale});
}

void SgdOptimizer::add_named(const std::string&, Variable* p, double lr_scale) {
  add(p, lr_scale);
}

void SgdOptimizer::zero_grad() {
  for (auto& e : entries_) e.p->zero_grad();
}

void SgdOptimizer::step(double lr) {
  for (auto& e : entries_) {
    sgd_step(e.p->value, e.p->grad, e.velocity, static_cast<float>(lr * e.lr_scale),
             static_cast<float>(momentum_), static_cast<float>(weight_decay_));
  }
}

double poly_lr(double base_lr, double power, long iter, long max_iter) {
  require(max_iter > 0, Errc::invalid_argument, "poly_lr: max_iter must be positive");
  require(iter >= 0, Errc::invalid_argument, "poly_lr: iter must be non-negative");
  if (iter > max_iter) iter = max_iter;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
  return base_lr * std::pow(frac, power);
}

#define BGCUT_INSTANTIATE_NN(T)                                                                  \
  template ConvLayerT<T> make_conv<T>(int, int, int, int, int, int, bool, Rng&);                 \
  template ConvLayerT<T> make_conv_transpose<T>(int, int, int, int, int, bool, Rng&);            \
  template BatchNormLayerT<T> make_batch_norm<T>(int);                                           \
  template ValueT<T> conv_forward<T>(TapeT<T>&, ConvLayerT<T>&, const ValueT<T>&);               \
  template ValueT<T> bn_forward<T>(TapeT<T>&, BatchNormLayerT<T>&, const ValueT<T>&, bool);      \
  template ValueT<T> conv_bn_relu<T>(TapeT<T>&, ConvLayerT<T>&, BatchNormLayerT<T>&,             \
                                     const ValueT<T>&, bool);                                    \
  template void visit_params<T>(ConvLayerT<T>&, const std::string&, const ParamFn<T>&);          \
  template void visit_params<T>(BatchNormLayerT<T>&, const std::string&, const ParamFn<T>&);     \
  template void visit_buffers<T>(BatchNormLayerT<T>&, const std::string&, const BufferFn<T>&);   \
  template void sgd_step<T>(TensorT<T>&, const TensorT<T>&, TensorT<T>&, T, T, T);

BGCUT_INSTANTIATE_NN(float)
BGCUT_INSTANTIATE_NN(double)

template ConvLayerT<double> cast_layer<double, float>(const ConvLayerT<float>&);
template ConvLayerT<float> cast_layer<float, double>(const ConvLayerT<double>&);
template ConvLayerT<float> cast_layer<float, float>(const ConvLayerT<float>&);
template BatchNormLayerT<double> cast_layer<double, float>(const BatchNormLayerT<float>&);
template BatchNormLayerT<float> cast_layer<float, double>(const BatchNormLayerT<double>&);
template BatchNormLayerT<float> cast_layer<float, float>(const BatchNormLayerT<float>&);

}  // namespace bgcut
