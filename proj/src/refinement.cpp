#include "bgcut/refinement.hpp"

namespace bgcut {

int RefinementConfig::input_channels() const {
  int c = window() * 2;
  if (guidance) c += (center_only_guidance ? 1 : window()) * 3;
  return c;
}

void RefinementConfig::validate() const {
  require(n >= 0, Errc::invalid_argument, "refinement: n must be >= 0");
  for (int c : encoder_channels)
    require(c >= 1, Errc::invalid_argument, "refinement: encoder channels must be >= 1");
  require(encoder_kernel >= 1 && decoder_kernel >= 2, Errc::invalid_argument,
          "refinement: invalid kernel sizes");
}

template <class T>
RefinementModelT<T> build_refinement(const RefinementConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  RefinementModelT<T> m;
  m.config = cfg;
  const int cin = cfg.input_channels();
  const auto [e0, e1, e2] = cfg.encoder_channels;
  const int ek = cfg.encoder_kernel, dk = cfg.decoder_kernel;
  m.enc1 = make_conv<T>(cin, e0, ek, 2, ek / 2, 1, false, rng);
  m.ebn1 = make_batch_norm<T>(e0);
  m.enc2 = make_conv<T>(e0, e1, ek, 2, ek / 2, 1, false, rng);
  m.ebn2 = make_batch_norm<T>(e1);
  m.enc3 = make_conv<T>(e1, e2, ek, 2, ek / 2, 1, false, rng);
  m.ebn3 = make_batch_norm<T>(e2);
  m.dec1 = make_conv_transpose<T>(e2, e1, dk, 2, (dk - 2) / 2, false, rng);
  m.dbn1 = make_batch_norm<T>(e1);
  m.dec2 = make_conv_transpose<T>(e1, e0, dk, 2, (dk - 2) / 2, false, rng);
  m.dbn2 = make_batch_norm<T>(e0);
  m.dec3 = make_conv_transpose<T>(e0, 2, dk, 2, (dk - 2) / 2, true, rng);
  return m;
}

template <class T>
ValueT<T> refinement_forward(TapeT<T>& tape, RefinementModelT<T>& model, const ValueT<T>& x,
                             bool training) {
  require(x.tensor.rank() == 4, Errc::shape_mismatch, "refinement: input must be rank 4");
  require(x.tensor.dim(1) == model.config.input_channels(), Errc::shape_mismatch,
          "refinement: wrong input channel count");
  const int h = x.tensor.dim(2), w = x.tensor.dim(3);
  const int ph = (8 - h % 8) % 8, pw = (8 - w % 8) % 8;
  ValueT<T> in = x;
  if (ph != 0 || pw != 0) in = tape.zero_pad2d(x, 0, ph, 0, pw);

  ValueT<T> e1 = tape.relu(bn_forward(tape, model.ebn1, conv_forward(tape, model.enc1, in), training));
  ValueT<T> e2 = tape.relu(bn_forward(tape, model.ebn2, conv_forward(tape, model.enc2, e1), training));
  ValueT<T> e3 = tape.relu(bn_forward(tape, model.ebn3, conv_forward(tape, model.enc3, e2), training));

  ValueT<T> d1 = bn_forward(tape, model.dbn1, conv_forward(tape, model.dec1, e3), training);
  if (model.config.skip_fusion) d1 = tape.add(d1, e2);
  d1 = tape.relu(d1);
  ValueT<T> d2 = bn_forward(tape, model.dbn2, conv_forward(tape, model.dec2, d1), training);
  if (model.config.skip_fusion) d2 = tape.add(d2, e1);
  d2 = tape.relu(d2);
  ValueT<T> out = conv_forward(tape, model.dec3, d2);

  if (ph != 0 || pw != 0) out = tape.crop2d(out, 0, 0, h, w);
  model.refine_passes += x.tensor.dim(0);
  return out;
}

Tensor assemble_refinement_input(const RefinementConfig& cfg, const ScoreStack& stack) {
  const int win = cfg.window();
  require(static_cast<int>(stack.scores.size()) == win, Errc::shape_mismatch,
          "refinement: need exactly 2n+1 score maps");
  Tape tape;
  tape.set_recording(false);
  std::vector<ValueT<float>> parts;
  for (const Tensor& s : stack.scores) {
    require(s.rank() == 4 && s.dim(0) == 1 && s.dim(1) == 2, Errc::shape_mismatch,
            "refinement: score maps must be [1,2,H,W]");
    require(s.dim(2) == stack.scores[0].dim(2) && s.dim(3) == stack.scores[0].dim(3),
            Errc::shape_mismatch, "refinement: score map sizes differ inside the stack");
    parts.push_back(tape.constant(s));
  }
  if (cfg.guidance) {
    require(static_cast<int>(stack.guidance.size()) == win, Errc::shape_mismatch,
            "refinement: need exactly 2n+1 guidance frames");
    const int from = cfg.center_only_guidance ? stack.center_index : 0;
    const int to = cfg.center_only_guidance ? stack.center_index + 1 : win;
    for (int j = from; j < to; ++j) {
      const Tensor& g = stack.guidance[static_cast<std::size_t>(j)];
      require(g.rank() == 4 && g.dim(0) == 1 && g.dim(1) == 3, Errc::shape_mismatch,
              "refinement: guidance frames must be [1,3,H,W]");
      require(g.dim(2) == stack.scores[0].dim(2) && g.dim(3) == stack.scores[0].dim(3),
              Errc::shape_mismatch, "refinement: guidance size differs from scores");
      parts.push_back(tape.constant(g));
    }
  }
  return tape.concat_channels(parts).tensor;
}

Tensor refine(const RefinementModel& model, const ScoreStack& stack) {
  auto& m = const_cast<RefinementModel&>(model);
  Tensor in = assemble_refinement_input(m.config, stack);
  Tape tape;
  tape.set_recording(false);
  return refinement_forward(tape, m, tape.constant(in), false).tensor;
}

template <class T>
void visit_params(RefinementModelT<T>& m, const std::string& prefix, const ParamFn<T>& fn) {
  visit_params(m.enc1, prefix + "enc1", fn);
  visit_params(m.ebn1, prefix + "ebn1", fn);
  visit_params(m.enc2, prefix + "enc2", fn);
  visit_params(m.ebn2, prefix + "ebn2", fn);
  visit_params(m.enc3, prefix + "enc3", fn);
  visit_params(m.ebn3, prefix + "ebn3", fn);
  visit_params(m.dec1, prefix + "dec1", fn);
  visit_params(m.dbn1, prefix + "dbn1", fn);
  visit_params(m.dec2, prefix + "dec2", fn);
  visit_params(m.dbn2, prefix + "dbn2", fn);
  visit_params(m.dec3, prefix + "dec3", fn);
}

template <class T>
void visit_buffers(RefinementModelT<T>& m, const std::string& prefix, const BufferFn<T>& fn) {
  visit_buffers(m.ebn1, prefix + "ebn1", fn);
  visit_buffers(m.ebn2, prefix + "ebn2", fn);
  visit_buffers(m.ebn3, prefix + "ebn3", fn);
  visit_buffers(m.dbn1, prefix + "dbn1", fn);
  visit_buffers(m.dbn2, prefix + "dbn2", fn);
}

template <class U, class T>
RefinementModelT<U> cast_refinement(const RefinementModelT<T>& m) {
  RefinementModelT<U> o;
  o.config = m.config;
  o.enc1 = cast_layer<U>(m.enc1);
  o.ebn1 = cast_layer<U>(m.ebn1);
  o.enc2 = cast_layer<U>(m.enc2);
  o.ebn2 = cast_layer<U>(m.ebn2);
  o.enc3 = cast_layer<U>(m.enc3);
  o.ebn3 = cast_layer<U>(m.ebn3);
  o.dec1 = cast_layer<U>(m.dec1);
  o.dbn1 = cast_layer<U>(m.dbn1);
  o.dec2 = cast_layer<U>(m.dec2);
  o.dbn2 = cast_layer<U>(m.dbn2);
  o.dec3 = cast_layer<U>(m.dec3);
  return o;
}

#define BGCUT_INSTANTIATE_REFINE(T)                                                            \
  template RefinementModelT<T> build_refinement<T>(const RefinementConfig&, std::uint64_t);    \
  template ValueT<T> refinement_forward<T>(TapeT<T>&, RefinementModelT<T>&, const ValueT<T>&,  \
                                           bool);                                              \
  template void visit_params<T>(RefinementModelT<T>&, const std::string&, const ParamFn<T>&);  \
  template void visit_buffers<T>(RefinementModelT<T>&, const std::string&, const BufferFn<T>&);

BGCUT_INSTANTIATE_REFINE(float)
BGCUT_INSTANTIATE_REFINE(double)

template RefinementModelT<double> cast_refinement<double, float>(const RefinementModelT<float>&);

}  // namespace bgcut
