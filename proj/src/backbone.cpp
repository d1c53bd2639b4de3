#include "bgcut/backbone.hpp"

#include <zlib.h>

namespace bgcut {

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::full() {
  BackboneConfig c;
  c.stem_channels = 64;
  c.stage_channels = {64, 128, 256, 512};
  return c;
}

std::array<int, 4> BackboneConfig::stage_strides() const {
  return {1, 2, 2, output_stride == 8 ? 1 : 2};
}

std::array<int, 4> BackboneConfig::stage_dilations() const {
  std::array<int, 4> d = dilation_per_stage;
  if (d == std::array<int, 4>{0, 0, 0, 0}) {
    d = output_stride == 8 ? std::array<int, 4>{1, 1, 1, 2} : std::array<int, 4>{1, 1, 1, 1};
  }
  return d;
}

void BackboneConfig::validate() const {
  require(output_stride == 8 || output_stride == 16, Errc::invalid_argument,
          "output_stride must be 8 or 16");
  require(in_channels >= 1 && stem_channels >= 1, Errc::invalid_argument,
          "channel counts must be >= 1");
  for (int i = 0; i < 4; ++i) {
    require(stage_channels[static_cast<std::size_t>(i)] >= 1, Errc::invalid_argument,
            "channel counts must be >= 1");
    require(blocks_per_stage[static_cast<std::size_t>(i)] >= 1, Errc::invalid_argument,
            "each stage needs at least one block");
  }
  for (int d : stage_dilations())
    require(d >= 1, Errc::invalid_argument, "dilations must be >= 1");
}

BackboneWidths default_widths(const BackboneConfig& cfg) {
  BackboneWidths w;
  w.stem = cfg.stem_channels;
  for (int s = 0; s < 4; ++s) {
    w.stage_out[static_cast<std::size_t>(s)] = cfg.stage_channels[static_cast<std::size_t>(s)];
    w.block_mid[static_cast<std::size_t>(s)].assign(
        static_cast<std::size_t>(cfg.blocks_per_stage[static_cast<std::size_t>(s)]),
        cfg.stage_channels[static_cast<std::size_t>(s)]);
  }
  return w;
}

template <class T>
BackboneT<T> build_backbone_with_widths(const BackboneConfig& cfg, const BackboneWidths& widths,
                                        std::uint64_t seed) {
  cfg.validate();
  require(widths.stem >= 1, Errc::invalid_argument, "stem width must be >= 1");
  Rng rng(seed);
  BackboneT<T> net;
  net.config = cfg;
  net.stem = make_conv<T>(cfg.in_channels, widths.stem, 3, 2, 1, 1, false, rng);
  net.stem_bn = make_batch_norm<T>(widths.stem);

  const auto strides = cfg.stage_strides();
  const auto dils = cfg.stage_dilations();
  int in_ch = widths.stem;
  for (int s = 0; s < 4; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const int out_ch = widths.stage_out[su];
    const int dil = dils[su];
    const int nblocks = cfg.blocks_per_stage[su];
    require(static_cast<int>(widths.block_mid[su].size()) == nblocks, Errc::invalid_argument,
            "widths.block_mid must list one entry per block");
    for (int b = 0; b < nblocks; ++b) {
      const int stride = b == 0 ? strides[su] : 1;
      const int mid = widths.block_mid[su][static_cast<std::size_t>(b)];
      require(mid >= 1, Errc::invalid_argument, "block width must be >= 1");
      BasicBlockT<T> blk;
      blk.conv1 = make_conv<T>(in_ch, mid, 3, stride, dil, dil, false, rng);
      blk.bn1 = make_batch_norm<T>(mid);
      blk.conv2 = make_conv<T>(mid, out_ch, 3, 1, dil, dil, false, rng);
      blk.bn2 = make_batch_norm<T>(out_ch);
      if (stride != 1 || in_ch != out_ch) {
        blk.proj = make_conv<T>(in_ch, out_ch, 1, stride, 0, 1, false, rng);
        blk.proj_bn = make_batch_norm<T>(out_ch);
      }
      net.stages[su].push_back(std::move(blk));
      in_ch = out_ch;
    }
  }
  return net;
}

template <class T>
BackboneT<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  return build_backbone_with_widths<T>(cfg, default_widths(cfg), seed);
}

template <class T>
ValueT<T> backbone_forward(TapeT<T>& tape, BackboneT<T>& net, const ValueT<T>& x, bool training) {
  ValueT<T> h = conv_bn_relu(tape, net.stem, net.stem_bn, x, training);
  for (auto& stage : net.stages) {
    for (auto& blk : stage) {
      ValueT<T> shortcut = h;
      if (blk.has_proj()) {
        shortcut = bn_forward(tape, *blk.proj_bn, conv_forward(tape, *blk.proj, h), training);
      }
      ValueT<T> y = conv_bn_relu(tape, blk.conv1, blk.bn1, h, training);
      y = bn_forward(tape, blk.bn2, conv_forward(tape, blk.conv2, y), training);
      h = tape.relu(tape.add(y, shortcut));
    }
  }
  return h;
}

template <class T>
void visit_params(BackboneT<T>& net, const std::string& prefix, const ParamFn<T>& fn) {
  visit_params(net.stem, prefix + "stem.conv", fn);
  visit_params(net.stem_bn, prefix + "stem.bn", fn);
  for (int s = 0; s < 4; ++s) {
    auto& stage = net.stages[static_cast<std::size_t>(s)];
    for (int b = 0; b < static_cast<int>(stage.size()); ++b) {
      const std::string base = prefix + "s" + std::to_string(s + 1) + ".b" + std::to_string(b) + ".";
      auto& blk = stage[static_cast<std::size_t>(b)];
      visit_params(blk.conv1, base + "conv1", fn);
      visit_params(blk.bn1, base + "bn1", fn);
      visit_params(blk.conv2, base + "conv2", fn);
      visit_params(blk.bn2, base + "bn2", fn);
      if (blk.has_proj()) {
        visit_params(*blk.proj, base + "proj", fn);
        visit_params(*blk.proj_bn, base + "proj_bn", fn);
      }
    }
  }
}

template <class T>
void visit_buffers(BackboneT<T>& net, const std::string& prefix, const BufferFn<T>& fn) {
  visit_buffers(net.stem_bn, prefix + "stem.bn", fn);
  for (int s = 0; s < 4; ++s) {
    auto& stage = net.stages[static_cast<std::size_t>(s)];
    for (int b = 0; b < static_cast<int>(stage.size()); ++b) {
      const std::string base = prefix + "s" + std::to_string(s + 1) + ".b" + std::to_string(b) + ".";
      auto& blk = stage[static_cast<std::size_t>(b)];
      visit_buffers(blk.bn1, base + "bn1", fn);
      visit_buffers(blk.bn2, base + "bn2", fn);
      if (blk.has_proj()) visit_buffers(*blk.proj_bn, base + "proj_bn", fn);
    }
  }
}

template <class T>
void visit_convs(BackboneT<T>& net, const std::string& prefix, const ConvFn<T>& fn) {
  fn(prefix + "stem.conv", net.stem);
  for (int s = 0; s < 4; ++s) {
    auto& stage = net.stages[static_cast<std::size_t>(s)];
    for (int b = 0; b < static_cast<int>(stage.size()); ++b) {
      const std::string base = prefix + "s" + std::to_string(s + 1) + ".b" + std::to_string(b) + ".";
      auto& blk = stage[static_cast<std::size_t>(b)];
      fn(base + "conv1", blk.conv1);
      fn(base + "conv2", blk.conv2);
      if (blk.has_proj()) fn(base + "proj", *blk.proj);
    }
  }
}

template <class T>
std::int64_t count_params(BackboneT<T>& net) {
  std::int64_t total = 0;
  visit_params<T>(net, "", [&](const std::string&, VariableT<T>& v) { total += v.value.size(); });
  return total;
}

template <class T>
BackboneWidths widths_of(const BackboneT<T>& net) {
  BackboneWidths w;
  w.stem = net.stem.out_channels();
  for (int s = 0; s < 4; ++s) {
    const auto su = static_cast<std::size_t>(s);
    for (const auto& blk : net.stages[su]) w.block_mid[su].push_back(blk.conv1.out_channels());
    w.stage_out[su] = net.stages[su].back().conv2.out_channels();
  }
  return w;
}

template <class T>
void validate_channels(const BackboneT<T>& net) {
  auto check = [](bool ok, const char* what) { require(ok, Errc::shape_mismatch, what); };
  check(net.stem.out_channels() == net.stem_bn.channels(), "stem bn width");
  int in_ch = net.stem.out_channels();
  for (const auto& stage : net.stages) {
    check(!stage.empty(), "empty stage");
    for (const auto& blk : stage) {
      check(blk.conv1.in_channels() == in_ch, "conv1 input channels");
      check(blk.conv1.out_channels() == blk.bn1.channels(), "bn1 width");
      check(blk.conv2.in_channels() == blk.conv1.out_channels(), "conv2 input channels");
      check(blk.conv2.out_channels() == blk.bn2.channels(), "bn2 width");
      const int out_ch = blk.conv2.out_channels();
      if (blk.has_proj()) {
        check(blk.proj->in_channels() == in_ch, "proj input channels");
        check(blk.proj->out_channels() == out_ch, "proj vs conv2 output channels");
        check(blk.proj_bn->channels() == out_ch, "proj bn width");
      } else {
        // Identity shortcut: both legs of the add must already agree.
        check(in_ch == out_ch, "identity shortcut channels");
      }
      in_ch = out_ch;
    }
  }
}

template <class U, class T>
BackboneT<U> cast_backbone(const BackboneT<T>& net) {
  BackboneT<U> o;
  o.config = net.config;
  o.stem = cast_layer<U>(net.stem);
  o.stem_bn = cast_layer<U>(net.stem_bn);
  for (int s = 0; s < 4; ++s) {
    const auto su = static_cast<std::size_t>(s);
    for (const auto& blk : net.stages[su]) {
      BasicBlockT<U> nb;
      nb.conv1 = cast_layer<U>(blk.conv1);
      nb.bn1 = cast_layer<U>(blk.bn1);
      nb.conv2 = cast_layer<U>(blk.conv2);
      nb.bn2 = cast_layer<U>(blk.bn2);
      if (blk.has_proj()) {
        nb.proj = cast_layer<U>(*blk.proj);
        nb.proj_bn = cast_layer<U>(*blk.proj_bn);
      }
      o.stages[su].push_back(std::move(nb));
    }
  }
  return o;
}

std::uint32_t backbone_fingerprint(Backbone& net) {
  uLong crc = crc32(0L, Z_NULL, 0);
  visit_params<float>(net, "", [&](const std::string& name, Variable& v) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()),
                static_cast<uInt>(name.size()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(v.value.data()),
                static_cast<uInt>(sizeof(float) * static_cast<std::size_t>(v.value.size())));
  });
  return static_cast<std::uint32_t>(crc);
}

#define BGCUT_INSTANTIATE_BACKBONE(T)                                                          \
  template BackboneT<T> build_backbone<T>(const BackboneConfig&, std::uint64_t);               \
  template BackboneT<T> build_backbone_with_widths<T>(const BackboneConfig&,                   \
                                                      const BackboneWidths&, std::uint64_t);   \
  template ValueT<T> backbone_forward<T>(TapeT<T>&, BackboneT<T>&, const ValueT<T>&, bool);    \
  template void visit_params<T>(BackboneT<T>&, const std::string&, const ParamFn<T>&);         \
  template void visit_buffers<T>(BackboneT<T>&, const std::string&, const BufferFn<T>&);       \
  template void visit_convs<T>(BackboneT<T>&, const std::string&, const ConvFn<T>&);           \
  template std::int64_t count_params<T>(BackboneT<T>&);                                        \
  template BackboneWidths widths_of<T>(const BackboneT<T>&);                                   \
  template void validate_channels<T>(const BackboneT<T>&);

BGCUT_INSTANTIATE_BACKBONE(float)
BGCUT_INSTANTIATE_BACKBONE(double)

template BackboneT<double> cast_backbone<double, float>(const BackboneT<float>&);
template BackboneT<float> cast_backbone<float, double>(const BackboneT<double>&);
// float-to-float cast doubles as a deep copy with fresh gradients
template BackboneT<float> cast_backbone<float, float>(const BackboneT<float>&);

}  // namespace bgcut
