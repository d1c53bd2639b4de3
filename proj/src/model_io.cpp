#include "bgcut/model_io.hpp"

#include "json.hpp"

namespace bgcut {

namespace {

using nlohmann::json;

json config_to_json(const BackboneConfig& c) {
  return json{{"in_channels", c.in_channels},
              {"stem_channels", c.stem_channels},
              {"stage_channels", c.stage_channels},
              {"blocks_per_stage", c.blocks_per_stage},
              {"output_stride", c.output_stride},
              {"dilation_per_stage", c.dilation_per_stage},
              {"input_hint", {c.input_hint_h, c.input_hint_w}}};
}

BackboneConfig config_from_json(const json& j) {
  BackboneConfig c;
  c.in_channels = j.at("in_channels");
  c.stem_channels = j.at("stem_channels");
  c.stage_channels = j.at("stage_channels");
  c.blocks_per_stage = j.at("blocks_per_stage");
  c.output_stride = j.at("output_stride");
  c.dilation_per_stage = j.at("dilation_per_stage");
  c.input_hint_h = j.at("input_hint")[0];
  c.input_hint_w = j.at("input_hint")[1];
  return c;
}

json widths_to_json(const BackboneWidths& w) {
  return json{{"stem", w.stem}, {"block_mid", w.block_mid}, {"stage_out", w.stage_out}};
}

BackboneWidths widths_from_json(const json& j) {
  BackboneWidths w;
  w.stem = j.at("stem");
  w.block_mid = j.at("block_mid");
  w.stage_out = j.at("stage_out");
  return w;
}

json refinement_config_to_json(const RefinementConfig& c) {
  return json{{"n", c.n},
              {"encoder_channels", c.encoder_channels},
              {"encoder_kernel", c.encoder_kernel},
              {"decoder_kernel", c.decoder_kernel},
              {"guidance", c.guidance},
              {"center_only_guidance", c.center_only_guidance},
              {"skip_fusion", c.skip_fusion}};
}

RefinementConfig refinement_config_from_json(const json& j) {
  RefinementConfig c;
  c.n = j.at("n");
  c.encoder_channels = j.at("encoder_channels");
  c.encoder_kernel = j.at("encoder_kernel");
  c.decoder_kernel = j.at("decoder_kernel");
  c.guidance = j.at("guidance");
  c.center_only_guidance = j.at("center_only_guidance");
  c.skip_fusion = j.at("skip_fusion");
  return c;
}

template <class M>
void params_to_store(M& model, const std::string& prefix, TensorStore& store) {
  visit_params<float>(model, prefix, [&](const std::string& name, Variable& v) {
    store.put_f32(name, v.value);
  });
  visit_buffers<float>(model, prefix, [&](const std::string& name, Tensor& t) {
    store.put_f32(name, t);
  });
}

template <class M>
void params_from_store(M& model, const std::string& prefix, const TensorStore& store) {
  visit_params<float>(model, prefix, [&](const std::string& name, Variable& v) {
    v = Variable(store.get_f32_shaped(name, v.value.shape()));
  });
  visit_buffers<float>(model, prefix, [&](const std::string& name, Tensor& t) {
    Tensor loaded = store.get_f32(name);
    require(loaded.same_shape(t), Errc::shape_mismatch,
            "checkpoint: buffer shape mismatch for " + name);
    t = loaded;
  });
}

TensorT<int> kept_to_tensor(const std::vector<int>& kept) {
  return TensorT<int>::from_data({static_cast<int>(kept.size())}, std::vector<int>(kept));
}

void backbone_kept_to_store(Backbone& net, const std::string& prefix, TensorStore& store) {
  visit_convs<float>(net, prefix, [&](const std::string& name, ConvLayer& l) {
    store.put_i32(name + ".kept", kept_to_tensor(l.kept_out));
  });
}

void backbone_kept_from_store(Backbone& net, const std::string& prefix, const TensorStore& store) {
  visit_convs<float>(net, prefix, [&](const std::string& name, ConvLayer& l) {
    if (!store.contains(name + ".kept")) return;
    TensorT<int> t = store.get_i32(name + ".kept");
    l.kept_out.assign(t.data(), t.data() + t.size());
  });
}

json meta_of(const TensorStore& store) {
  require(store.contains("__meta__"), Errc::invalid_argument, "checkpoint: missing __meta__");
  const auto bytes = store.get_bytes("__meta__");
  return json::parse(bytes.begin(), bytes.end());
}

void put_meta(TensorStore& store, const json& j) {
  const std::string s = j.dump();
  store.put_bytes("__meta__", std::vector<std::uint8_t>(s.begin(), s.end()));
}

}  // namespace

void stage1_to_store(Stage1Model& m, TensorStore& store) {
  json meta{{"kind", "stage1"},
            {"backbone", config_to_json(m.backbone.config)},
            {"widths", widths_to_json(widths_of(m.backbone))}};
  put_meta(store, meta);
  params_to_store(m, "", store);
  backbone_kept_to_store(m.backbone, "backbone.", store);
}

Stage1Model stage1_from_store(const TensorStore& store) {
  const json meta = meta_of(store);
  require(meta.at("kind") == "stage1", Errc::invalid_argument,
          "checkpoint: expected a stage1 model");
  Stage1Model m;
  m.backbone = build_backbone_with_widths<float>(config_from_json(meta.at("backbone")),
                                                 widths_from_json(meta.at("widths")), 0);
  Rng rng(0);
  m.head = make_conv<float>(m.backbone.out_channels(), 2, 1, 1, 0, 1, true, rng);
  params_from_store(m, "", store);
  backbone_kept_from_store(m.backbone, "backbone.", store);
  return m;
}

void stage2_to_store(AttenuationModel& attn, RefinementModel& refine, TensorStore& store) {
  json meta{{"kind", "stage2"},
            {"backbone", config_to_json(attn.main_backbone.config)},
            {"main_widths", widths_to_json(widths_of(attn.main_backbone))},
            {"bg_widths", widths_to_json(widths_of(attn.bg_backbone))},
            {"seg_channels", attn.seg_channels()},
            {"use_attenuation", attn.attn.use_attenuation},
            {"refinement", refinement_config_to_json(refine.config)}};
  put_meta(store, meta);
  params_to_store(attn, "", store);
  backbone_kept_to_store(attn.main_backbone, "main.", store);
  backbone_kept_to_store(attn.bg_backbone, "bg.", store);
  params_to_store(refine, "refine.", store);
}

Stage2Checkpoint stage2_from_store(const TensorStore& store) {
  const json meta = meta_of(store);
  require(meta.at("kind") == "stage2", Errc::invalid_argument,
          "checkpoint: expected a stage2 model");
  Stage2Checkpoint out;
  const BackboneConfig cfg = config_from_json(meta.at("backbone"));
  out.attn.attn.use_attenuation = meta.at("use_attenuation");
  out.attn.attn.seg_channels = meta.at("seg_channels");
  out.attn.main_backbone =
      build_backbone_with_widths<float>(cfg, widths_from_json(meta.at("main_widths")), 0);
  out.attn.bg_backbone =
      build_backbone_with_widths<float>(cfg, widths_from_json(meta.at("bg_widths")), 0);
  Rng rng(0);
  const int feat = out.attn.main_backbone.out_channels();
  const int seg_ch = out.attn.attn.seg_channels > 0 ? out.attn.attn.seg_channels : feat;
  out.attn.seg_conv = make_conv<float>(feat, seg_ch, 3, 1, 1, 1, false, rng);
  out.attn.seg_bn = make_batch_norm<float>(seg_ch);
  const int cls_in =
      seg_ch + (out.attn.attn.use_attenuation ? out.attn.bg_backbone.out_channels() : 0);
  out.attn.classifier = make_conv<float>(cls_in, 2, 1, 1, 0, 1, true, rng);
  params_from_store(out.attn, "", store);
  backbone_kept_from_store(out.attn.main_backbone, "main.", store);
  backbone_kept_from_store(out.attn.bg_backbone, "bg.", store);

  out.refine = build_refinement<float>(refinement_config_from_json(meta.at("refinement")), 0);
  params_from_store(out.refine, "refine.", store);
  return out;
}

void save_stage1(Stage1Model& m, const std::string& path) {
  TensorStore store;
  stage1_to_store(m, store);
  store.save(path);
}

Stage1Model load_stage1(const std::string& path) {
  return stage1_from_store(TensorStore::load(path));
}

void save_stage2(AttenuationModel& attn, RefinementModel& refine, const std::string& path) {
  TensorStore store;
  stage2_to_store(attn, refine, store);
  store.save(path);
}

Stage2Checkpoint load_stage2(const std::string& path) {
  return stage2_from_store(TensorStore::load(path));
}

std::string checkpoint_kind(const std::string& path) {
  return meta_of(TensorStore::load(path)).at("kind");
}

}  // namespace bgcut
