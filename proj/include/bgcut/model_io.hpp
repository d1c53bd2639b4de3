#pragma once

// Saving and loading complete models as single checkpoint files. Structural
// information (configs, channel widths, pruning provenance) travels in a
// JSON blob stored as the u8 tensor "__meta__"; parameters and batch-norm
// buffers are stored as named f32 tensors.

#include <string>

#include "bgcut/checkpoint.hpp"
#include "bgcut/refinement.hpp"
#include "bgcut/segmentation.hpp"

namespace bgcut {

struct Stage2Checkpoint {
  AttenuationModel attn;
  RefinementModel refine;
};

void stage1_to_store(Stage1Model& m, TensorStore& store);
Stage1Model stage1_from_store(const TensorStore& store);

void stage2_to_store(AttenuationModel& attn, RefinementModel& refine, TensorStore& store);
Stage2Checkpoint stage2_from_store(const TensorStore& store);

void save_stage1(Stage1Model& m, const std::string& path);
Stage1Model load_stage1(const std::string& path);

void save_stage2(AttenuationModel& attn, RefinementModel& refine, const std::string& path);
Stage2Checkpoint load_stage2(const std::string& path);

// "stage1" or "stage2" without reconstructing the model.
std::string checkpoint_kind(const std::string& path);

}  // namespace bgcut
