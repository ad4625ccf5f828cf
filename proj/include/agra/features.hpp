#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "agra/config.hpp"
#include "agra/core/autodiff.hpp"
#include "agra/data.hpp"

namespace agra {

// Value-level backbone output for one sample (channel-first storage of the
// 28x28x128 and 7x7x512 maps).
struct BackboneOutput {
  Tensor stage2_map;  // [128,28,28]
  Tensor stage4_map;  // [512,7,7]
};

// Graph-tracked batched output used by training.
struct BackboneVarOutput {
  ad::Var stage2;  // [N,128,28,28]
  ad::Var stage4;  // [N,512,7,7]
};

class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::string id() const = 0;
  // images: [N,3,112,112] in [0,1]. Binds parameters through the tape.
  virtual BackboneVarOutput run(const Tensor& images, ad::Tape& tape) = 0;
  virtual std::vector<Param*> params() = 0;
  virtual void init_params(Rng& rng) = 0;
};

// Registry keyed by string id. `toy` is bundled; resnet50 / resnet18 /
// mobilenetv2 are registered as external stubs that explain how to plug a
// real runtime in. Unknown ids raise ConfigError.
std::unique_ptr<Backbone> create_backbone(const std::string& id, const Config& cfg);
void register_backbone(const std::string& id, std::function<std::unique_ptr<Backbone>(const Config&)> factory);
std::vector<std::string> registered_backbones();

// Desk-scale 4-stage strided conv stack, ~20k parameters, emitting the
// exact stage shapes of the full-size backbones:
//   3 -> 8 (3x3 s2, 56x56) -> 128 (3x3 s2, 28x28) -> 16 (1x1 s2, 14x14)
//   -> 512 (1x1 s2, 7x7), rectifier after every stage.
class ToyBackbone : public Backbone {
 public:
  explicit ToyBackbone(const Config& cfg);
  std::string id() const override { return "toy"; }
  BackboneVarOutput run(const Tensor& images, ad::Tape& tape) override;
  std::vector<Param*> params() override;
  void init_params(Rng& rng) override;

  Param conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, conv4_w, conv4_b;

 private:
  std::vector<double> norm_mean_, norm_std_;
};

struct RegionFeatureStack {
  Domain domain = Domain::source;
  std::array<Tensor, kNumRegions> f;  // indexed by Region, each [64]

  Tensor concatenated() const;  // [384] in region order
};

// Batched tracked stack: one [N,64] matrix per region.
struct RegionStackBatch {
  std::array<ad::Var, kNumRegions> f;
};

// Holistic head (conv 512->64, kernel configurable, rectifier, global
// average pool) plus five local heads (conv 128->64 1x1, rectifier, pool).
// Local heads are per-region unless share_local_heads is set.
class RegionHeads {
 public:
  explicit RegionHeads(const Config& cfg);

  ad::Var holistic(const ad::Var& stage4, ad::Tape& tape) const;                 // [N,512,7,7] -> [N,64]
  ad::Var local(const ad::Var& crops, Region region, ad::Tape& tape) const;      // [K,128,7,7] -> [K,64]

  std::vector<Param*> params();
  void init_params(Rng& rng);
  bool shared_locals() const { return share_; }

  Param holistic_w, holistic_b;
  std::array<Param, 5> local_w, local_b;  // index = Region - 1; only [0] used when shared

 private:
  int holistic_kernel_;
  bool share_;
};

// Affine + rectifier fusion heads for the BL (320->64) and BHL (384->64)
// baseline feature modes.
class FusionHeads {
 public:
  FusionHeads();
  std::vector<Param*> params();
  void init_params(Rng& rng);

  Param bl_w, bl_b, bhl_w, bhl_b;
};

enum class FusionMode { BH, BL, BHL };
FusionMode fusion_mode_from(const std::string& name);

// 112x112 landmark -> top-left corner of the 7x7 window on the 28x28 map:
// scale by 0.25, round half up, clamp the full window inside the grid.
struct CropWindow {
  int r0 = 0, c0 = 0;
};
CropWindow local_crop_window(const Point& p);

// ---- value-level operations (inference / statistics paths) ------------

BackboneOutput run_backbone(const FaceSample& sample, Backbone& backbone);
Tensor extract_holistic(const Tensor& stage4_map, const RegionHeads& heads);
Tensor crop_local_map(const Tensor& stage2_map, const Point& landmark);
Tensor extract_local(const Tensor& crop, Region region, const RegionHeads& heads);
RegionFeatureStack extract_region_stack(const FaceSample& sample, Backbone& backbone, const RegionHeads& heads);
Tensor fused_feature(const RegionFeatureStack& stack, FusionMode mode, const FusionHeads& fusion);

// ---- batched tracked path (training) -----------------------------------

RegionStackBatch extract_stack_batch(const Tensor& images, const std::vector<LandmarkSet>& landmarks,
                                     Backbone& backbone, const RegionHeads& heads, ad::Tape& tape);

// Tracked fusion of per-sample region rows (used by the graph bypass modes).
ad::Var fused_feature_var(const std::array<ad::Var, kNumRegions>& rows, FusionMode mode, const FusionHeads& fusion,
                          ad::Tape& tape);

}  // namespace agra
