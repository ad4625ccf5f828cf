#include "agra/features.hpp"

#include <cmath>
#include <map>

#include "agra/core/error.hpp"

namespace agra {

namespace {

using FactoryMap = std::map<std::string, std::function<std::unique_ptr<Backbone>(const Config&)>>;

FactoryMap& factories() {
  static FactoryMap m = [] {
    FactoryMap f;
    f["toy"] = [](const Config& cfg) -> std::unique_ptr<Backbone> { return std::make_unique<ToyBackbone>(cfg); };
    for (const char* id : {"resnet50", "resnet18", "mobilenetv2"}) {
      f[id] = [id](const Config&) -> std::unique_ptr<Backbone> {
        throw ConfigError(std::string("backbone '") + id +
                          "' is an external-runtime stub: this build bundles only 'toy'. Register a factory via "
                          "register_backbone() to plug a full-size backbone in.");
      };
    }
    return f;
  }();
  return m;
}

}  // namespace

std::unique_ptr<Backbone> create_backbone(const std::string& id, const Config& cfg) {
  auto it = factories().find(id);
  if (it == factories().end()) throw ConfigError("unknown backbone id '" + id + "'");
  return it->second(cfg);
}

void register_backbone(const std::string& id, std::function<std::unique_ptr<Backbone>(const Config&)> factory) {
  factories()[id] = std::move(factory);
}

std::vector<std::string> registered_backbones() {
  std::vector<std::string> ids;
  for (const auto& [k, v] : factories()) ids.push_back(k);
  return ids;
}

ToyBackbone::ToyBackbone(const Config& cfg)
    : conv1_w("backbone.conv1.w", Tensor({8, 3, 3, 3})),
      conv1_b("backbone.conv1.b", Tensor({8})),
      conv2_w("backbone.conv2.w", Tensor({128, 8, 3, 3})),
      conv2_b("backbone.conv2.b", Tensor({128})),
      conv3_w("backbone.conv3.w", Tensor({16, 128, 1, 1})),
      conv3_b("backbone.conv3.b", Tensor({16})),
      conv4_w("backbone.conv4.w", Tensor({512, 16, 1, 1})),
      conv4_b("backbone.conv4.b", Tensor({512})) {
  norm_mean_ = cfg.get_double_list("backbone.norm_mean");
  norm_std_ = cfg.get_double_list("backbone.norm_std");
  if (!norm_mean_.empty() && norm_mean_.size() != 3) throw ConfigError("backbone.norm_mean needs 3 values");
  if (!norm_std_.empty() && norm_std_.size() != 3) throw ConfigError("backbone.norm_std needs 3 values");
}

BackboneVarOutput ToyBackbone::run(const Tensor& images, ad::Tape& tape) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kImageSize || images.dim(3) != kImageSize)
    throw ValidationError("backbone: expected [N,3,112,112] input, got " + images.shape_str());

  Tensor x = images;
  if (!norm_mean_.empty() || !norm_std_.empty()) {
    int n = x.dim(0);
    int64_t sp = static_cast<int64_t>(kImageSize) * kImageSize;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        double m = norm_mean_.empty() ? 0.0 : norm_mean_[static_cast<size_t>(c)];
        double s = norm_std_.empty() ? 1.0 : norm_std_[static_cast<size_t>(c)];
        double* p = x.data() + (static_cast<int64_t>(i) * 3 + c) * sp;
        for (int64_t j = 0; j < sp; ++j) p[j] = (p[j] - m) / s;
      }
  }

  ad::Var h = ad::constant(std::move(x));
  h = ad::relu(ad::conv2d(h, tape(conv1_w), tape(conv1_b), 2, 1));  // [N,8,56,56]
  ad::Var s2 = ad::relu(ad::conv2d(h, tape(conv2_w), tape(conv2_b), 2, 1));  // [N,128,28,28]
  h = ad::relu(ad::conv2d(s2, tape(conv3_w), tape(conv3_b), 2, 0));  // [N,16,14,14]
  ad::Var s4 = ad::relu(ad::conv2d(h, tape(conv4_w), tape(conv4_b), 2, 0));  // [N,512,7,7]
  return {s2, s4};
}

std::vector<Param*> ToyBackbone::params() {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &conv3_w, &conv3_b, &conv4_w, &conv4_b};
}

void ToyBackbone::init_params(Rng& rng) {
  init_he_uniform(conv1_w, 3 * 3 * 3, rng);
  init_he_uniform(conv2_w, 8 * 3 * 3, rng);
  init_he_uniform(conv3_w, 128, rng);
  init_he_uniform(conv4_w, 16, rng);
  conv1_b.value.fill(0.0);
  conv2_b.value.fill(0.0);
  conv3_b.value.fill(0.0);
  conv4_b.value.fill(0.0);
}

RegionHeads::RegionHeads(const Config& cfg) {
  holistic_kernel_ = static_cast<int>(cfg.get_int("features.holistic_kernel"));
  if (holistic_kernel_ < 1 || holistic_kernel_ % 2 == 0 || holistic_kernel_ > 7)
    throw ConfigError("features.holistic_kernel must be an odd size in [1,7]");
  share_ = cfg.get_bool("features.share_local_heads");
  holistic_w = Param("heads.h.w", Tensor({64, 512, holistic_kernel_, holistic_kernel_}));
  holistic_b = Param("heads.h.b", Tensor({64}));
  int locals = share_ ? 1 : 5;
  for (int i = 0; i < locals; ++i) {
    std::string base = share_ ? std::string("heads.local") : std::string("heads.") + region_name(static_cast<Region>(i + 1));
    local_w[static_cast<size_t>(i)] = Param(base + ".w", Tensor({64, 128, 1, 1}));
    local_b[static_cast<size_t>(i)] = Param(base + ".b", Tensor({64}));
  }
}

// Both heads end in a per-sample layer norm. Conv-relu-pool chains on
// all-positive activations pile up a large common-mode offset that dwarfs
// the per-sample variation and stalls SGD; standardizing each descriptor
// keeps the 64-dim region vectors well conditioned for everything downstream.
ad::Var RegionHeads::holistic(const ad::Var& stage4, ad::Tape& tape) const {
  auto& self = const_cast<RegionHeads&>(*this);
  ad::Var h = ad::relu(ad::conv2d(stage4, tape(self.holistic_w), tape(self.holistic_b), 1, (holistic_kernel_ - 1) / 2));
  return ad::layer_norm_rows(ad::avg_pool_full(h));
}

ad::Var RegionHeads::local(const ad::Var& crops, Region region, ad::Tape& tape) const {
  if (region == Region::h) throw ValidationError("local head asked for the holistic region");
  auto& self = const_cast<RegionHeads&>(*this);
  size_t idx = share_ ? 0 : static_cast<size_t>(static_cast<int>(region) - 1);
  ad::Var h = ad::relu(ad::conv2d(crops, tape(self.local_w[idx]), tape(self.local_b[idx]), 1, 0));
  return ad::layer_norm_rows(ad::avg_pool_full(h));
}

std::vector<Param*> RegionHeads::params() {
  std::vector<Param*> ps = {&holistic_w, &holistic_b};
  int locals = share_ ? 1 : 5;
  for (int i = 0; i < locals; ++i) {
    ps.push_back(&local_w[static_cast<size_t>(i)]);
    ps.push_back(&local_b[static_cast<size_t>(i)]);
  }
  return ps;
}

void RegionHeads::init_params(Rng& rng) {
  int kk = holistic_kernel_ * holistic_kernel_;
  init_he_uniform(holistic_w, 512 * kk, rng);
  holistic_b.value.fill(0.0);
  int locals = share_ ? 1 : 5;
  for (int i = 0; i < locals; ++i) {
    init_he_uniform(local_w[static_cast<size_t>(i)], 128, rng);
    local_b[static_cast<size_t>(i)].value.fill(0.0);
  }
}

FusionHeads::FusionHeads()
    : bl_w("fusion.bl.w", Tensor({5 * kRegionDim, kRegionDim})),
      bl_b("fusion.bl.b", Tensor({kRegionDim})),
      bhl_w("fusion.bhl.w", Tensor({kFeatureDim, kRegionDim})),
      bhl_b("fusion.bhl.b", Tensor({kRegionDim})) {}

std::vector<Param*> FusionHeads::params() { return {&bl_w, &bl_b, &bhl_w, &bhl_b}; }

void FusionHeads::init_params(Rng& rng) {
  init_he_uniform(bl_w, 5 * kRegionDim, rng);
  init_he_uniform(bhl_w, kFeatureDim, rng);
  bl_b.value.fill(0.0);
  bhl_b.value.fill(0.0);
}

FusionMode fusion_mode_from(const std::string& name) {
  if (name == "BH" || name == "bh") return FusionMode::BH;
  if (name == "BL" || name == "bl") return FusionMode::BL;
  if (name == "BHL" || name == "bhl") return FusionMode::BHL;
  throw ConfigError("unknown fusion mode '" + name + "' (expected BH, BL, or BHL)");
}

CropWindow local_crop_window(const Point& p) {
  if (!(p.x >= 0.0 && p.x <= kImageSize - 1 && p.y >= 0.0 && p.y <= kImageSize - 1))
    throw ValidationError("landmark outside image bounds");
  auto center = [](double v) { return static_cast<int>(std::floor(v * 0.25 + 0.5)); };
  auto clamp = [](int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); };
  CropWindow w;
  w.r0 = clamp(center(p.y) - 3, 0, 28 - 7);
  w.c0 = clamp(center(p.x) - 3, 0, 28 - 7);
  return w;
}

Tensor RegionFeatureStack::concatenated() const {
  Tensor out({kFeatureDim});
  for (int r = 0; r < kNumRegions; ++r) {
    if (f[static_cast<size_t>(r)].size() != kRegionDim)
      throw ValidationError("region stack: vector " + std::string(region_name(static_cast<Region>(r))) +
                            " is not 64-dim");
    for (int j = 0; j < kRegionDim; ++j) out[static_cast<int64_t>(r) * kRegionDim + j] = f[static_cast<size_t>(r)][j];
  }
  return out;
}

RegionStackBatch extract_stack_batch(const Tensor& images, const std::vector<LandmarkSet>& landmarks,
                                     Backbone& backbone, const RegionHeads& heads, ad::Tape& tape) {
  int n = images.dim(0);
  if (static_cast<size_t>(n) != landmarks.size())
    throw ValidationError("extract_stack_batch: " + std::to_string(n) + " images vs " +
                          std::to_string(landmarks.size()) + " landmark sets");
  BackboneVarOutput maps = backbone.run(images, tape);

  RegionStackBatch out;
  out.f[0] = heads.holistic(maps.stage4, tape);
  for (int r = 1; r < kNumRegions; ++r) {
    std::vector<ad::Var> crops;
    crops.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      CropWindow w = local_crop_window(landmarks[static_cast<size_t>(i)].get(static_cast<Region>(r)));
      crops.push_back(ad::crop(maps.stage2, i, w.r0, w.c0, 7, 7));
    }
    out.f[static_cast<size_t>(r)] = heads.local(ad::stack(crops), static_cast<Region>(r), tape);
  }
  return out;
}

ad::Var fused_feature_var(const std::array<ad::Var, kNumRegions>& rows, FusionMode mode, const FusionHeads& fusion,
                          ad::Tape& tape) {
  auto& fu = const_cast<FusionHeads&>(fusion);
  switch (mode) {
    case FusionMode::BH:
      return rows[0];
    case FusionMode::BL: {
      std::vector<ad::Var> locals(rows.begin() + 1, rows.end());
      ad::Var cat = ad::reshape(ad::concat(locals), {1, 5 * kRegionDim});
      return ad::reshape(ad::relu(ad::add_rowvec(ad::matmul(cat, tape(fu.bl_w)), tape(fu.bl_b))), {kRegionDim});
    }
    case FusionMode::BHL: {
      std::vector<ad::Var> all(rows.begin(), rows.end());
      ad::Var cat = ad::reshape(ad::concat(all), {1, kFeatureDim});
      return ad::reshape(ad::relu(ad::add_rowvec(ad::matmul(cat, tape(fu.bhl_w)), tape(fu.bhl_b))), {kRegionDim});
    }
  }
  throw ConfigError("unknown fusion mode");
}

// ---- value-level wrappers ----------------------------------------------

namespace {

Tensor batch_of_one(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != kImageSize || image.dim(2) != kImageSize)
    throw ValidationError("expected [3,112,112] image, got " + image.shape_str());
  Tensor batch({1, 3, kImageSize, kImageSize});
  for (int64_t i = 0; i < image.size(); ++i) batch[i] = image[i];
  return batch;
}

Tensor drop_batch_dim(const Tensor& t) {
  std::vector<int> shape(t.shape().begin() + 1, t.shape().end());
  return Tensor::from(shape, std::vector<double>(t.data(), t.data() + t.size()));
}

}  // namespace

BackboneOutput run_backbone(const FaceSample& sample, Backbone& backbone) {
  ad::Tape tape(false);
  BackboneVarOutput maps = backbone.run(batch_of_one(sample.image), tape);
  return {drop_batch_dim(maps.stage2->value), drop_batch_dim(maps.stage4->value)};
}

Tensor extract_holistic(const Tensor& stage4_map, const RegionHeads& heads) {
  if (stage4_map.rank() != 3 || stage4_map.dim(0) != 512 || stage4_map.dim(1) != 7 || stage4_map.dim(2) != 7)
    throw ValidationError("extract_holistic: expected [512,7,7], got " + stage4_map.shape_str());
  ad::Tape tape(false);
  Tensor b({1, 512, 7, 7});
  for (int64_t i = 0; i < stage4_map.size(); ++i) b[i] = stage4_map[i];
  return drop_batch_dim(heads.holistic(ad::constant(std::move(b)), tape)->value);
}

Tensor crop_local_map(const Tensor& stage2_map, const Point& landmark) {
  if (stage2_map.rank() != 3 || stage2_map.dim(0) != 128 || stage2_map.dim(1) != 28 || stage2_map.dim(2) != 28)
    throw ValidationError("crop_local_map: expected [128,28,28], got " + stage2_map.shape_str());
  CropWindow w = local_crop_window(landmark);
  Tensor out({128, 7, 7});
  for (int c = 0; c < 128; ++c)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j)
        out[(static_cast<int64_t>(c) * 7 + i) * 7 + j] =
            stage2_map[(static_cast<int64_t>(c) * 28 + w.r0 + i) * 28 + w.c0 + j];
  return out;
}

Tensor extract_local(const Tensor& crop, Region region, const RegionHeads& heads) {
  if (crop.rank() != 3 || crop.dim(0) != 128 || crop.dim(1) != 7 || crop.dim(2) != 7)
    throw ValidationError("extract_local: expected [128,7,7], got " + crop.shape_str());
  ad::Tape tape(false);
  Tensor b({1, 128, 7, 7});
  for (int64_t i = 0; i < crop.size(); ++i) b[i] = crop[i];
  return drop_batch_dim(heads.local(ad::constant(std::move(b)), region, tape)->value);
}

RegionFeatureStack extract_region_stack(const FaceSample& sample, Backbone& backbone, const RegionHeads& heads) {
  sample.landmarks.validate();
  ad::Tape tape(false);
  RegionStackBatch batch = extract_stack_batch(batch_of_one(sample.image), {sample.landmarks}, backbone, heads, tape);
  RegionFeatureStack stack;
  stack.domain = sample.domain;
  for (int r = 0; r < kNumRegions; ++r) stack.f[static_cast<size_t>(r)] = drop_batch_dim(batch.f[static_cast<size_t>(r)]->value);
  return stack;
}

Tensor fused_feature(const RegionFeatureStack& stack, FusionMode mode, const FusionHeads& fusion) {
  ad::Tape tape(false);
  std::array<ad::Var, kNumRegions> rows;
  for (int r = 0; r < kNumRegions; ++r) rows[static_cast<size_t>(r)] = ad::constant(stack.f[static_cast<size_t>(r)]);
  return fused_feature_var(rows, mode, fusion, tape)->value;
}

}  // namespace agra
