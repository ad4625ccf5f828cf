#include <doctest.h>

#include <cmath>

#include "agra/core/error.hpp"
#include "agra/features.hpp"
#include "agra/model.hpp"
#include "agra/toydata.hpp"
#include "testutil.hpp"

using namespace agra;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

FaceSample toy_face(int label, uint64_t seed, Domain domain = Domain::source) {
  ToySample t = render_toy_sample(label, domain, 0.8, seed);
  FaceSample s;
  s.id = "toy-" + std::to_string(seed);
  s.image = t.image;
  s.label = t.label;
  s.landmarks = t.landmarks;
  s.domain = domain;
  return s;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("crop window mapping from landmarks") {
    // scale 0.25, round half up, half-width 3, clamped into the 28-grid.
    CHECK(local_crop_window({56, 56}).r0 == 11);
    CHECK(local_crop_window({56, 56}).c0 == 11);
    CHECK(local_crop_window({0, 0}).r0 == 0);
    CHECK(local_crop_window({0, 0}).c0 == 0);
    CHECK(local_crop_window({111, 111}).r0 == 21);
    CHECK(local_crop_window({111, 111}).c0 == 21);
    // x maps to the column, y to the row.
    CropWindow w = local_crop_window({0, 111});
    CHECK(w.r0 == 21);
    CHECK(w.c0 == 0);
    // Rounding boundary: 6 * 0.25 + 0.5 = 2 exactly.
    CHECK(local_crop_window({6, 6}).r0 == 0);   // 2 - 3 clamps
    CHECK(local_crop_window({26, 26}).r0 == 4); // floor(7.0) - 3
  }

  TEST_CASE("toy backbone emits the contract stage shapes") {
    Config cfg = testutil::tiny_config();
    ToyBackbone bb(cfg);
    Rng rng(5);
    bb.init_params(rng);
    Tensor images({2, 3, kImageSize, kImageSize});
    ad::Tape tape(false);
    BackboneVarOutput out = bb.run(images, tape);
    CHECK(out.stage2->value.shape() == std::vector<int>{2, 128, 28, 28});
    CHECK(out.stage4->value.shape() == std::vector<int>{2, 512, 7, 7});
  }

  TEST_CASE("toy backbone initialization is seed deterministic") {
    Config cfg = testutil::tiny_config();
    ToyBackbone a(cfg), b(cfg);
    Rng r1(42), r2(42);
    a.init_params(r1);
    b.init_params(r2);
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(testutil::bitwise_equal(pa[i]->value, pb[i]->value));
  }

  TEST_CASE("zero weights produce zero feature stacks") {
    Config cfg = testutil::tiny_config();
    Model model(cfg);
    for (Param* p : model.feature_params()) p->value.fill(0.0);
    FaceSample s = toy_face(1, 7);
    RegionFeatureStack stack = extract_region_stack(s, *model.backbone, model.heads);
    CHECK(stack.concatenated().abs_max() == 0.0);
  }

  TEST_CASE("holistic head equals the conv-relu-pool-norm loop oracle") {
    Config cfg = testutil::tiny_config();
    RegionHeads heads(cfg);
    Rng rng(31);
    heads.init_params(rng);
    Tensor map = random_tensor({512, 7, 7}, rng, -0.2, 0.4);

    Tensor got = extract_holistic(map, heads);
    REQUIRE(got.shape() == std::vector<int>{64});
    const Tensor& w = heads.holistic_w.value;  // [64,512,1,1]
    const Tensor& b = heads.holistic_b.value;
    std::vector<double> pooled(64, 0.0);
    for (int o = 0; o < 64; ++o) {
      double pool = 0.0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          double acc = b[o];
          for (int c = 0; c < 512; ++c) acc += w.at({o, c, 0, 0}) * map.at({c, i, j});
          pool += std::max(0.0, acc);
        }
      pooled[static_cast<size_t>(o)] = pool / 49.0;
    }
    double mean = 0.0, var = 0.0;
    for (double v : pooled) mean += v;
    mean /= 64.0;
    for (double v : pooled) var += (v - mean) * (v - mean);
    var /= 64.0;
    for (int o = 0; o < 64; ++o)
      CHECK(got[o] == doctest::Approx((pooled[static_cast<size_t>(o)] - mean) / std::sqrt(var + 1e-5)).epsilon(1e-9));
  }

  TEST_CASE("local head equals the crop-conv-relu-pool-norm loop oracle") {
    Config cfg = testutil::tiny_config();
    RegionHeads heads(cfg);
    Rng rng(32);
    heads.init_params(rng);
    Tensor map = random_tensor({128, 28, 28}, rng, -0.3, 0.5);
    Point lm{40, 90};  // window rows 20..26, cols 7..13

    Tensor crop = crop_local_map(map, lm);
    REQUIRE(crop.shape() == std::vector<int>{128, 7, 7});
    CropWindow win = local_crop_window(lm);
    for (int c = 0; c < 128; ++c)
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) REQUIRE(crop.at({c, i, j}) == map.at({c, win.r0 + i, win.c0 + j}));

    Tensor got = extract_local(crop, Region::no, heads);
    const Tensor& w = heads.local_w[2].value;  // nose head: index Region::no - 1
    const Tensor& b = heads.local_b[2].value;
    std::vector<double> pooled(64, 0.0);
    for (int o = 0; o < 64; ++o) {
      double pool = 0.0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          double acc = b[o];
          for (int c = 0; c < 128; ++c) acc += w.at({o, c, 0, 0}) * crop.at({c, i, j});
          pool += std::max(0.0, acc);
        }
      pooled[static_cast<size_t>(o)] = pool / 49.0;
    }
    double mean = 0.0, var = 0.0;
    for (double v : pooled) mean += v;
    mean /= 64.0;
    for (double v : pooled) var += (v - mean) * (v - mean);
    var /= 64.0;
    for (int o = 0; o < 64; ++o)
      CHECK(got[o] == doctest::Approx((pooled[static_cast<size_t>(o)] - mean) / std::sqrt(var + 1e-5)).epsilon(1e-9));
  }

  TEST_CASE("local heads are per-region unless shared") {
    Config cfg = testutil::tiny_config();
    RegionHeads separate(cfg);
    Rng r1(33);
    separate.init_params(r1);
    CHECK_FALSE(separate.shared_locals());

    Rng rng(34);
    Tensor crop = random_tensor({128, 7, 7}, rng);
    Tensor via_le = extract_local(crop, Region::le, separate);
    Tensor via_rm = extract_local(crop, Region::rm, separate);
    CHECK(max_abs_diff(via_le, via_rm) > 1e-6);

    cfg.set("features.share_local_heads", "true");
    RegionHeads shared(cfg);
    Rng r2(33);
    shared.init_params(r2);
    CHECK(shared.shared_locals());
    Tensor s_le = extract_local(crop, Region::le, shared);
    Tensor s_rm = extract_local(crop, Region::rm, shared);
    CHECK(testutil::bitwise_equal(s_le, s_rm));
  }

  TEST_CASE("moving only landmarks changes local features but not the holistic one") {
    Config cfg = testutil::tiny_config();
    Model model(cfg);
    FaceSample a = toy_face(2, 99);
    FaceSample b = a;
    b.landmarks.le = {a.landmarks.le.x + 30.0, a.landmarks.le.y};

    RegionFeatureStack sa = extract_region_stack(a, *model.backbone, model.heads);
    RegionFeatureStack sb = extract_region_stack(b, *model.backbone, model.heads);
    CHECK(testutil::bitwise_equal(sa.f[0], sb.f[0]));
    CHECK(max_abs_diff(sa.f[1], sb.f[1]) > 1e-9);
    CHECK(testutil::bitwise_equal(sa.f[2], sb.f[2]));
    CHECK(testutil::bitwise_equal(sa.f[5], sb.f[5]));
  }

  TEST_CASE("batched extraction matches the per-sample path") {
    Config cfg = testutil::tiny_config();
    Model model(cfg);
    std::vector<FaceSample> samples = {toy_face(0, 1), toy_face(1, 2), toy_face(2, 3)};

    Tensor images({3, 3, kImageSize, kImageSize});
    std::vector<LandmarkSet> lms;
    for (int n = 0; n < 3; ++n) {
      const Tensor& im = samples[static_cast<size_t>(n)].image;
      for (int64_t i = 0; i < im.size(); ++i) images[static_cast<int64_t>(n) * im.size() + i] = im[i];
      lms.push_back(samples[static_cast<size_t>(n)].landmarks);
    }

    ad::Tape tape(false);
    RegionStackBatch batch = extract_stack_batch(images, lms, *model.backbone, model.heads, tape);
    for (int r = 0; r < kNumRegions; ++r) REQUIRE(batch.f[static_cast<size_t>(r)]->value.shape() == std::vector<int>{3, 64});

    for (int n = 0; n < 3; ++n) {
      RegionFeatureStack single = extract_region_stack(samples[static_cast<size_t>(n)], *model.backbone, model.heads);
      for (int r = 0; r < kNumRegions; ++r) {
        const Tensor& rows = batch.f[static_cast<size_t>(r)]->value;
        for (int j = 0; j < kRegionDim; ++j)
          CHECK(rows.at({n, j}) == doctest::Approx(single.f[static_cast<size_t>(r)][j]).epsilon(1e-10));
      }
    }
  }

  TEST_CASE("region stack concatenation preserves region order") {
    RegionFeatureStack stack;
    for (int r = 0; r < kNumRegions; ++r) {
      stack.f[static_cast<size_t>(r)] = Tensor({kRegionDim});
      stack.f[static_cast<size_t>(r)].fill(static_cast<double>(r));
    }
    Tensor cat = stack.concatenated();
    REQUIRE(cat.size() == kFeatureDim);
    for (int r = 0; r < kNumRegions; ++r) CHECK(cat[r * kRegionDim] == static_cast<double>(r));
  }

  TEST_CASE("fusion modes produce 64-wide features with the right inputs") {
    Config cfg = testutil::tiny_config();
    FusionHeads fusion;
    Rng rng(35);
    fusion.init_params(rng);

    RegionFeatureStack stack;
    Rng data_rng(36);
    for (int r = 0; r < kNumRegions; ++r) stack.f[static_cast<size_t>(r)] = random_tensor({kRegionDim}, data_rng);

    Tensor bh = fused_feature(stack, FusionMode::BH, fusion);
    CHECK(testutil::bitwise_equal(bh, stack.f[0]));

    Tensor bl = fused_feature(stack, FusionMode::BL, fusion);
    REQUIRE(bl.shape() == std::vector<int>{64});
    for (int o = 0; o < 64; ++o) {
      double acc = fusion.bl_b.value[o];
      for (int r = 1; r < kNumRegions; ++r)
        for (int j = 0; j < kRegionDim; ++j)
          acc += stack.f[static_cast<size_t>(r)][j] * fusion.bl_w.value.at({(r - 1) * kRegionDim + j, o});
      CHECK(bl[o] == doctest::Approx(std::max(0.0, acc)).epsilon(1e-9));
    }

    Tensor bhl = fused_feature(stack, FusionMode::BHL, fusion);
    REQUIRE(bhl.shape() == std::vector<int>{64});
    for (int o = 0; o < 64; ++o) {
      double acc = fusion.bhl_b.value[o];
      for (int r = 0; r < kNumRegions; ++r)
        for (int j = 0; j < kRegionDim; ++j)
          acc += stack.f[static_cast<size_t>(r)][j] * fusion.bhl_w.value.at({r * kRegionDim + j, o});
      CHECK(bhl[o] == doctest::Approx(std::max(0.0, acc)).epsilon(1e-9));
    }
  }

  TEST_CASE("fusion mode names parse") {
    CHECK(fusion_mode_from("BH") == FusionMode::BH);
    CHECK(fusion_mode_from("BL") == FusionMode::BL);
    CHECK(fusion_mode_from("BHL") == FusionMode::BHL);
    CHECK_THROWS_AS(fusion_mode_from("XL"), ConfigError);
  }

  TEST_CASE("backbone registry") {
    Config cfg = testutil::tiny_config();
    CHECK(create_backbone("toy", cfg)->id() == "toy");
    CHECK_THROWS_AS(create_backbone("vit-base", cfg), ConfigError);
    // Full-size backbones are declared but need external weight support.
    CHECK_THROWS_AS(create_backbone("resnet50", cfg), ConfigError);
    CHECK_THROWS_AS(create_backbone("resnet18", cfg), ConfigError);
    CHECK_THROWS_AS(create_backbone("mobilenetv2", cfg), ConfigError);

    auto names = registered_backbones();
    CHECK(std::find(names.begin(), names.end(), "toy") != names.end());
    CHECK(std::find(names.begin(), names.end(), "resnet50") != names.end());
  }

  TEST_CASE("channel normalization changes the backbone input") {
    Config cfg = testutil::tiny_config();
    cfg.set("backbone.norm_mean", "");
    cfg.set("backbone.norm_std", "");
    Config cfg_norm = testutil::tiny_config();
    cfg_norm.set("backbone.norm_mean", "0.5,0.5,0.5");
    cfg_norm.set("backbone.norm_std", "0.5,0.5,0.5");

    ToyBackbone plain(cfg), normed(cfg_norm);
    Rng r1(8), r2(8);
    plain.init_params(r1);
    normed.init_params(r2);

    Rng rng(9);
    Tensor images = random_tensor({1, 3, kImageSize, kImageSize}, rng, 0.0, 1.0);
    ad::Tape t1(false), t2(false);
    Tensor a = plain.run(images, t1).stage4->value;
    Tensor b = normed.run(images, t2).stage4->value;
    CHECK(max_abs_diff(a, b) > 1e-9);

    Config bad = testutil::tiny_config();
    bad.set("backbone.norm_mean", "0.5,0.5");
    CHECK_THROWS_AS(ToyBackbone{bad}, ConfigError);
  }
}
