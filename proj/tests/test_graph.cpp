#include <doctest.h>

#include <cmath>

#include "agra/core/error.hpp"
#include "agra/graph.hpp"
#include "testutil.hpp"

using namespace agra;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Independent per-node message-passing reference for one layer:
// h'_i = act(sum_j A[i][j] * (H_j W)).
Tensor gcn_reference(const Tensor& H, const Tensor& A, const Tensor& W, bool rectify) {
  int n = H.dim(0), din = H.dim(1), dout = W.dim(1);
  Tensor out({n, dout});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < dout; ++o) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) {
        double msg = 0.0;
        for (int k = 0; k < din; ++k) msg += H.at({j, k}) * W.at({k, o});
        acc += A.at({i, j}) * msg;
      }
      out.at({i, o}) = rectify ? std::max(0.0, acc) : acc;
    }
  return out;
}

RegionFeatureStack random_stack(Rng& rng, Domain d) {
  RegionFeatureStack s;
  s.domain = d;
  for (int r = 0; r < kNumRegions; ++r) s.f[static_cast<size_t>(r)] = random_tensor({kRegionDim}, rng, 0.0, 1.0);
  return s;
}

ClassDistributionBank two_class_bank(Rng& rng) {
  ClassDistributionBank bank;
  bank.num_clusters = 2;
  bank.allocate();
  for (int64_t i = 0; i < bank.means.size(); ++i) bank.means[i] = rng.uniform(0.0, 1.0);
  bank.populated = true;
  return bank;
}

}  // namespace

TEST_SUITE("graph") {
  TEST_CASE("prior adjacency encodes the region relations") {
    Config cfg = testutil::tiny_config();
    GraphSpec spec = build_prior_adjacency(cfg);

    // Within-domain: holistic-local 1.0, local-local 0.5, no self loops.
    CHECK(spec.A_intra.at({0, 1}) == 1.0);   // s.h - s.le
    CHECK(spec.A_intra.at({0, 5}) == 1.0);   // s.h - s.rm
    CHECK(spec.A_intra.at({1, 2}) == 0.5);   // s.le - s.re
    CHECK(spec.A_intra.at({6, 7}) == 1.0);   // t.h - t.le
    CHECK(spec.A_intra.at({8, 11}) == 0.5);  // t.re - t.rm
    CHECK(spec.A_intra.at({0, 6}) == 0.0);   // cross-domain entries stay zero
    CHECK(spec.A_intra.at({3, 9}) == 0.0);
    for (int i = 0; i < kNumNodes; ++i) CHECK(spec.A_intra.at({i, i}) == 0.0);

    // Across domains: h-h 1.0, h-local 0.5, local-local 0.25.
    CHECK(spec.A_inter.at({0, 6}) == 1.0);
    CHECK(spec.A_inter.at({0, 7}) == 0.5);
    CHECK(spec.A_inter.at({1, 6}) == 0.5);
    CHECK(spec.A_inter.at({1, 7}) == 0.25);
    CHECK(spec.A_inter.at({5, 11}) == 0.25);
    CHECK(spec.A_inter.at({0, 1}) == 0.0);  // within-domain entries stay zero
    CHECK(spec.A_inter.at({7, 11}) == 0.0);

    for (int i = 0; i < kNumNodes; ++i)
      for (int j = 0; j < kNumNodes; ++j) {
        CHECK(spec.A_intra.at({i, j}) == spec.A_intra.at({j, i}));
        CHECK(spec.A_inter.at({i, j}) == spec.A_inter.at({j, i}));
      }
  }

  TEST_CASE("random adjacency keeps the sparsity pattern and symmetry") {
    Config cfg = testutil::tiny_config();
    GraphSpec prior = build_prior_adjacency(cfg);
    cfg.set("graph.init", "random");
    GraphSpec a = build_prior_adjacency(cfg);
    GraphSpec b = build_prior_adjacency(cfg);

    bool any_differs_from_prior = false;
    for (int i = 0; i < kNumNodes; ++i)
      for (int j = 0; j < kNumNodes; ++j) {
        double pv = prior.A_intra.at({i, j});
        double av = a.A_intra.at({i, j});
        CHECK((pv == 0.0) == (av == 0.0));
        CHECK(av >= 0.0);
        CHECK(av <= 1.0);
        CHECK(av == a.A_intra.at({j, i}));
        CHECK(av == b.A_intra.at({i, j}));  // same seed, same draw
        if (pv != av) any_differs_from_prior = true;
      }
    CHECK(any_differs_from_prior);

    cfg.set("seed", "778899");
    GraphSpec c = build_prior_adjacency(cfg);
    CHECK(max_abs_diff(c.A_intra, a.A_intra) > 0.0);
  }

  TEST_CASE("ones adjacency saturates the pattern") {
    Config cfg = testutil::tiny_config();
    cfg.set("graph.init", "ones");
    GraphSpec spec = build_prior_adjacency(cfg);
    CHECK(spec.A_intra.at({1, 2}) == 1.0);
    CHECK(spec.A_inter.at({1, 7}) == 1.0);
    CHECK(spec.A_inter.at({0, 1}) == 0.0);
  }

  TEST_CASE("adjacency normalization on a two-node hand case") {
    // A = [[0,1],[1,0]]: A+I has all-ones rows, degrees 2, so every entry
    // of the normalized matrix is 1/2.
    Tensor A = Tensor::from({2, 2}, {0, 1, 1, 0});
    Tensor ahat = normalize_adjacency(A);
    for (int64_t i = 0; i < 4; ++i) CHECK(ahat[i] == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("adjacency normalization matches the degree formula") {
    Rng rng(44);
    Tensor A({5, 5});
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) A.at({i, j}) = A.at({j, i}) = rng.uniform();
    Tensor got = normalize_adjacency(A);

    Tensor B = A;
    for (int i = 0; i < 5; ++i) B.at({i, i}) += 1.0;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double di = 0.0, dj = 0.0;
        for (int k = 0; k < 5; ++k) {
          di += B.at({i, k});
          dj += B.at({j, k});
        }
        CHECK(got.at({i, j}) == doctest::Approx(B.at({i, j}) / std::sqrt(di * dj)).epsilon(1e-12));
        CHECK(got.at({i, j}) == doctest::Approx(got.at({j, i})).epsilon(1e-12));
      }
    CHECK_THROWS_AS(normalize_adjacency(Tensor({2, 3})), ValidationError);
  }

  TEST_CASE("gcn layer equals the message-passing reference") {
    Rng rng(45);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor H = random_tensor({kNumNodes, 16}, rng, -1.0, 1.0);
      Tensor A({kNumNodes, kNumNodes});
      for (int i = 0; i < kNumNodes; ++i)
        for (int j = i; j < kNumNodes; ++j) A.at({i, j}) = A.at({j, i}) = rng.uniform();
      Tensor Ahat = normalize_adjacency(A);
      Tensor W = random_tensor({16, 8}, rng, -1.0, 1.0);
      bool rectify = trial % 2 == 0;
      Tensor got = gcn_layer(H, Ahat, W, rectify);
      Tensor want = gcn_reference(H, Ahat, W, rectify);
      REQUIRE(max_abs_diff(got, want) <= 1e-6);
    }
    CHECK_THROWS_AS(gcn_layer(Tensor({12, 16}), Tensor({12, 12}), Tensor({8, 8}), true), ValidationError);
  }

  TEST_CASE("intra ladder dimensions by depth") {
    CHECK(intra_layer_dims(1) == std::vector<int>{64, 64});
    CHECK(intra_layer_dims(2) == std::vector<int>{64, 128, 64});
    CHECK(intra_layer_dims(3) == std::vector<int>{64, 128, 128, 64});
    CHECK_THROWS_AS(intra_layer_dims(0), ConfigError);
    CHECK_THROWS_AS(intra_layer_dims(4), ConfigError);
  }

  TEST_CASE("adapter exposes the dimension contract") {
    Config cfg = testutil::tiny_config();
    GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
    REQUIRE(adapter.W_intra.size() == 2);
    CHECK(adapter.W_intra[0].value.shape() == std::vector<int>{64, 128});
    CHECK(adapter.W_intra[1].value.shape() == std::vector<int>{128, 64});
    REQUIRE(adapter.W_inter.size() == 1);
    CHECK(adapter.W_inter[0].value.shape() == std::vector<int>{64, 64});
    CHECK(adapter.A_intra_hat.value.shape() == std::vector<int>{kNumNodes, kNumNodes});
    CHECK(adapter.A_inter_hat.value.shape() == std::vector<int>{kNumNodes, kNumNodes});
  }

  TEST_CASE("node matrix layout for both input domains") {
    Rng rng(46);
    ClassDistributionBank bank = two_class_bank(rng);

    RegionFeatureStack src = random_stack(rng, Domain::source);
    NodeFeatureMatrix ns = init_nodes(src, bank);
    REQUIRE(ns.H.shape() == std::vector<int>{kNumNodes, kRegionDim});
    CHECK(ns.input_domain == Domain::source);
    int cls = assign_cluster(src, bank, Domain::target);
    for (int r = 0; r < kNumRegions; ++r) {
      Tensor m = bank.region_mean(Domain::target, cls, static_cast<Region>(r));
      for (int j = 0; j < kRegionDim; ++j) {
        CHECK(ns.H.at({r, j}) == src.f[static_cast<size_t>(r)][j]);
        CHECK(ns.H.at({kNumRegions + r, j}) == m[j]);
      }
    }

    RegionFeatureStack tgt = random_stack(rng, Domain::target);
    NodeFeatureMatrix nt = init_nodes(tgt, bank);
    int cls_s = assign_cluster(tgt, bank, Domain::source);
    for (int r = 0; r < kNumRegions; ++r) {
      Tensor m = bank.region_mean(Domain::source, cls_s, static_cast<Region>(r));
      for (int j = 0; j < kRegionDim; ++j) {
        CHECK(nt.H.at({kNumRegions + r, j}) == tgt.f[static_cast<size_t>(r)][j]);
        CHECK(nt.H.at({r, j}) == m[j]);
      }
    }

    ClassDistributionBank empty;
    CHECK_THROWS_AS(init_nodes(src, empty), StateError);
  }

  TEST_CASE("full propagation equals chained layer references") {
    Config cfg = testutil::tiny_config();
    GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
    Rng rng(47);
    adapter.init_params(rng);

    ClassDistributionBank bank = two_class_bank(rng);
    RegionFeatureStack stack = random_stack(rng, Domain::source);
    NodeFeatureMatrix h0 = init_nodes(stack, bank);

    FusionHeads fusion;
    Tensor fx = adapter.propagate(h0, fusion);
    REQUIRE(fx.shape() == std::vector<int>{kFeatureDim});

    Tensor h = gcn_reference(h0.H, adapter.A_intra_hat.value, adapter.W_intra[0].value, true);
    h = gcn_reference(h, adapter.A_intra_hat.value, adapter.W_intra[1].value, true);
    h = gcn_reference(h, adapter.A_inter_hat.value, adapter.W_inter[0].value, true);
    for (int r = 0; r < kNumRegions; ++r)
      for (int j = 0; j < kRegionDim; ++j)
        CHECK(fx[r * kRegionDim + j] == doctest::Approx(h.at({r, j})).epsilon(1e-9));
  }

  TEST_CASE("target-domain inputs read their own block of the node matrix") {
    Config cfg = testutil::tiny_config();
    GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
    Rng rng(48);
    adapter.init_params(rng);
    ClassDistributionBank bank = two_class_bank(rng);
    RegionFeatureStack stack = random_stack(rng, Domain::target);
    NodeFeatureMatrix h0 = init_nodes(stack, bank);
    FusionHeads fusion;
    Tensor fx = adapter.propagate(h0, fusion);

    Tensor h = gcn_reference(h0.H, adapter.A_intra_hat.value, adapter.W_intra[0].value, true);
    h = gcn_reference(h, adapter.A_intra_hat.value, adapter.W_intra[1].value, true);
    h = gcn_reference(h, adapter.A_inter_hat.value, adapter.W_inter[0].value, true);
    for (int r = 0; r < kNumRegions; ++r)
      for (int j = 0; j < kRegionDim; ++j)
        CHECK(fx[r * kRegionDim + j] == doctest::Approx(h.at({kNumRegions + r, j})).epsilon(1e-9));
  }

  TEST_CASE("reduced modes use only their own adjacency") {
    Rng rng(49);
    ClassDistributionBank bank = two_class_bank(rng);
    RegionFeatureStack stack = random_stack(rng, Domain::source);
    FusionHeads fusion;

    Config cfg = testutil::tiny_config();
    cfg.set("graph.mode", "intra_only");
    GraphAdapter intra(cfg, build_prior_adjacency(cfg));
    Rng r1(50);
    intra.init_params(r1);
    NodeFeatureMatrix h0 = init_nodes(stack, bank);
    Tensor fx = intra.propagate(h0, fusion);
    Tensor h = gcn_reference(h0.H, intra.A_intra_hat.value, intra.W_intra[0].value, true);
    h = gcn_reference(h, intra.A_intra_hat.value, intra.W_intra[1].value, true);
    for (int r = 0; r < kNumRegions; ++r)
      for (int j = 0; j < kRegionDim; ++j)
        REQUIRE(fx[r * kRegionDim + j] == doctest::Approx(h.at({r, j})).epsilon(1e-9));

    cfg.set("graph.mode", "inter_only");
    GraphAdapter inter(cfg, build_prior_adjacency(cfg));
    Rng r2(50);
    inter.init_params(r2);
    Tensor fx2 = inter.propagate(h0, fusion);
    Tensor h2 = gcn_reference(h0.H, inter.A_inter_hat.value, inter.W_inter[0].value, true);
    for (int r = 0; r < kNumRegions; ++r)
      for (int j = 0; j < kRegionDim; ++j)
        REQUIRE(fx2[r * kRegionDim + j] == doctest::Approx(h2.at({r, j})).epsilon(1e-9));

    cfg.set("graph.mode", "single");
    GraphAdapter single(cfg, build_prior_adjacency(cfg));
    Rng r3(50);
    single.init_params(r3);
    Tensor fx3 = single.propagate(h0, fusion);
    const Tensor& As = single.A_single.value;
    Tensor h3 = gcn_reference(h0.H, As, single.W_intra[0].value, true);
    h3 = gcn_reference(h3, As, single.W_intra[1].value, true);
    h3 = gcn_reference(h3, As, single.W_inter[0].value, true);
    for (int r = 0; r < kNumRegions; ++r)
      for (int j = 0; j < kRegionDim; ++j)
        REQUIRE(fx3[r * kRegionDim + j] == doctest::Approx(h3.at({r, j})).epsilon(1e-9));

    // The shared matrix is the sum of the two normalized adjacencies.
    Config full_cfg = testutil::tiny_config();
    GraphAdapter full(full_cfg, build_prior_adjacency(full_cfg));
    for (int i = 0; i < kNumNodes; ++i)
      for (int j = 0; j < kNumNodes; ++j)
        REQUIRE(As.at({i, j}) ==
                doctest::Approx(full.A_intra_hat.value.at({i, j}) + full.A_inter_hat.value.at({i, j})).epsilon(1e-12));
  }

  TEST_CASE("bypass modes zero-pad the fused feature and expose no graph parameters") {
    Rng rng(51);
    RegionFeatureStack stack = random_stack(rng, Domain::source);
    ClassDistributionBank bank = two_class_bank(rng);
    FusionHeads fusion;
    Rng fr(52);
    fusion.init_params(fr);

    for (const char* mode : {"holistic_only", "concat"}) {
      Config cfg = testutil::tiny_config();
      cfg.set("graph.mode", mode);
      GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
      CHECK(adapter.params().empty());

      NodeFeatureMatrix h0 = init_nodes(stack, bank);
      Tensor fx = adapter.propagate(h0, fusion);
      REQUIRE(fx.shape() == std::vector<int>{kFeatureDim});
      Tensor fused = fused_feature(stack, std::string(mode) == "holistic_only" ? FusionMode::BH : FusionMode::BHL,
                                   fusion);
      for (int j = 0; j < kRegionDim; ++j) CHECK(fx[j] == doctest::Approx(fused[j]).epsilon(1e-12));
      for (int j = kRegionDim; j < kFeatureDim; ++j) REQUIRE(fx[j] == 0.0);
    }
  }

  TEST_CASE("parameter exposure follows the mode") {
    auto param_names = [](GraphAdapter& a) {
      std::vector<std::string> names;
      for (Param* p : a.params()) names.push_back(p->name);
      return names;
    };

    Config cfg = testutil::tiny_config();
    GraphAdapter full(cfg, build_prior_adjacency(cfg));
    auto names = param_names(full);
    CHECK(std::count(names.begin(), names.end(), "adapter.A_intra") == 1);
    CHECK(std::count(names.begin(), names.end(), "adapter.A_inter") == 1);
    CHECK(std::count(names.begin(), names.end(), "adapter.W_intra_0") == 1);
    CHECK(std::count(names.begin(), names.end(), "adapter.W_intra_1") == 1);
    CHECK(std::count(names.begin(), names.end(), "adapter.W_inter_0") == 1);

    cfg.set("graph.mode", "intra_only");
    GraphAdapter intra(cfg, build_prior_adjacency(cfg));
    names = param_names(intra);
    CHECK(std::count(names.begin(), names.end(), "adapter.A_inter") == 0);
    CHECK(std::count(names.begin(), names.end(), "adapter.W_inter_0") == 0);

    cfg.set("graph.mode", "single");
    GraphAdapter single(cfg, build_prior_adjacency(cfg));
    names = param_names(single);
    CHECK(std::count(names.begin(), names.end(), "adapter.A_single") == 1);
    CHECK(std::count(names.begin(), names.end(), "adapter.A_intra") == 0);
  }

  TEST_CASE("frozen adjacency is excluded from training") {
    Config cfg = testutil::tiny_config();
    cfg.set("graph.freeze_adjacency", "true");
    GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
    CHECK_FALSE(adapter.A_intra_hat.trainable);
    CHECK_FALSE(adapter.A_inter_hat.trainable);
    for (Param* p : adapter.params())
      if (p->name.rfind("adapter.A_", 0) == 0) CHECK_FALSE(p->trainable);
  }

  TEST_CASE("layer count variants build and propagate") {
    Rng rng(53);
    ClassDistributionBank bank = two_class_bank(rng);
    RegionFeatureStack stack = random_stack(rng, Domain::source);
    FusionHeads fusion;
    for (int ti = 1; ti <= 3; ++ti)
      for (int te = 1; te <= 3; ++te) {
        Config cfg = testutil::tiny_config();
        cfg.set("graph.t_intra", std::to_string(ti));
        cfg.set("graph.t_inter", std::to_string(te));
        GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
        Rng ir(60 + ti * 3 + te);
        adapter.init_params(ir);
        CHECK(static_cast<int>(adapter.W_intra.size()) == (ti == 1 ? 1 : ti));
        CHECK(static_cast<int>(adapter.W_inter.size()) == te);
        Tensor fx = adapter.propagate(init_nodes(stack, bank), fusion);
        REQUIRE(fx.shape() == std::vector<int>{kFeatureDim});
        CHECK(fx.all_finite());
      }
  }

  TEST_CASE("tracked propagation matches the value-level path") {
    Rng rng(54);
    ClassDistributionBank bank = two_class_bank(rng);
    FusionHeads fusion;
    Rng fr(55);
    fusion.init_params(fr);

    for (const char* mode : {"full", "intra_only", "inter_only", "single", "holistic_only", "concat"}) {
      Config cfg = testutil::tiny_config();
      cfg.set("graph.mode", mode);
      GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
      Rng ir(56);
      adapter.init_params(ir);

      RegionFeatureStack stack = random_stack(rng, Domain::source);
      Tensor value_path = adapter.propagate(init_nodes(stack, bank), fusion);

      ad::Tape tape;
      std::array<ad::Var, kNumRegions> own;
      std::array<Tensor, kNumRegions> other;
      int cls = assign_cluster(stack, bank, Domain::target);
      for (int r = 0; r < kNumRegions; ++r) {
        own[static_cast<size_t>(r)] = ad::leaf(stack.f[static_cast<size_t>(r)]);
        other[static_cast<size_t>(r)] = bank.region_mean(Domain::target, cls, static_cast<Region>(r));
      }
      Tensor tracked = adapter.propagate_rows(own, other, Domain::source, fusion, tape)->value;
      REQUIRE(max_abs_diff(tracked, value_path) <= 1e-12);
    }
  }

  TEST_CASE("adjacency dump is written") {
    testutil::TempDir tmp("adj");
    Config cfg = testutil::tiny_config();
    GraphAdapter adapter(cfg, build_prior_adjacency(cfg));
    adapter.dump_adjacency(tmp.file("adj.txt"));
    std::string text = testutil::read_file(tmp.file("adj.txt"));
    CHECK(text.find("A_intra") != std::string::npos);
    CHECK(text.find("A_inter") != std::string::npos);
  }
}
