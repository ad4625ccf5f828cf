#pragma once

#include <array>
#include <vector>

#include "agra/bank.hpp"
#include "agra/config.hpp"
#include "agra/core/autodiff.hpp"
#include "agra/features.hpp"

namespace agra {

enum class GraphMode { full, intra_only, inter_only, single, holistic_only, concat };
GraphMode graph_mode_from(const std::string& name);

// Node order is fixed: [s.h, s.le, s.re, s.no, s.lm, s.rm, t.h, ..., t.rm].
// A_intra connects regions within each domain block; A_inter connects the
// two domains. Both are symmetric with entries in [0,1].
struct GraphSpec {
  Tensor A_intra;  // [12,12]
  Tensor A_inter;  // [12,12]
};

// Prior values: intra holistic-local 1.0, local-local 0.5; inter
// holistic-holistic 1.0, holistic-local 0.5, local-local 0.25. `random`
// draws U[0,1] on the same sparsity pattern (symmetrically); `ones` sets
// every pattern entry to 1. Self-loops enter later via normalization.
GraphSpec build_prior_adjacency(const Config& cfg);

// A-hat = D^(-1/2) (A + I) D^(-1/2), D the degree matrix of A + I.
Tensor normalize_adjacency(const Tensor& A);

// H' = act(A_hat * H * W), value-level (oracle surface).
Tensor gcn_layer(const Tensor& H, const Tensor& A_hat, const Tensor& W, bool rectify = true);

struct NodeFeatureMatrix {
  enum class Stage { initial, post_intra, post_inter };
  Tensor H;  // [12, d]
  Stage stage = Stage::initial;
  Domain input_domain = Domain::source;
};

// Own-domain rows from the stack, other-domain rows from the bank class
// nearest to the stack (in the other domain's distributions).
NodeFeatureMatrix init_nodes(const RegionFeatureStack& stack, const ClassDistributionBank& bank);

// Learnable adjacency + GCN weights with all propagation variants.
class GraphAdapter {
 public:
  GraphAdapter(const Config& cfg, const GraphSpec& spec);

  GraphMode mode() const { return mode_; }
  int t_intra() const { return t_intra_; }
  int t_inter() const { return t_inter_; }

  std::vector<Param*> params();
  void init_params(Rng& rng);  // W matrices; adjacency comes from the spec

  // Tracked per-sample propagation: own-domain rows are graph nodes, the
  // other domain's rows enter as constants. Returns F(x), always 384-dim.
  ad::Var propagate_rows(const std::array<ad::Var, kNumRegions>& own, const std::array<Tensor, kNumRegions>& other,
                         Domain own_domain, const FusionHeads& fusion, ad::Tape& tape) const;

  // Value-level propagation for inference and tests.
  Tensor propagate(const NodeFeatureMatrix& h0, const FusionHeads& fusion) const;

  // Plain-text serialization of the current adjacency values.
  void dump_adjacency(const std::string& path) const;

  Param A_intra_hat, A_inter_hat, A_single;
  std::vector<Param> W_intra, W_inter;

 private:
  GraphMode mode_;
  bool freeze_;
  int t_intra_, t_inter_;
};

// Intra-layer channel ladder: 1 -> [64,64]; 2 -> [64,128,64];
// 3 -> [64,128,128,64]. Inter layers are all 64 -> 64.
std::vector<int> intra_layer_dims(int t_intra);

}  // namespace agra
