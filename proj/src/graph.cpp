#include "agra/graph.hpp"

#include <cmath>
#include <fstream>

#include "agra/core/eigen.hpp"
#include "agra/core/error.hpp"
#include "agra/core/rng.hpp"

namespace agra {

GraphMode graph_mode_from(const std::string& name) {
  if (name == "full") return GraphMode::full;
  if (name == "intra_only") return GraphMode::intra_only;
  if (name == "inter_only") return GraphMode::inter_only;
  if (name == "single") return GraphMode::single;
  if (name == "holistic_only") return GraphMode::holistic_only;
  if (name == "concat") return GraphMode::concat;
  throw ConfigError("unknown graph mode '" + name + "'");
}

namespace {

bool is_holistic(int node) { return node % kNumRegions == 0; }
bool same_domain(int a, int b) { return (a / kNumRegions) == (b / kNumRegions); }

double prior_intra_value(int i, int j) {
  if (i == j || !same_domain(i, j)) return 0.0;
  if (is_holistic(i) || is_holistic(j)) return 1.0;
  return 0.5;
}

double prior_inter_value(int i, int j) {
  if (same_domain(i, j)) return 0.0;
  if (is_holistic(i) && is_holistic(j)) return 1.0;
  if (is_holistic(i) || is_holistic(j)) return 0.5;
  return 0.25;
}

}  // namespace

GraphSpec build_prior_adjacency(const Config& cfg) {
  std::string mode = cfg.get_enum("graph.init");
  GraphSpec spec;
  spec.A_intra = Tensor({kNumNodes, kNumNodes});
  spec.A_inter = Tensor({kNumNodes, kNumNodes});

  Rng rng(derive_seed(static_cast<uint64_t>(cfg.get_int("seed")), "graph-init"));
  for (int i = 0; i < kNumNodes; ++i) {
    for (int j = i + 1; j < kNumNodes; ++j) {
      double intra = prior_intra_value(i, j);
      double inter = prior_inter_value(i, j);
      if (mode == "random") {
        // Same sparsity pattern, i.i.d. symmetric U[0,1] weights.
        if (intra > 0.0) intra = rng.uniform();
        if (inter > 0.0) inter = rng.uniform();
      } else if (mode == "ones") {
        intra = intra > 0.0 ? 1.0 : 0.0;
        inter = inter > 0.0 ? 1.0 : 0.0;
      }
      spec.A_intra.at({i, j}) = spec.A_intra.at({j, i}) = intra;
      spec.A_inter.at({i, j}) = spec.A_inter.at({j, i}) = inter;
    }
  }
  return spec;
}

Tensor normalize_adjacency(const Tensor& A) {
  if (A.rank() != 2 || A.dim(0) != A.dim(1)) throw ValidationError("normalize_adjacency: expects a square matrix");
  int n = A.dim(0);
  Tensor B = A;
  for (int i = 0; i < n; ++i) B.at({i, i}) += 1.0;
  std::vector<double> dinv(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int j = 0; j < n; ++j) deg += B.at({i, j});
    dinv[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  Tensor out({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out.at({i, j}) = dinv[static_cast<size_t>(i)] * B.at({i, j}) * dinv[static_cast<size_t>(j)];
  return out;
}

Tensor gcn_layer(const Tensor& H, const Tensor& A_hat, const Tensor& W, bool rectify) {
  if (H.rank() != 2 || A_hat.rank() != 2 || W.rank() != 2 || A_hat.dim(0) != A_hat.dim(1) ||
      A_hat.dim(1) != H.dim(0) || H.dim(1) != W.dim(0))
    throw ValidationError("gcn_layer: incompatible shapes " + A_hat.shape_str() + " * " + H.shape_str() + " * " +
                          W.shape_str());
  int n = H.dim(0), din = H.dim(1), dout = W.dim(1);
  Tensor out({n, dout});
  as_matrix(out, n, dout).noalias() =
      as_matrix(A_hat, n, n) * as_matrix(H, n, din) * as_matrix(W, din, dout);
  if (rectify)
    for (int64_t i = 0; i < out.size(); ++i)
      if (out[i] < 0.0) out[i] = 0.0;
  return out;
}

NodeFeatureMatrix init_nodes(const RegionFeatureStack& stack, const ClassDistributionBank& bank) {
  if (!bank.populated) throw StateError("init_nodes: bank not populated");
  Domain own = stack.domain;
  Domain other = own == Domain::source ? Domain::target : Domain::source;
  int cls = assign_cluster(stack, bank, other);

  NodeFeatureMatrix nodes;
  nodes.H = Tensor({kNumNodes, kRegionDim});
  nodes.stage = NodeFeatureMatrix::Stage::initial;
  nodes.input_domain = own;
  int own_base = own == Domain::source ? 0 : kNumRegions;
  int other_base = kNumRegions - own_base;
  for (int r = 0; r < kNumRegions; ++r) {
    const Tensor& f = stack.f[static_cast<size_t>(r)];
    Tensor m = bank.region_mean(other, cls, static_cast<Region>(r));
    for (int j = 0; j < kRegionDim; ++j) {
      nodes.H.at({own_base + r, j}) = f[j];
      nodes.H.at({other_base + r, j}) = m[j];
    }
  }
  return nodes;
}

std::vector<int> intra_layer_dims(int t_intra) {
  switch (t_intra) {
    case 1:
      return {64, 64};
    case 2:
      return {64, 128, 64};
    case 3:
      return {64, 128, 128, 64};
    default:
      throw ConfigError("graph.t_intra must be in [1,3]");
  }
}

GraphAdapter::GraphAdapter(const Config& cfg, const GraphSpec& spec) {
  mode_ = graph_mode_from(cfg.get_enum("graph.mode"));
  freeze_ = cfg.get_bool("graph.freeze_adjacency");
  t_intra_ = static_cast<int>(cfg.get_int("graph.t_intra"));
  t_inter_ = static_cast<int>(cfg.get_int("graph.t_inter"));
  if (t_inter_ < 1 || t_inter_ > 3) throw ConfigError("graph.t_inter must be in [1,3]");

  std::vector<int> dims = intra_layer_dims(t_intra_);
  for (int l = 0; l + 1 < static_cast<int>(dims.size()); ++l)
    W_intra.emplace_back("adapter.W_intra_" + std::to_string(l),
                         Tensor({dims[static_cast<size_t>(l)], dims[static_cast<size_t>(l) + 1]}));
  for (int l = 0; l < t_inter_; ++l)
    W_inter.emplace_back("adapter.W_inter_" + std::to_string(l), Tensor({kRegionDim, kRegionDim}));

  Tensor ai = normalize_adjacency(spec.A_intra);
  Tensor ae = normalize_adjacency(spec.A_inter);
  A_intra_hat = Param("adapter.A_intra", ai);
  A_inter_hat = Param("adapter.A_inter", ae);
  Tensor sum = ai;
  sum.add_(ae);
  A_single = Param("adapter.A_single", sum);
  A_intra_hat.trainable = A_inter_hat.trainable = A_single.trainable = !freeze_;
}

std::vector<Param*> GraphAdapter::params() {
  std::vector<Param*> ps;
  switch (mode_) {
    case GraphMode::full:
      ps.push_back(&A_intra_hat);
      ps.push_back(&A_inter_hat);
      for (auto& w : W_intra) ps.push_back(&w);
      for (auto& w : W_inter) ps.push_back(&w);
      break;
    case GraphMode::intra_only:
      ps.push_back(&A_intra_hat);
      for (auto& w : W_intra) ps.push_back(&w);
      break;
    case GraphMode::inter_only:
      ps.push_back(&A_inter_hat);
      for (auto& w : W_inter) ps.push_back(&w);
      break;
    case GraphMode::single:
      ps.push_back(&A_single);
      for (auto& w : W_intra) ps.push_back(&w);
      for (auto& w : W_inter) ps.push_back(&w);
      break;
    case GraphMode::holistic_only:
    case GraphMode::concat:
      break;  // graph parameters bypassed entirely
  }
  return ps;
}

void GraphAdapter::init_params(Rng& rng) {
  for (auto& w : W_intra) init_he_uniform(w, w.value.dim(0), rng);
  for (auto& w : W_inter) init_he_uniform(w, w.value.dim(0), rng);
}

ad::Var GraphAdapter::propagate_rows(const std::array<ad::Var, kNumRegions>& own,
                                     const std::array<Tensor, kNumRegions>& other, Domain own_domain,
                                     const FusionHeads& fusion, ad::Tape& tape) const {
  auto& self = const_cast<GraphAdapter&>(*this);

  if (mode_ == GraphMode::holistic_only || mode_ == GraphMode::concat) {
    // Table 5 pathways: the fused baseline feature, zero-padded to keep
    // F(x) at 384 for the shared classifier/discriminator heads.
    ad::Var fused = fused_feature_var(own, mode_ == GraphMode::holistic_only ? FusionMode::BH : FusionMode::BHL,
                                      fusion, tape);
    return ad::concat({fused, ad::constant(Tensor({kFeatureDim - kRegionDim}))});
  }

  std::vector<ad::Var> nodes(kNumNodes);
  int own_base = own_domain == Domain::source ? 0 : kNumRegions;
  int other_base = kNumRegions - own_base;
  for (int r = 0; r < kNumRegions; ++r) {
    nodes[static_cast<size_t>(own_base + r)] = own[static_cast<size_t>(r)];
    nodes[static_cast<size_t>(other_base + r)] = ad::constant(other[static_cast<size_t>(r)]);
  }
  ad::Var h = ad::stack(nodes);  // [12,64]

  auto chain = [&](ad::Var x, const ad::Var& a, std::vector<Param>& ws) {
    for (auto& w : ws) x = ad::relu(ad::matmul(ad::matmul(a, x), tape(w)));
    return x;
  };

  switch (mode_) {
    case GraphMode::full:
      h = chain(h, tape(self.A_intra_hat), self.W_intra);
      h = chain(h, tape(self.A_inter_hat), self.W_inter);
      break;
    case GraphMode::intra_only:
      h = chain(h, tape(self.A_intra_hat), self.W_intra);
      break;
    case GraphMode::inter_only:
      h = chain(h, tape(self.A_inter_hat), self.W_inter);
      break;
    case GraphMode::single: {
      ad::Var a = tape(self.A_single);
      h = chain(h, a, self.W_intra);
      h = chain(h, a, self.W_inter);
      break;
    }
    default:
      throw ConfigError("propagate: unsupported mode");
  }

  std::vector<ad::Var> out_rows;
  out_rows.reserve(kNumRegions);
  for (int r = 0; r < kNumRegions; ++r) out_rows.push_back(ad::row(h, own_base + r));
  return ad::concat(out_rows);
}

Tensor GraphAdapter::propagate(const NodeFeatureMatrix& h0, const FusionHeads& fusion) const {
  if (h0.H.rank() != 2 || h0.H.dim(0) != kNumNodes || h0.H.dim(1) != kRegionDim)
    throw ValidationError("propagate: node matrix must be [12,64], got " + h0.H.shape_str());
  ad::Tape tape(false);
  std::array<ad::Var, kNumRegions> own;
  std::array<Tensor, kNumRegions> other;
  int own_base = h0.input_domain == Domain::source ? 0 : kNumRegions;
  int other_base = kNumRegions - own_base;
  for (int r = 0; r < kNumRegions; ++r) {
    Tensor rowv({kRegionDim});
    for (int j = 0; j < kRegionDim; ++j) rowv[j] = h0.H.at({own_base + r, j});
    own[static_cast<size_t>(r)] = ad::constant(std::move(rowv));
    Tensor otherv({kRegionDim});
    for (int j = 0; j < kRegionDim; ++j) otherv[j] = h0.H.at({other_base + r, j});
    other[static_cast<size_t>(r)] = std::move(otherv);
  }
  return propagate_rows(own, other, h0.input_domain, fusion, tape)->value;
}

void GraphAdapter::dump_adjacency(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write adjacency file '" + path + "'");
  auto emit = [&out](const char* title, const Tensor& a) {
    out << "# " << title << " (" << kNumNodes << "x" << kNumNodes << ")\n";
    for (int i = 0; i < kNumNodes; ++i) {
      for (int j = 0; j < kNumNodes; ++j) out << (j ? " " : "") << a.at({i, j});
      out << "\n";
    }
  };
  out.precision(17);
  if (mode_ == GraphMode::single) {
    emit("A_single", A_single.value);
  } else {
    emit("A_intra", A_intra_hat.value);
    emit("A_inter", A_inter_hat.value);
  }
}

}  // namespace agra
