#include "agra/model.hpp"

#include "agra/core/error.hpp"

namespace agra {

Classifier::Classifier() : w("cls.w", Tensor({kFeatureDim, kNumClasses})), b("cls.b", Tensor({kNumClasses})) {}

ad::Var Classifier::logits(const ad::Var& features, ad::Tape& tape) const {
  if (features->value.rank() != 2 || features->value.dim(1) != kFeatureDim)
    throw ValidationError("classifier: expected [N,384] features, got " + features->value.shape_str());
  auto& self = const_cast<Classifier&>(*this);
  return ad::add_rowvec(ad::matmul(features, tape(self.w)), tape(self.b));
}

Tensor Classifier::classify(const Tensor& feature) const {
  if (feature.rank() != 1 || feature.dim(0) != kFeatureDim)
    throw ValidationError("classify: expected [384] feature, got " + feature.shape_str());
  if (!feature.all_finite()) throw ValidationError("classify: non-finite feature");
  ad::Tape tape(false);
  Tensor m({1, kFeatureDim});
  for (int j = 0; j < kFeatureDim; ++j) m[j] = feature[j];
  Tensor out = logits(ad::constant(std::move(m)), tape)->value;
  Tensor scores({kNumClasses});
  for (int j = 0; j < kNumClasses; ++j) scores[j] = out[j];
  return scores;
}

std::vector<Param*> Classifier::params() { return {&w, &b}; }

void Classifier::init_params(Rng& rng) {
  init_xavier_uniform(w, kFeatureDim, kNumClasses, rng);
  b.value.fill(0.0);
}

Discriminator::Discriminator(int hidden)
    : w1("disc.fc1.w", Tensor({kFeatureDim, hidden})),
      b1("disc.fc1.b", Tensor({hidden})),
      w2("disc.fc2.w", Tensor({hidden, hidden})),
      b2("disc.fc2.b", Tensor({hidden})),
      w3("disc.fc3.w", Tensor({hidden, 1})),
      b3("disc.fc3.b", Tensor({1})),
      hidden_(hidden) {
  if (hidden < 1) throw ConfigError("disc.hidden must be positive");
}

ad::Var Discriminator::logits(const ad::Var& features, ad::Tape& tape, bool frozen) const {
  if (features->value.rank() != 2 || features->value.dim(1) != kFeatureDim)
    throw ValidationError("discriminator: expected [N,384] features, got " + features->value.shape_str());
  auto& self = const_cast<Discriminator&>(*this);
  auto bind = [&tape, frozen](Param& p) { return frozen ? ad::constant(p.value) : tape(p); };
  ad::Var h = ad::relu(ad::add_rowvec(ad::matmul(features, bind(self.w1)), bind(self.b1)));
  h = ad::relu(ad::add_rowvec(ad::matmul(h, bind(self.w2)), bind(self.b2)));
  return ad::add_rowvec(ad::matmul(h, bind(self.w3)), bind(self.b3));
}

double Discriminator::discriminate(const Tensor& feature) const {
  if (feature.rank() != 1 || feature.dim(0) != kFeatureDim)
    throw ValidationError("discriminate: expected [384] feature, got " + feature.shape_str());
  if (!feature.all_finite()) throw ValidationError("discriminate: non-finite feature");
  ad::Tape tape(false);
  Tensor m({1, kFeatureDim});
  for (int j = 0; j < kFeatureDim; ++j) m[j] = feature[j];
  return logits(ad::constant(std::move(m)), tape)->value[0];
}

std::vector<Param*> Discriminator::params() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

void Discriminator::init_params(Rng& rng) {
  init_he_uniform(w1, kFeatureDim, rng);
  init_he_uniform(w2, hidden_, rng);
  init_xavier_uniform(w3, hidden_, 1, rng);
  b1.value.fill(0.0);
  b2.value.fill(0.0);
  b3.value.fill(0.0);
}

Model::Model(const Config& config)
    : cfg(config),
      graph_spec(build_prior_adjacency(config)),
      backbone(create_backbone(config.get_str("backbone.id"), config)),
      heads(config),
      fusion(),
      adapter(config, graph_spec),
      classifier(),
      discriminator(static_cast<int>(config.get_int("disc.hidden"))) {
  init_params(static_cast<uint64_t>(config.get_int("seed")));
}

void Model::init_params(uint64_t seed) {
  // One derived stream per component, so adding parameters to one component
  // never shifts another component's draw.
  Rng r1(derive_seed(seed, "init-backbone"));
  backbone->init_params(r1);
  Rng r2(derive_seed(seed, "init-heads"));
  heads.init_params(r2);
  Rng r3(derive_seed(seed, "init-fusion"));
  fusion.init_params(r3);
  Rng r4(derive_seed(seed, "init-adapter"));
  adapter.init_params(r4);
  Rng r5(derive_seed(seed, "init-classifier"));
  classifier.init_params(r5);
  Rng r6(derive_seed(seed, "init-discriminator"));
  discriminator.init_params(r6);
}

std::vector<Param*> Model::feature_params() {
  std::vector<Param*> ps = backbone->params();
  for (Param* p : heads.params()) ps.push_back(p);
  for (Param* p : fusion.params()) ps.push_back(p);
  for (Param* p : adapter.params()) ps.push_back(p);
  return ps;
}

std::vector<Param*> Model::fg_params() {
  std::vector<Param*> ps = feature_params();
  for (Param* p : classifier.params()) ps.push_back(p);
  return ps;
}

std::vector<Param*> Model::disc_params() { return discriminator.params(); }

std::vector<Param*> Model::all_params() {
  std::vector<Param*> ps = fg_params();
  for (Param* p : disc_params()) ps.push_back(p);
  return ps;
}

RegionFeatureStack Model::stack_values(const RegionStackBatch& batch, int index, Domain domain) const {
  RegionFeatureStack s;
  s.domain = domain;
  for (int r = 0; r < kNumRegions; ++r) {
    const Tensor& m = batch.f[static_cast<size_t>(r)]->value;
    Tensor v({kRegionDim});
    for (int j = 0; j < kRegionDim; ++j) v[j] = m[static_cast<int64_t>(index) * kRegionDim + j];
    s.f[static_cast<size_t>(r)] = std::move(v);
  }
  return s;
}

ad::Var Model::feature_of(const RegionStackBatch& batch, int index, const ClassDistributionBank& bank, Domain domain,
                          ad::Tape& tape) const {
  RegionFeatureStack detached = stack_values(batch, index, domain);
  Domain other = domain == Domain::source ? Domain::target : Domain::source;
  int cls = assign_cluster(detached, bank, other);
  std::array<ad::Var, kNumRegions> own;
  std::array<Tensor, kNumRegions> other_rows;
  for (int r = 0; r < kNumRegions; ++r) {
    own[static_cast<size_t>(r)] = ad::row(batch.f[static_cast<size_t>(r)], index);
    other_rows[static_cast<size_t>(r)] = bank.region_mean(other, cls, static_cast<Region>(r));
  }
  return adapter.propagate_rows(own, other_rows, domain, fusion, tape);
}

ad::Var Model::feature_self_mirrored(const RegionStackBatch& batch, int index, Domain domain, ad::Tape& tape) const {
  RegionFeatureStack detached = stack_values(batch, index, domain);
  std::array<ad::Var, kNumRegions> own;
  std::array<Tensor, kNumRegions> other_rows;
  for (int r = 0; r < kNumRegions; ++r) {
    own[static_cast<size_t>(r)] = ad::row(batch.f[static_cast<size_t>(r)], index);
    other_rows[static_cast<size_t>(r)] = detached.f[static_cast<size_t>(r)];
  }
  return adapter.propagate_rows(own, other_rows, domain, fusion, tape);
}

Tensor feature_vector(const FaceSample& sample, Model& model, const ClassDistributionBank& bank) {
  RegionFeatureStack stack = extract_region_stack(sample, *model.backbone, model.heads);
  NodeFeatureMatrix nodes = init_nodes(stack, bank);
  return model.adapter.propagate(nodes, model.fusion);
}

Prediction predict(const FaceSample& sample, Model& model, const ClassDistributionBank& bank) {
  if (!bank.populated) throw StateError("predict: bank not populated");
  Tensor f = feature_vector(sample, model, bank);
  Prediction p;
  p.scores = model.classifier.classify(f);
  p.label = 0;
  for (int j = 1; j < kNumClasses; ++j)
    if (p.scores[j] > p.scores[p.label]) p.label = j;
  return p;
}

}  // namespace agra
