#pragma once

#include <memory>
#include <string>
#include <vector>

#include "agra/bank.hpp"
#include "agra/config.hpp"
#include "agra/core/autodiff.hpp"
#include "agra/features.hpp"
#include "agra/graph.hpp"

namespace agra {

// Affine 384 -> 7, no softmax (losses apply it).
class Classifier {
 public:
  Classifier();
  ad::Var logits(const ad::Var& features, ad::Tape& tape) const;  // [N,384] -> [N,7]
  Tensor classify(const Tensor& feature) const;                   // [384] -> [7]
  std::vector<Param*> params();
  void init_params(Rng& rng);

  Param w, b;
};

// 384 -> h -> h -> 1 with rectifiers between, h configurable (default 128).
class Discriminator {
 public:
  explicit Discriminator(int hidden);
  // frozen=true binds parameters as constants so gradients flow to the
  // features only (the F,G minimax step).
  ad::Var logits(const ad::Var& features, ad::Tape& tape, bool frozen = false) const;  // [N,384] -> [N,1]
  double discriminate(const Tensor& feature) const;  // [384] -> scalar logit
  std::vector<Param*> params();
  void init_params(Rng& rng);
  int hidden() const { return hidden_; }

  Param w1, b1, w2, b2, w3, b3;

 private:
  int hidden_;
};

// The full AGRA network: backbone, region heads, fusion heads, graph
// adapter, classifier, and domain discriminator, built from one config.
struct Model {
  explicit Model(const Config& cfg);

  Config cfg;
  GraphSpec graph_spec;
  std::unique_ptr<Backbone> backbone;
  RegionHeads heads;
  FusionHeads fusion;
  GraphAdapter adapter;
  Classifier classifier;
  Discriminator discriminator;

  void init_params(uint64_t seed);

  std::vector<Param*> feature_params();  // backbone + heads + fusion + adapter
  std::vector<Param*> fg_params();       // feature params + classifier
  std::vector<Param*> disc_params();
  std::vector<Param*> all_params();

  // Tracked per-sample F(x): own-domain rows from the batch stack, other
  // domain from the bank class nearest to the detached stack.
  ad::Var feature_of(const RegionStackBatch& batch, int index, const ClassDistributionBank& bank, Domain domain,
                     ad::Tape& tape) const;

  // Self-mirrored variant used before a bank exists (stage 1, PLFT): both
  // domain blocks carry the sample's own detached features.
  ad::Var feature_self_mirrored(const RegionStackBatch& batch, int index, Domain domain, ad::Tape& tape) const;

  // Detached value-level stack of batch row `index`.
  RegionFeatureStack stack_values(const RegionStackBatch& batch, int index, Domain domain) const;
};

// Value-level F(x) for one sample under a populated bank (inference path).
Tensor feature_vector(const FaceSample& sample, Model& model, const ClassDistributionBank& bank);

struct Prediction {
  int label = -1;
  Tensor scores;  // [7]
};

// Extract the stack, fill the other domain's nodes from the bank, run the
// graph, classify, argmax.
Prediction predict(const FaceSample& sample, Model& model, const ClassDistributionBank& bank);

}  // namespace agra
