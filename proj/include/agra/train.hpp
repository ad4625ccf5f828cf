#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "agra/bank.hpp"
#include "agra/config.hpp"
#include "agra/data.hpp"
#include "agra/model.hpp"

namespace agra {

// Mean softmax cross-entropy over batch rows.
ad::Var classification_loss(const ad::Var& logits, const std::vector<int>& labels);

// L(F,G,D) = -E_s log sigma(d) - E_t log(1 - sigma(d)), logits clamped to
// |d| <= 50 for numerical stability.
ad::Var domain_adversarial_loss(const ad::Var& source_logits, const ad::Var& target_logits);

// SGD with momentum and L2 weight decay folded into the gradient:
// v <- mu * v + (g + wd * theta); theta <- theta - lr * v.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Param*> params, double lr, double momentum, double weight_decay);

  void step();  // consume accumulated gradients, then clear them
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<Param*>& params() const { return params_; }

  std::map<std::string, Tensor> momentum_state() const;
  void set_momentum_state(const std::map<std::string, Tensor>& state);

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> velocity_;
  double lr_, momentum_, weight_decay_;
};

// A label that can be sealed: target-domain training items never carry
// their ground truth into the training loop, and any read of a sealed
// label raises AuditError.
class GuardedLabel {
 public:
  static GuardedLabel open(int value) {
    GuardedLabel g;
    g.value_ = value;
    g.readable_ = true;
    return g;
  }
  static GuardedLabel sealed() { return GuardedLabel(); }

  bool readable() const { return readable_; }
  int get() const {
    if (!readable_) throw AuditError("target-domain label read during adaptation training");
    return value_;
  }

 private:
  int value_ = -1;
  bool readable_ = false;
};

// Line-delimited JSON training log: one header line with the config hash
// and seed, then {epoch, iter, L_cls, L_adv, lr_F, lr_D} records.
class TrainLogger {
 public:
  TrainLogger() = default;
  TrainLogger(const std::string& path, const std::string& config_hash, uint64_t seed);
  void log(int epoch, int iter, double l_cls, double l_adv, double lr_f, double lr_d);

 private:
  std::ofstream out_;
};

struct CheckpointMeta {
  int stage = 0;
  int epoch = 0;
  uint64_t seed = 0;
  std::string config_text;
  std::string config_hash;
};

// CBOR checkpoint: weights by name, optional bank, optional optimizer
// momentum, config snapshot, seed. Loading validates every parameter shape
// against the in-memory model built from the current config.
void save_checkpoint(const std::string& path, Model& model, const CheckpointMeta& meta,
                     const ClassDistributionBank* bank = nullptr, const SgdOptimizer* opt_f = nullptr,
                     const SgdOptimizer* opt_d = nullptr);
CheckpointMeta peek_checkpoint(const std::string& path);
CheckpointMeta load_checkpoint(const std::string& path, Model& model, ClassDistributionBank* bank = nullptr,
                               SgdOptimizer* opt_f = nullptr, SgdOptimizer* opt_d = nullptr);

// Assembled mini-batch. Target labels arrive sealed.
struct Batch {
  Tensor images;  // [N,3,112,112]
  std::vector<LandmarkSet> landmarks;
  std::vector<GuardedLabel> labels;
  std::vector<Domain> domains;
  int size() const { return images.empty() ? 0 : images.dim(0); }
};

Batch assemble_batch(const DataSet& data, const std::vector<int>& records, bool augment, Rng& rng, bool seal_labels);

// Region stacks of selected records under the current model (no-grad,
// batched). Order follows `records`.
std::vector<RegionFeatureStack> extract_split_stacks(Model& model, const DataSet& data,
                                                     const std::vector<int>& records, int batch_size = 64);

// Bank construction from the current model's features of both train splits
// (bank.mode, bank.num_clusters, bank.source_clusters, seed from config).
ClassDistributionBank build_bank(Model& model, const DataSet& source, const DataSet& target, const Config& cfg);

struct Stage1Options {
  std::string log_path;    // empty: no log file
  std::string ckpt_path;   // empty: no checkpoint written
  int epochs_override = 0; // 0: use config
};

// Cross-entropy pretraining of backbone, heads, adapter, and classifier on
// labeled source data. The graph runs self-mirrored (no bank exists yet).
CheckpointMeta train_stage1(Model& model, const DataSet& source, const Config& cfg, const Stage1Options& opts);

struct Stage2Options {
  std::string log_path;
  std::string ckpt_path;
  CheckpointMeta stage1_meta;  // gating: stage1_meta.stage must be >= 1
  int epochs_override = 0;
};

// Adversarial adaptation: alternating D / F,G minimax steps on
// half-source half-target batches, per-iteration bank updates, periodic
// reclustering, the staged lr schedule, and optional early stopping on
// source-val accuracy.
void train_stage2(Model& model, ClassDistributionBank& bank, const DataSet& source, const DataSet& target,
                  const Config& cfg, const Stage2Options& opts);

// Stage-1-style fine-tuning on (pseudo-)labeled target records, used by
// the PLFT baseline.
void finetune_pseudo_labels(Model& model, const DataSet& target, const std::vector<int>& records,
                            const std::vector<int>& pseudo_labels, const Config& cfg, const std::string& log_path);

}  // namespace agra
