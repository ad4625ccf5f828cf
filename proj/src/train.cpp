#include "agra/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "agra/core/error.hpp"

namespace agra {

using nlohmann::json;

namespace fs = std::filesystem;

ad::Var classification_loss(const ad::Var& logits, const std::vector<int>& labels) {
  return ad::cross_entropy_mean(logits, labels);
}

ad::Var domain_adversarial_loss(const ad::Var& source_logits, const ad::Var& target_logits) {
  ad::Var s = ad::clamp(source_logits, -50.0, 50.0);
  ad::Var t = ad::clamp(target_logits, -50.0, 50.0);
  // -E_s log sigma(d) - E_t log(1 - sigma(d))
  return ad::weighted_sum({ad::mean_softplus(s, -1.0), ad::mean_softplus(t, +1.0)}, {1.0, 1.0});
}

SgdOptimizer::SgdOptimizer(std::vector<Param*> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (Param* p : params_) velocity_.push_back(Tensor::zeros(p->value.shape()));
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (!p->trainable) {
      p->zero_grad();
      continue;
    }
    p->ensure_grad();
    Tensor& v = velocity_[i];
    v.scale_(momentum_);
    v.add_(p->grad);
    v.axpy_(weight_decay_, p->value);
    p->value.axpy_(-lr_, v);
    p->zero_grad();
  }
}

void SgdOptimizer::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

std::map<std::string, Tensor> SgdOptimizer::momentum_state() const {
  std::map<std::string, Tensor> state;
  for (size_t i = 0; i < params_.size(); ++i) state[params_[i]->name] = velocity_[i];
  return state;
}

void SgdOptimizer::set_momentum_state(const std::map<std::string, Tensor>& state) {
  if (state.size() != params_.size()) throw ValidationError("optimizer state entry count does not match parameters");
  for (size_t i = 0; i < params_.size(); ++i) {
    auto it = state.find(params_[i]->name);
    if (it == state.end()) throw ValidationError("optimizer state misses parameter '" + params_[i]->name + "'");
    if (!it->second.same_shape(params_[i]->value))
      throw ValidationError("optimizer state shape mismatch for '" + params_[i]->name + "'");
    velocity_[i] = it->second;
  }
}

TrainLogger::TrainLogger(const std::string& path, const std::string& config_hash, uint64_t seed) {
  fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  out_.open(path, std::ios::trunc);
  if (!out_) throw IoError("cannot open training log '" + path + "'");
  json header;
  header["config_hash"] = config_hash;
  header["seed"] = seed;
  out_ << header.dump() << '\n';
}

void TrainLogger::log(int epoch, int iter, double l_cls, double l_adv, double lr_f, double lr_d) {
  if (!out_.is_open()) return;
  json j;
  j["epoch"] = epoch;
  j["iter"] = iter;
  j["L_cls"] = l_cls;
  j["L_adv"] = l_adv;
  j["lr_F"] = lr_f;
  j["lr_D"] = lr_d;
  out_ << j.dump() << '\n';
  out_.flush();
}

// ---- checkpoints -------------------------------------------------------

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = std::vector<double>(t.data(), t.data() + t.size());
  return j;
}

Tensor tensor_from_json(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data"))
    throw ValidationError("checkpoint: malformed tensor for " + what);
  std::vector<int> shape = j.at("shape").get<std::vector<int>>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  return Tensor::from(std::move(shape), std::move(data));
}

json momentum_to_json(const SgdOptimizer& opt) {
  json j = json::object();
  for (const auto& [name, v] : opt.momentum_state()) j[name] = tensor_to_json(v);
  return j;
}

void momentum_from_json(const json& j, SgdOptimizer& opt) {
  std::map<std::string, Tensor> state;
  for (auto it = j.begin(); it != j.end(); ++it) state[it.key()] = tensor_from_json(it.value(), it.key());
  opt.set_momentum_state(state);
}

json parse_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint '" + path + "': " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "agra-checkpoint")
    throw ParseError("checkpoint '" + path + "' has an unrecognized format");
  if (j.value("version", 0) != 1)
    throw ValidationError("checkpoint '" + path + "' has unsupported version " + std::to_string(j.value("version", 0)));
  return j;
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.stage = j.value("stage", 0);
  m.epoch = j.value("epoch", 0);
  m.seed = j.value("seed", uint64_t{0});
  if (j.contains("config")) {
    m.config_text = j.at("config").value("text", "");
    m.config_hash = j.at("config").value("hash", "");
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const CheckpointMeta& meta,
                     const ClassDistributionBank* bank, const SgdOptimizer* opt_f, const SgdOptimizer* opt_d) {
  json j;
  j["format"] = "agra-checkpoint";
  j["version"] = 1;
  j["stage"] = meta.stage;
  j["epoch"] = meta.epoch;
  j["seed"] = meta.seed;
  j["config"] = {{"text", meta.config_text}, {"hash", meta.config_hash}};
  json params = json::object();
  for (Param* p : model.all_params()) params[p->name] = tensor_to_json(p->value);
  j["params"] = params;
  if (bank != nullptr && bank->populated) {
    j["bank"] = {{"num_clusters", bank->num_clusters},
                 {"alpha", bank->alpha},
                 {"recluster_period", bank->recluster_period},
                 {"means", tensor_to_json(bank->means)}};
  }
  if (opt_f != nullptr) j["momentum_f"] = momentum_to_json(*opt_f);
  if (opt_d != nullptr) j["momentum_d"] = momentum_to_json(*opt_d);

  std::vector<uint8_t> bytes = json::to_cbor(j);
  fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write on checkpoint '" + path + "'");
}

CheckpointMeta peek_checkpoint(const std::string& path) { return meta_from_json(parse_checkpoint_file(path)); }

CheckpointMeta load_checkpoint(const std::string& path, Model& model, ClassDistributionBank* bank,
                               SgdOptimizer* opt_f, SgdOptimizer* opt_d) {
  json j = parse_checkpoint_file(path);
  if (!j.contains("params") || !j.at("params").is_object())
    throw ValidationError("checkpoint '" + path + "' carries no parameters");
  const json& params = j.at("params");

  std::vector<Param*> live = model.all_params();
  for (Param* p : live) {
    if (!params.contains(p->name)) throw ValidationError("checkpoint misses parameter '" + p->name + "'");
    Tensor t = tensor_from_json(params.at(p->name), p->name);
    if (!t.same_shape(p->value))
      throw ValidationError("checkpoint parameter '" + p->name + "' has shape " + Tensor::shape_str(t.shape()) +
                            ", model expects " + Tensor::shape_str(p->value.shape()));
    p->value = std::move(t);
  }
  if (params.size() != live.size()) {
    for (auto it = params.begin(); it != params.end(); ++it) {
      bool known = std::any_of(live.begin(), live.end(), [&](Param* p) { return p->name == it.key(); });
      if (!known) throw ValidationError("checkpoint carries unknown parameter '" + it.key() + "'");
    }
  }

  if (bank != nullptr && j.contains("bank")) {
    const json& b = j.at("bank");
    bank->num_clusters = b.value("num_clusters", kNumClasses);
    bank->alpha = b.value("alpha", 0.1);
    bank->recluster_period = b.value("recluster_period", 10);
    Tensor means = tensor_from_json(b.at("means"), "bank.means");
    std::vector<int> want = {2, bank->num_clusters, kNumRegions, kRegionDim};
    if (means.shape() != want) throw ValidationError("checkpoint bank means have wrong shape");
    bank->means = std::move(means);
    bank->populated = true;
  }
  if (opt_f != nullptr && j.contains("momentum_f")) momentum_from_json(j.at("momentum_f"), *opt_f);
  if (opt_d != nullptr && j.contains("momentum_d")) momentum_from_json(j.at("momentum_d"), *opt_d);
  return meta_from_json(j);
}

// ---- batching ----------------------------------------------------------

Batch assemble_batch(const DataSet& data, const std::vector<int>& records, bool augment, Rng& rng, bool seal_labels) {
  if (records.empty()) throw ValidationError("empty batch requested");
  const int n = static_cast<int>(records.size());
  Batch b;
  b.images = Tensor::zeros({n, 3, kImageSize, kImageSize});
  b.landmarks.reserve(records.size());
  b.labels.reserve(records.size());
  b.domains.reserve(records.size());
  const int64_t stride = 3 * kImageSize * kImageSize;
  for (int i = 0; i < n; ++i) {
    FaceSample s = data.sample(records[static_cast<size_t>(i)]);
    if (augment && rng.uniform() < 0.5) s = hflip(s);
    std::memcpy(b.images.data() + i * stride, s.image.data(), sizeof(double) * static_cast<size_t>(stride));
    b.landmarks.push_back(s.landmarks);
    b.domains.push_back(s.domain);
    if (seal_labels) {
      b.labels.push_back(GuardedLabel::sealed());
    } else {
      if (!s.label) throw ValidationError("record '" + s.id + "' has no label but labeled training was requested");
      b.labels.push_back(GuardedLabel::open(*s.label));
    }
  }
  return b;
}

namespace {

std::vector<int> open_labels(const Batch& b) {
  std::vector<int> out;
  out.reserve(b.labels.size());
  for (const GuardedLabel& l : b.labels) out.push_back(l.get());
  return out;
}

std::vector<int> slice(const std::vector<int>& order, size_t start, size_t count) {
  size_t end = std::min(order.size(), start + count);
  if (start >= end) throw ValidationError("batch slice out of range");
  return std::vector<int>(order.begin() + static_cast<std::ptrdiff_t>(start),
                          order.begin() + static_cast<std::ptrdiff_t>(end));
}

std::vector<int> source_train_labels(const DataSet& data, const std::vector<int>& records) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (int r : records) {
    const auto& rec = data.manifest().records.at(static_cast<size_t>(r));
    if (!rec.label) throw ValidationError("label-defined clusters need a fully labeled source train split");
    labels.push_back(*rec.label);
  }
  return labels;
}

double split_accuracy(Model& model, const ClassDistributionBank& bank, const DataSet& data,
                      const std::vector<int>& records) {
  if (records.empty()) return 0.0;
  int correct = 0;
  for (int r : records) {
    FaceSample s = data.sample(r);
    if (!s.label) throw ValidationError("accuracy evaluation needs labeled records");
    Prediction p = predict(s, model, bank);
    if (p.label == *s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

void check_finite(const ad::Var& loss, const char* what) {
  if (!loss->value.all_finite()) throw StateError(std::string("non-finite ") + what + " loss; training diverged");
}

}  // namespace

std::vector<RegionFeatureStack> extract_split_stacks(Model& model, const DataSet& data,
                                                     const std::vector<int>& records, int batch_size) {
  std::vector<RegionFeatureStack> stacks;
  stacks.reserve(records.size());
  Rng rng(0);  // unused: no augmentation on extraction passes
  for (size_t off = 0; off < records.size(); off += static_cast<size_t>(batch_size)) {
    std::vector<int> chunk = slice(records, off, static_cast<size_t>(batch_size));
    Batch b = assemble_batch(data, chunk, false, rng, true);
    ad::Tape tape(false);
    RegionStackBatch sb = extract_stack_batch(b.images, b.landmarks, *model.backbone, model.heads, tape);
    for (size_t i = 0; i < chunk.size(); ++i)
      stacks.push_back(model.stack_values(sb, static_cast<int>(i), data.domain()));
  }
  return stacks;
}

ClassDistributionBank build_bank(Model& model, const DataSet& source, const DataSet& target, const Config& cfg) {
  std::vector<int> src_idx = source.manifest().split_indices("train");
  std::vector<int> tgt_idx = target.manifest().split_indices("train");
  if (src_idx.empty() || tgt_idx.empty()) throw ValidationError("bank construction needs train records in both domains");

  std::vector<RegionFeatureStack> s_stacks = extract_split_stacks(model, source, src_idx);
  std::vector<RegionFeatureStack> t_stacks = extract_split_stacks(model, target, tgt_idx);

  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
  const int restarts = static_cast<int>(cfg.get_int("bank.restarts"));

  ClassDistributionBank bank;
  if (cfg.get_enum("bank.mode") == "dataset_level") {
    bank = dataset_level_bank(s_stacks, t_stacks, seed);
  } else {
    const int C = static_cast<int>(cfg.get_int("bank.num_clusters"));
    if (cfg.get_enum("bank.source_clusters") == "labels") {
      if (C != kNumClasses)
        throw ConfigError("bank.source_clusters=labels requires bank.num_clusters=" + std::to_string(kNumClasses));
      std::vector<int> labels = source_train_labels(source, src_idx);
      bank = initialize_bank(s_stacks, t_stacks, C, seed, restarts, &labels);
    } else {
      bank = initialize_bank(s_stacks, t_stacks, C, seed, restarts, nullptr);
    }
  }
  bank.alpha = cfg.get_double("bank.alpha");
  bank.recluster_period = static_cast<int>(cfg.get_int("bank.recluster_period"));
  return bank;
}

// ---- stage 1 ------------------------------------------------------------

CheckpointMeta train_stage1(Model& model, const DataSet& source, const Config& cfg, const Stage1Options& opts) {
  const int epochs = opts.epochs_override > 0 ? opts.epochs_override
                                              : static_cast<int>(cfg.get_int("train.stage1_epochs"));
  std::vector<int> idx = source.manifest().split_indices("train");
  if (idx.empty()) throw ValidationError("source manifest has no train records");

  const size_t bs = static_cast<size_t>(cfg.get_int("train.batch_size"));
  const bool augment = cfg.get_bool("augment.hflip");
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));

  SgdOptimizer opt(model.fg_params(), cfg.get_double("train.lr_f"), cfg.get_double("train.momentum"),
                   cfg.get_double("train.weight_decay"));
  TrainLogger logger =
      opts.log_path.empty() ? TrainLogger() : TrainLogger(opts.log_path, cfg.hash_hex(), seed);

  for (int e = 0; e < epochs; ++e) {
    std::vector<int> order = idx;
    Rng rng(derive_seed(seed, "stage1-epoch-" + std::to_string(e)));
    rng.shuffle(order);
    int iter = 0;
    for (size_t off = 0; off < order.size(); off += bs, ++iter) {
      Batch b = assemble_batch(source, slice(order, off, bs), augment, rng, false);
      const int n = b.size();

      ad::Tape tape(true);
      RegionStackBatch sb = extract_stack_batch(b.images, b.landmarks, *model.backbone, model.heads, tape);
      std::vector<ad::Var> feats;
      feats.reserve(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i)
        feats.push_back(model.feature_self_mirrored(sb, i, b.domains[static_cast<size_t>(i)], tape));
      ad::Var logits = model.classifier.logits(ad::stack(feats), tape);
      ad::Var loss = classification_loss(logits, open_labels(b));
      check_finite(loss, "classification");
      tape.backward_collect(loss);
      opt.step();
      logger.log(e + 1, iter, loss->value.item(), 0.0, opt.lr(), 0.0);
    }
  }

  CheckpointMeta meta;
  meta.stage = 1;
  meta.epoch = epochs;
  meta.seed = seed;
  meta.config_text = cfg.text();
  meta.config_hash = cfg.hash_hex();
  if (!opts.ckpt_path.empty()) save_checkpoint(opts.ckpt_path, model, meta);
  return meta;
}

// ---- stage 2 ------------------------------------------------------------

void train_stage2(Model& model, ClassDistributionBank& bank, const DataSet& source, const DataSet& target,
                  const Config& cfg, const Stage2Options& opts) {
  if (opts.stage1_meta.stage < 1) throw StateError("stage 2 requires a completed stage-1 checkpoint");
  if (!bank.populated) throw StateError("stage 2 requires an initialized distribution bank");

  const int epochs = opts.epochs_override > 0 ? opts.epochs_override
                                              : static_cast<int>(cfg.get_int("train.stage2_epochs"));
  std::vector<int> src_idx = source.manifest().split_indices("train");
  std::vector<int> tgt_idx = target.manifest().split_indices("train");
  if (src_idx.empty() || tgt_idx.empty()) throw ValidationError("stage 2 needs train records in both domains");

  const size_t half = std::max<size_t>(1, static_cast<size_t>(cfg.get_int("train.batch_size")) / 2);
  const bool augment = cfg.get_bool("augment.hflip");
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
  const bool adversarial = cfg.get_bool("train.adversarial");
  const bool grl = cfg.get_enum("train.adv_mode") == "grl";
  const double lambda = cfg.get_double("train.adv_lambda");
  const int decay_epoch = static_cast<int>(cfg.get_int("train.lr_decay_epoch"));
  const int plateau_patience = static_cast<int>(cfg.get_int("train.plateau_patience"));
  const double plateau_delta = cfg.get_double("train.plateau_delta");
  const int stop_patience = static_cast<int>(cfg.get_int("train.early_stop_patience"));
  const std::string bank_update = cfg.get_enum("bank.update");
  const bool iter_updates = bank_update == "full" || bank_update == "iter_only";
  const bool epoch_updates = bank_update == "full" || bank_update == "epoch_only";
  const bool label_clusters = cfg.get_enum("bank.source_clusters") == "labels";
  const int restarts = static_cast<int>(cfg.get_int("bank.restarts"));

  SgdOptimizer opt_f(model.fg_params(), cfg.get_double("train.lr_f"), cfg.get_double("train.momentum"),
                     cfg.get_double("train.weight_decay"));
  SgdOptimizer opt_d(model.disc_params(), cfg.get_double("train.lr_d"), cfg.get_double("train.momentum"),
                     cfg.get_double("train.weight_decay"));
  TrainLogger logger =
      opts.log_path.empty() ? TrainLogger() : TrainLogger(opts.log_path, cfg.hash_hex(), seed);

  std::vector<int> val_idx = source.manifest().split_indices("val");
  if (stop_patience > 0 && val_idx.empty())
    throw ValidationError("early stopping needs a source val split");

  double best_d_loss = std::numeric_limits<double>::infinity();
  int plateau_count = 0;
  double best_val = -1.0;
  int since_best = 0;
  std::map<std::string, Tensor> snapshot;
  const auto take_snapshot = [&]() {
    snapshot.clear();
    for (Param* p : model.all_params()) snapshot[p->name] = p->value;
    snapshot["__bank_means__"] = bank.means;
  };
  const auto restore_snapshot = [&]() {
    if (snapshot.empty()) return;
    for (Param* p : model.all_params()) p->value = snapshot.at(p->name);
    bank.means = snapshot.at("__bank_means__");
  };

  int epochs_run = 0;
  for (int e = 0; e < epochs; ++e, ++epochs_run) {
    if (e > 0 && e == decay_epoch) opt_f.set_lr(opt_f.lr() / 10.0);

    if (epoch_updates && bank.recluster_period > 0 && e > 0 && e % bank.recluster_period == 0) {
      std::vector<RegionFeatureStack> s_stacks = extract_split_stacks(model, source, src_idx);
      std::vector<RegionFeatureStack> t_stacks = extract_split_stacks(model, target, tgt_idx);
      if (label_clusters) {
        std::vector<int> labels = source_train_labels(source, src_idx);
        recluster(bank, s_stacks, t_stacks, derive_seed(seed, "bank-epoch-" + std::to_string(e)), restarts, &labels);
      } else {
        recluster(bank, s_stacks, t_stacks, derive_seed(seed, "bank-epoch-" + std::to_string(e)), restarts, nullptr);
      }
    }

    std::vector<int> src_order = src_idx;
    std::vector<int> tgt_order = tgt_idx;
    Rng rs(derive_seed(seed, "stage2-src-" + std::to_string(e)));
    Rng rt(derive_seed(seed, "stage2-tgt-" + std::to_string(e)));
    rs.shuffle(src_order);
    rt.shuffle(tgt_order);

    size_t iters = std::min(src_order.size(), tgt_order.size()) / half;
    if (iters == 0) iters = 1;

    double d_loss_sum = 0.0;
    size_t d_loss_n = 0;
    for (size_t iter = 0; iter < iters; ++iter) {
      Batch bs_ = assemble_batch(source, slice(src_order, iter * half, half), augment, rs, false);
      Batch bt_ = assemble_batch(target, slice(tgt_order, iter * half, half), augment, rt, true);
      const int ns = bs_.size(), nt = bt_.size();

      ad::Tape tape(true);
      RegionStackBatch sb = extract_stack_batch(bs_.images, bs_.landmarks, *model.backbone, model.heads, tape);
      RegionStackBatch tb = extract_stack_batch(bt_.images, bt_.landmarks, *model.backbone, model.heads, tape);

      std::vector<ad::Var> fs, ft;
      std::vector<RegionFeatureStack> s_vals, t_vals;
      fs.reserve(static_cast<size_t>(ns));
      ft.reserve(static_cast<size_t>(nt));
      for (int i = 0; i < ns; ++i) {
        s_vals.push_back(model.stack_values(sb, i, Domain::source));
        fs.push_back(model.feature_of(sb, i, bank, Domain::source, tape));
      }
      for (int i = 0; i < nt; ++i) {
        t_vals.push_back(model.stack_values(tb, i, Domain::target));
        ft.push_back(model.feature_of(tb, i, bank, Domain::target, tape));
      }
      ad::Var Fs = ad::stack(fs);
      ad::Var Ft = ad::stack(ft);

      ad::Var l_cls = classification_loss(model.classifier.logits(Fs, tape), open_labels(bs_));
      check_finite(l_cls, "classification");

      double l_adv_value = 0.0;
      if (adversarial && !grl) {
        {
          // D step on detached features, before the F,G step sees the
          // updated discriminator.
          ad::Tape dtape(true);
          ad::Var ds = model.discriminator.logits(ad::constant(Fs->value), dtape);
          ad::Var dt = model.discriminator.logits(ad::constant(Ft->value), dtape);
          ad::Var d_loss = domain_adversarial_loss(ds, dt);
          check_finite(d_loss, "discriminator");
          dtape.backward_collect(d_loss);
          opt_d.step();
          d_loss_sum += d_loss->value.item();
          ++d_loss_n;
        }
        ad::Var ds = model.discriminator.logits(Fs, tape, /*frozen=*/true);
        ad::Var dt = model.discriminator.logits(Ft, tape, /*frozen=*/true);
        ad::Var l_adv = domain_adversarial_loss(ds, dt);
        check_finite(l_adv, "adversarial");
        l_adv_value = l_adv->value.item();
        ad::Var total = ad::weighted_sum({l_cls, l_adv}, {1.0, -lambda});
        tape.backward_collect(total);
        opt_f.step();
      } else if (adversarial) {
        ad::Var ds = model.discriminator.logits(ad::grad_reverse(Fs, lambda), tape);
        ad::Var dt = model.discriminator.logits(ad::grad_reverse(Ft, lambda), tape);
        ad::Var l_adv = domain_adversarial_loss(ds, dt);
        check_finite(l_adv, "adversarial");
        l_adv_value = l_adv->value.item();
        ad::Var total = ad::weighted_sum({l_cls, l_adv}, {1.0, 1.0});
        tape.backward_collect(total);
        opt_f.step();
        opt_d.step();
        d_loss_sum += l_adv_value;
        ++d_loss_n;
      } else {
        tape.backward_collect(l_cls);
        opt_f.step();
      }

      if (iter_updates) {
        std::vector<const RegionFeatureStack*> batch_stacks;
        batch_stacks.reserve(s_vals.size() + t_vals.size());
        for (const auto& s : s_vals) batch_stacks.push_back(&s);
        for (const auto& t : t_vals) batch_stacks.push_back(&t);
        update_iteration(bank, batch_stacks, bank.alpha);
      }

      logger.log(e + 1, static_cast<int>(iter), l_cls->value.item(), l_adv_value, opt_f.lr(), opt_d.lr());
    }

    if (adversarial && d_loss_n > 0) {
      double mean_d = d_loss_sum / static_cast<double>(d_loss_n);
      if (mean_d < best_d_loss - plateau_delta) {
        best_d_loss = mean_d;
        plateau_count = 0;
      } else if (++plateau_count >= plateau_patience) {
        opt_d.set_lr(opt_d.lr() / 10.0);
        plateau_count = 0;
      }
    }

    if (stop_patience > 0) {
      double acc = split_accuracy(model, bank, source, val_idx);
      if (acc > best_val) {
        best_val = acc;
        since_best = 0;
        take_snapshot();
      } else if (++since_best >= stop_patience) {
        ++epochs_run;
        break;
      }
    }
  }
  if (stop_patience > 0) restore_snapshot();

  if (!opts.ckpt_path.empty()) {
    CheckpointMeta meta;
    meta.stage = 2;
    meta.epoch = epochs_run;
    meta.seed = seed;
    meta.config_text = cfg.text();
    meta.config_hash = cfg.hash_hex();
    save_checkpoint(opts.ckpt_path, model, meta, &bank, &opt_f, &opt_d);
  }
}

// ---- pseudo-label fine-tuning -------------------------------------------

void finetune_pseudo_labels(Model& model, const DataSet& target, const std::vector<int>& records,
                            const std::vector<int>& pseudo_labels, const Config& cfg, const std::string& log_path) {
  if (records.size() != pseudo_labels.size())
    throw ValidationError("pseudo-label count does not match record count");
  if (records.empty()) throw ValidationError("pseudo-label fine-tuning needs at least one record");
  for (int l : pseudo_labels)
    if (l < 0 || l >= kNumClasses) throw ValidationError("pseudo label out of range");

  const int epochs = static_cast<int>(cfg.get_int("plft.epochs"));
  const size_t bs = static_cast<size_t>(cfg.get_int("train.batch_size"));
  const bool augment = cfg.get_bool("augment.hflip");
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));

  SgdOptimizer opt(model.fg_params(), cfg.get_double("train.lr_f"), cfg.get_double("train.momentum"),
                   cfg.get_double("train.weight_decay"));
  TrainLogger logger = log_path.empty() ? TrainLogger() : TrainLogger(log_path, cfg.hash_hex(), seed);

  std::vector<int> positions(records.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

  for (int e = 0; e < epochs; ++e) {
    std::vector<int> order = positions;
    Rng rng(derive_seed(seed, "plft-epoch-" + std::to_string(e)));
    rng.shuffle(order);
    int iter = 0;
    for (size_t off = 0; off < order.size(); off += bs, ++iter) {
      std::vector<int> pos = slice(order, off, bs);
      std::vector<int> recs, labels;
      recs.reserve(pos.size());
      labels.reserve(pos.size());
      for (int p : pos) {
        recs.push_back(records[static_cast<size_t>(p)]);
        labels.push_back(pseudo_labels[static_cast<size_t>(p)]);
      }
      // True target labels stay sealed; supervision comes from the pseudo
      // labels alone.
      Batch b = assemble_batch(target, recs, augment, rng, true);
      const int n = b.size();

      ad::Tape tape(true);
      RegionStackBatch tb = extract_stack_batch(b.images, b.landmarks, *model.backbone, model.heads, tape);
      std::vector<ad::Var> feats;
      feats.reserve(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i)
        feats.push_back(model.feature_self_mirrored(tb, i, b.domains[static_cast<size_t>(i)], tape));
      ad::Var logits = model.classifier.logits(ad::stack(feats), tape);
      ad::Var loss = classification_loss(logits, labels);
      check_finite(loss, "pseudo-label");
      tape.backward_collect(loss);
      opt.step();
      logger.log(e + 1, iter, loss->value.item(), 0.0, opt.lr(), 0.0);
    }
  }
}

}  // namespace agra
