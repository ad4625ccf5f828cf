#include "agra/bench.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "agra/core/error.hpp"
#include "agra/graph.hpp"
#include "agra/mmd.hpp"

namespace agra {

using nlohmann::json;

namespace fs = std::filesystem;

double evaluate_accuracy(Model& model, const ClassDistributionBank& bank, const DataSet& data,
                         const std::string& split) {
  std::vector<int> records = data.manifest().split_indices(split);
  if (records.empty()) throw ValidationError("evaluation split '" + split + "' is empty");
  int correct = 0;
  for (int r : records) {
    FaceSample s = data.sample(r);
    if (!s.label) throw ValidationError("evaluation split '" + split + "' has unlabeled records");
    Prediction p = predict(s, model, bank);
    if (p.label == *s.label) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

const char* feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::fx: return "F(x)";
    case FeatureKind::bh: return "BH";
    case FeatureKind::bl: return "BL";
    case FeatureKind::bhl: return "BHL";
  }
  return "?";
}

std::vector<Tensor> collect_features(Model& model, const ClassDistributionBank& bank, const DataSet& data,
                                     const std::vector<int>& records, FeatureKind kind) {
  std::vector<RegionFeatureStack> stacks = extract_split_stacks(model, data, records);
  std::vector<Tensor> out;
  out.reserve(stacks.size());
  for (const RegionFeatureStack& st : stacks) {
    switch (kind) {
      case FeatureKind::fx: {
        NodeFeatureMatrix h0 = init_nodes(st, bank);
        out.push_back(model.adapter.propagate(h0, model.fusion));
        break;
      }
      case FeatureKind::bh:
        out.push_back(fused_feature(st, FusionMode::BH, model.fusion));
        break;
      case FeatureKind::bl:
        out.push_back(fused_feature(st, FusionMode::BL, model.fusion));
        break;
      case FeatureKind::bhl:
        out.push_back(fused_feature(st, FusionMode::BHL, model.fusion));
        break;
    }
  }
  return out;
}

std::vector<int> mmd_sample_records(const DataSet& data, const Config& cfg) {
  std::vector<int> records = data.manifest().split_indices("train");
  const size_t cap = static_cast<size_t>(cfg.get_int("mmd.max_samples"));
  if (records.size() > cap) records.resize(cap);
  return records;
}

namespace {

double mmd_between(Model& model, const ClassDistributionBank& bank, const DataSet& source, const DataSet& target,
                   const Config& cfg, FeatureKind kind) {
  std::vector<Tensor> xs = collect_features(model, bank, source, mmd_sample_records(source, cfg), kind);
  std::vector<Tensor> ys = collect_features(model, bank, target, mmd_sample_records(target, cfg), kind);
  std::vector<double> bw = median_bandwidths(xs, ys, cfg.get_double_list("mmd.scales"));
  return compute_mmd(xs, ys, bw);
}

}  // namespace

std::vector<MmdRow> mmd_diagnostics(Model& model, const ClassDistributionBank& bank, const DataSet& source,
                                    const DataSet& target, const Config& cfg) {
  std::vector<MmdRow> rows;
  for (FeatureKind k : {FeatureKind::bh, FeatureKind::bl, FeatureKind::bhl, FeatureKind::fx}) {
    MmdRow row;
    row.target = target.manifest().name;
    row.mode = feature_kind_name(k);
    row.value = mmd_between(model, bank, source, target, cfg, k);
    rows.push_back(row);
  }
  return rows;
}

// ---- stage-1 sharing -----------------------------------------------------

namespace {

// Keys that determine the stage-1 outcome; anything else (method, targets,
// stage-2 knobs) may differ between runs that share a checkpoint.
const std::vector<std::string>& stage1_keys() {
  static const std::vector<std::string> keys = {
      "seed",
      "data.source",
      "backbone.id",
      "backbone.weights",
      "backbone.norm_mean",
      "backbone.norm_std",
      "features.share_local_heads",
      "features.holistic_kernel",
      "augment.hflip",
      "graph.init",
      "graph.freeze_adjacency",
      "graph.mode",
      "graph.t_intra",
      "graph.t_inter",
      "disc.hidden",
      "train.batch_size",
      "train.stage1_epochs",
      "train.lr_f",
      "train.momentum",
      "train.weight_decay",
  };
  return keys;
}

bool stage1_compatible(const CheckpointMeta& meta, const Config& cfg) {
  if (meta.stage < 1) return false;
  Config old = Config::defaults();
  try {
    old.load_text(meta.config_text, "checkpoint");
  } catch (const Error&) {
    return false;
  }
  for (const std::string& k : stage1_keys())
    if (old.get_str(k) != cfg.get_str(k)) return false;
  return true;
}

}  // namespace

CheckpointMeta ensure_stage1(Model& model, const DataSet& source, const Config& cfg, const std::string& ckpt_path,
                             const std::string& log_path) {
  if (fs::exists(ckpt_path)) {
    try {
      CheckpointMeta meta = peek_checkpoint(ckpt_path);
      if (stage1_compatible(meta, cfg)) {
        load_checkpoint(ckpt_path, model);
        return meta;
      }
    } catch (const Error&) {
      // fall through to retraining; the file is stale or unreadable
    }
  }
  Stage1Options opts;
  opts.log_path = log_path;
  opts.ckpt_path = ckpt_path;
  return train_stage1(model, source, cfg, opts);
}

// ---- protocol -------------------------------------------------------------

namespace {

std::string sanitize_name(const std::string& name) {
  std::string out;
  for (char c : name) out.push_back((std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_');
  return out.empty() ? std::string("target") : out;
}

void write_pseudo_audit(const std::string& path, const Config& cfg, const DataSet& target,
                        const std::vector<int>& records, const std::vector<int>& pseudo) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write pseudo-label audit '" + path + "'");
  json header;
  header["config_hash"] = cfg.hash_hex();
  header["seed"] = static_cast<uint64_t>(cfg.get_int("seed"));
  out << header.dump() << '\n';
  for (size_t i = 0; i < records.size(); ++i) {
    json j;
    j["record"] = records[i];
    j["path"] = target.manifest().records[static_cast<size_t>(records[i])].path;
    j["pseudo"] = pseudo[i];
    out << j.dump() << '\n';
  }
}

TargetResult run_one_target(const Config& cfg, const DataSet& source, const std::string& target_path,
                            const std::string& out_dir, const std::string& stage1_ckpt,
                            const CheckpointMeta& s1_meta) {
  TargetResult res;
  DatasetManifest tm = load_manifest(target_path);
  DataSet target(tm, Domain::target);
  res.name = tm.name;

  Model model(cfg);
  load_checkpoint(stage1_ckpt, model);

  const std::string method = cfg.get_enum("method");
  const std::string eval_split = cfg.get_str("eval.split");
  const std::string tag = sanitize_name(tm.name);

  ClassDistributionBank bank = build_bank(model, source, target, cfg);

  if (method == "dt") {
    res.accuracy = evaluate_accuracy(model, bank, target, eval_split);
    return res;
  }

  if (method == "plft") {
    std::vector<int> records = target.manifest().split_indices("train");
    if (records.empty()) throw ValidationError("pseudo-label fine-tuning needs target train records");
    std::vector<int> pseudo;
    pseudo.reserve(records.size());
    for (int r : records) pseudo.push_back(predict(target.sample(r), model, bank).label);
    write_pseudo_audit((fs::path(out_dir) / ("plft_pseudo_" + tag + ".jsonl")).string(), cfg, target, records,
                       pseudo);
    finetune_pseudo_labels(model, target, records, pseudo, cfg,
                           (fs::path(out_dir) / ("plft_log_" + tag + ".jsonl")).string());
    bank = build_bank(model, source, target, cfg);
    res.accuracy = evaluate_accuracy(model, bank, target, eval_split);
    return res;
  }

  // agra and adversarial_holistic: adversarial stage 2 with MMD bookkeeping.
  res.has_mmd = true;
  res.mmd_before = mmd_between(model, bank, source, target, cfg, FeatureKind::fx);

  Stage2Options opts;
  opts.log_path = (fs::path(out_dir) / ("stage2_log_" + tag + ".jsonl")).string();
  opts.ckpt_path = (fs::path(out_dir) / ("stage2_" + tag + ".ckpt")).string();
  opts.stage1_meta = s1_meta;
  train_stage2(model, bank, source, target, cfg, opts);

  res.mmd_after = mmd_between(model, bank, source, target, cfg, FeatureKind::fx);
  res.accuracy = evaluate_accuracy(model, bank, target, eval_split);
  return res;
}

}  // namespace

BenchmarkReport run_protocol(const Config& cfg) {
  const auto t0 = std::chrono::steady_clock::now();

  Config eff = cfg;
  if (cfg.get_enum("method") == "adversarial_holistic") eff.set("graph.mode", "holistic_only");

  const std::string out_dir = resolve_output_dir(cfg.get_str("out.dir"));
  std::error_code dir_ec;
  fs::create_directories(out_dir, dir_ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create output directory '" + out_dir + "'");

  const std::string source_path = cfg.get_str("data.source");
  if (source_path.empty()) throw ConfigError("data.source is not set");
  std::vector<std::string> targets = cfg.get_str_list("data.targets");
  if (targets.empty()) throw ConfigError("data.targets is not set");

  DatasetManifest sm = load_manifest(source_path);
  DataSet source(sm, Domain::source);

  BenchmarkReport report;
  report.method = cfg.get_enum("method");
  report.source_name = sm.name;
  report.backbone = cfg.get_str("backbone.id");
  report.config_text = cfg.text();
  report.config_hash = cfg.hash_hex();
  report.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  report.out_dir = out_dir;

  const std::string stage1_ckpt = (fs::path(out_dir) / "stage1.ckpt").string();
  Model base(eff);
  CheckpointMeta s1_meta =
      ensure_stage1(base, source, eff, stage1_ckpt, (fs::path(out_dir) / "stage1_log.jsonl").string());

  for (const std::string& t : targets) {
    TargetResult res;
    try {
      res = run_one_target(eff, source, t, out_dir, stage1_ckpt, s1_meta);
    } catch (const std::exception& e) {
      res.name = res.name.empty() ? fs::path(t).stem().string() : res.name;
      res.failed = true;
      res.error = e.what();
    }
    report.targets.push_back(std::move(res));
  }

  double sum = 0.0;
  int n = 0;
  for (const TargetResult& r : report.targets)
    if (!r.failed) {
      sum += r.accuracy;
      ++n;
    }
  report.mean_accuracy = n > 0 ? sum / n : 0.0;

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_report_json(report, (fs::path(out_dir) / "report.json").string());
  write_report_markdown(report, (fs::path(out_dir) / "report.md").string());
  return report;
}

// ---- report output ---------------------------------------------------------

namespace {

std::string fmt_acc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string report_table(const BenchmarkReport& r) {
  std::ostringstream os;
  os << "| Method | Source | Backbone |";
  for (const TargetResult& t : r.targets) os << " " << t.name << " |";
  os << " Mean |\n";
  os << "|---|---|---|";
  for (size_t i = 0; i < r.targets.size(); ++i) os << "---|";
  os << "---|\n";
  os << "| " << r.method << " | " << r.source_name << " | " << r.backbone << " |";
  for (const TargetResult& t : r.targets) os << " " << (t.failed ? std::string("failed") : fmt_acc(t.accuracy)) << " |";
  os << " " << fmt_acc(r.mean_accuracy) << " |\n";
  return os.str();
}

void write_report_json(const BenchmarkReport& r, const std::string& path) {
  json j;
  j["format"] = "agra-report";
  j["method"] = r.method;
  j["source"] = r.source_name;
  j["backbone"] = r.backbone;
  j["seed"] = r.seed;
  j["config"] = {{"text", r.config_text}, {"hash", r.config_hash}};
  j["wall_seconds"] = r.wall_seconds;
  j["mean_accuracy"] = r.mean_accuracy;
  json ts = json::array();
  for (const TargetResult& t : r.targets) {
    json e;
    e["name"] = t.name;
    e["failed"] = t.failed;
    if (t.failed) e["error"] = t.error;
    else e["accuracy"] = t.accuracy;
    if (t.has_mmd) {
      e["mmd_before"] = t.mmd_before;
      e["mmd_after"] = t.mmd_after;
    }
    ts.push_back(e);
  }
  j["targets"] = ts;
  fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report '" + path + "'");
  out << j.dump(2) << '\n';
}

void write_report_markdown(const BenchmarkReport& r, const std::string& path) {
  fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report '" + path + "'");
  out << "# Benchmark report\n\n";
  out << "- method: " << r.method << "\n";
  out << "- config_hash: " << r.config_hash << "\n";
  out << "- seed: " << r.seed << "\n";
  out << "- wall_seconds: " << r.wall_seconds << "\n\n";
  out << report_table(r);
  bool any_mmd = false;
  for (const TargetResult& t : r.targets) any_mmd = any_mmd || t.has_mmd;
  if (any_mmd) {
    out << "\n## MMD diagnostics\n\n";
    for (const TargetResult& t : r.targets) {
      if (!t.has_mmd) continue;
      out << "- " << t.name << ": before " << t.mmd_before << ", after " << t.mmd_after << "\n";
    }
  }
  bool any_failed = false;
  for (const TargetResult& t : r.targets) any_failed = any_failed || t.failed;
  if (any_failed) {
    out << "\n## Failures\n\n";
    for (const TargetResult& t : r.targets)
      if (t.failed) out << "- " << t.name << ": " << t.error << "\n";
  }
}

void dump_features(Model& model, const ClassDistributionBank& bank, const DataSet& data, const Config& cfg,
                   const std::string& out_path) {
  std::vector<int> records(static_cast<size_t>(data.size()));
  for (size_t i = 0; i < records.size(); ++i) records[i] = static_cast<int>(i);
  std::vector<Tensor> feats = collect_features(model, bank, data, records, FeatureKind::fx);

  fs::path p(out_path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot write feature dump '" + out_path + "'");
  char buf[64];
  for (size_t i = 0; i < feats.size(); ++i) {
    const Tensor& f = feats[i];
    for (int64_t k = 0; k < f.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", f[k]);
      out << buf << ' ';
    }
    const auto& rec = data.manifest().records[i];
    out << (rec.label ? *rec.label : -1) << ' ' << static_cast<int>(data.domain()) << '\n';
  }
  if (!out) throw IoError("short write on feature dump '" + out_path + "'");

  json meta;
  meta["config_hash"] = cfg.hash_hex();
  meta["seed"] = static_cast<uint64_t>(cfg.get_int("seed"));
  meta["rows"] = feats.size();
  meta["columns"] = kFeatureDim + 2;
  std::ofstream mout(out_path + ".meta.json", std::ios::trunc);
  if (!mout) throw IoError("cannot write feature dump metadata for '" + out_path + "'");
  mout << meta.dump(2) << '\n';
}

}  // namespace agra
