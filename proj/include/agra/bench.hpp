#pragma once

#include <string>
#include <vector>

#include "agra/bank.hpp"
#include "agra/config.hpp"
#include "agra/data.hpp"
#include "agra/model.hpp"
#include "agra/train.hpp"

namespace agra {

// 100 * (#argmax-correct / #samples) over the given split, which must be
// nonempty and fully labeled.
double evaluate_accuracy(Model& model, const ClassDistributionBank& bank, const DataSet& data,
                         const std::string& split);

enum class FeatureKind { fx, bh, bl, bhl };
const char* feature_kind_name(FeatureKind k);

// Value-level feature sets for diagnostics: F(x) through the graph, or the
// fused holistic / local / holistic-local vectors.
std::vector<Tensor> collect_features(Model& model, const ClassDistributionBank& bank, const DataSet& data,
                                     const std::vector<int>& records, FeatureKind kind);

// First min(n, mmd.max_samples) train records, manifest order.
std::vector<int> mmd_sample_records(const DataSet& data, const Config& cfg);

struct MmdRow {
  std::string target;
  std::string mode;  // BH | BL | BHL | F(x)
  double value = 0.0;
};

// MMD between source and target train features for all four feature modes.
std::vector<MmdRow> mmd_diagnostics(Model& model, const ClassDistributionBank& bank, const DataSet& source,
                                    const DataSet& target, const Config& cfg);

struct TargetResult {
  std::string name;
  bool failed = false;
  std::string error;
  double accuracy = 0.0;  // percent
  bool has_mmd = false;
  double mmd_before = 0.0;
  double mmd_after = 0.0;
};

struct BenchmarkReport {
  std::string method;
  std::string source_name;
  std::string backbone;
  std::vector<TargetResult> targets;
  double mean_accuracy = 0.0;  // over non-failed targets
  std::string config_text;
  std::string config_hash;
  uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::string out_dir;
};

// Executes the configured method against every target; a failing target is
// recorded and skipped, never fatal. Writes report.json and report.md under
// the output directory. Stage-1 training is shared across targets through
// out_dir/stage1.ckpt and reused when compatible with the config.
BenchmarkReport run_protocol(const Config& cfg);

std::string report_table(const BenchmarkReport& r);  // aligned markdown table
void write_report_json(const BenchmarkReport& r, const std::string& path);
void write_report_markdown(const BenchmarkReport& r, const std::string& path);

// One row per manifest record, manifest order: 384 F(x) values, label
// (-1 when absent), domain index. Sidecar <out_path>.meta.json carries the
// config hash, seed, and row count.
void dump_features(Model& model, const ClassDistributionBank& bank, const DataSet& data, const Config& cfg,
                   const std::string& out_path);

// Trains stage 1 (or loads a compatible checkpoint at `ckpt_path`) and
// returns its metadata. Compatibility: same seed and same values for every
// stage-1-relevant config key.
CheckpointMeta ensure_stage1(Model& model, const DataSet& source, const Config& cfg, const std::string& ckpt_path,
                             const std::string& log_path);

}  // namespace agra
