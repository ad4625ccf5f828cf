#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agra/bench.hpp"
#include "agra/core/error.hpp"
#include "agra/mmd.hpp"
#include "agra/toydata.hpp"
#include "agra/train.hpp"

namespace fs = std::filesystem;

using namespace agra;

namespace {

Config resolve_config(const std::string& config_path, const std::vector<std::string>& sets) {
  Config cfg = Config::defaults();
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const std::string& s : sets) cfg.set_override(s);
  return cfg;
}

std::string out_dir_of(const Config& cfg) {
  std::string dir = resolve_output_dir(cfg.get_str("out.dir"));
  fs::create_directories(dir);
  return dir;
}

std::string default_checkpoint(const std::string& out_dir) {
  const std::string s2 = (fs::path(out_dir) / "stage2.ckpt").string();
  if (fs::exists(s2)) return s2;
  const std::string s1 = (fs::path(out_dir) / "stage1.ckpt").string();
  if (fs::exists(s1)) return s1;
  throw ValidationError("no checkpoint under '" + out_dir + "'; pass --checkpoint");
}

DataSet load_dataset(const std::string& manifest_path, Domain domain) {
  return DataSet(load_manifest(manifest_path), domain);
}

DataSet source_dataset(const Config& cfg) {
  const std::string path = cfg.get_str("data.source");
  if (path.empty()) throw ConfigError("data.source is not set");
  return load_dataset(path, Domain::source);
}

DataSet first_target_dataset(const Config& cfg) {
  std::vector<std::string> targets = cfg.get_str_list("data.targets");
  if (targets.empty()) throw ConfigError("data.targets is not set");
  return load_dataset(targets.front(), Domain::target);
}

// Bank from the checkpoint when it carries one, rebuilt from the configured
// manifests otherwise.
ClassDistributionBank checkpoint_bank(Model& model, ClassDistributionBank&& loaded, const Config& cfg) {
  if (loaded.populated) return std::move(loaded);
  DataSet source = source_dataset(cfg);
  DataSet target = first_target_dataset(cfg);
  return build_bank(model, source, target, cfg);
}

int cmd_train(const Config& cfg, int stage) {
  const std::string out_dir = out_dir_of(cfg);
  const std::string s1_path = (fs::path(out_dir) / "stage1.ckpt").string();
  const std::string s2_path = (fs::path(out_dir) / "stage2.ckpt").string();

  Model model(cfg);
  DataSet source = source_dataset(cfg);

  CheckpointMeta s1_meta;
  if (stage == 2) {
    if (!fs::exists(s1_path))
      throw StateError("stage 2 requires a completed stage-1 checkpoint; run train --stage 1 first");
    s1_meta = load_checkpoint(s1_path, model);
    if (s1_meta.stage < 1) throw StateError("'" + s1_path + "' is not a stage-1 checkpoint");
  } else {
    Stage1Options opts;
    opts.ckpt_path = s1_path;
    opts.log_path = (fs::path(out_dir) / "stage1_log.jsonl").string();
    s1_meta = train_stage1(model, source, cfg, opts);
    std::cout << "stage-1 checkpoint: " << s1_path << "\n";
  }
  if (stage == 1) return 0;

  DataSet target = first_target_dataset(cfg);
  ClassDistributionBank bank = build_bank(model, source, target, cfg);
  Stage2Options opts;
  opts.ckpt_path = s2_path;
  opts.log_path = (fs::path(out_dir) / "stage2_log.jsonl").string();
  opts.stage1_meta = s1_meta;
  train_stage2(model, bank, source, target, cfg, opts);
  std::cout << "stage-2 checkpoint: " << s2_path << "\n";
  return 0;
}

int cmd_bench(const Config& cfg) {
  BenchmarkReport report = run_protocol(cfg);
  std::cout << report_table(report);
  for (const TargetResult& t : report.targets)
    if (t.failed) std::cout << "target " << t.name << " failed: " << t.error << "\n";
  std::cout << "report files under " << report.out_dir << "\n";
  return 0;
}

int cmd_mmd(const Config& cfg, const std::string& checkpoint) {
  const std::string out_dir = out_dir_of(cfg);
  const std::string ckpt = checkpoint.empty() ? default_checkpoint(out_dir) : checkpoint;

  DataSet source = source_dataset(cfg);
  std::vector<std::string> targets = cfg.get_str_list("data.targets");
  if (targets.empty()) throw ConfigError("data.targets is not set");

  Model model(cfg);
  ClassDistributionBank loaded;
  load_checkpoint(ckpt, model, &loaded);
  ClassDistributionBank bank = checkpoint_bank(model, std::move(loaded), cfg);

  const std::string out_path = (fs::path(out_dir) / "mmd.txt").string();
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + out_path + "'");
  char line[160];
  std::snprintf(line, sizeof(line), "# config_hash %s seed %llu\n", cfg.hash_hex().c_str(),
                static_cast<unsigned long long>(cfg.get_int("seed")));
  out << line;
  std::snprintf(line, sizeof(line), "%-24s %-6s %s\n", "target", "mode", "mmd");
  out << line;
  std::cout << line;
  for (const std::string& t : targets) {
    DataSet target = load_dataset(t, Domain::target);
    for (const MmdRow& row : mmd_diagnostics(model, bank, source, target, cfg)) {
      std::snprintf(line, sizeof(line), "%-24s %-6s %.12g\n", row.target.c_str(), row.mode.c_str(), row.value);
      out << line;
      std::cout << line;
    }
  }
  std::cout << "written to " << out_path << "\n";
  return 0;
}

int cmd_dump_features(const Config& cfg, const std::string& manifest, const std::string& domain,
                      const std::string& checkpoint, const std::string& out_path_arg) {
  const std::string out_dir = out_dir_of(cfg);
  const std::string ckpt = checkpoint.empty() ? default_checkpoint(out_dir) : checkpoint;
  const std::string out_path =
      out_path_arg.empty() ? (fs::path(out_dir) / "features.txt").string() : out_path_arg;

  Model model(cfg);
  ClassDistributionBank loaded;
  load_checkpoint(ckpt, model, &loaded);
  ClassDistributionBank bank = checkpoint_bank(model, std::move(loaded), cfg);

  DataSet data = load_dataset(manifest, domain == "source" ? Domain::source : Domain::target);
  dump_features(model, bank, data, cfg, out_path);
  std::cout << "features written to " << out_path << "\n";
  return 0;
}

int cmd_make_toy_data(const Config& cfg) {
  ToyDataPaths paths = make_toy_data(cfg);
  std::cout << "source manifest: " << paths.source_manifest << "\n";
  std::cout << "target manifest: " << paths.target_manifest << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AGRA: adversarial graph representation adaptation for cross-domain facial expression recognition"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file (key = value lines)");
    sub->add_option("--set", sets, "override, e.g. --set train.batch_size=16 (repeatable)");
  };

  CLI::App* train = app.add_subcommand("train", "two-stage training on the configured source/target");
  int stage = 0;
  train->add_option("--stage", stage, "1: stage 1 only; 2: stage 2 only (needs a stage-1 checkpoint); default both")
      ->check(CLI::Range(0, 2));
  add_common(train);

  CLI::App* bench = app.add_subcommand("bench", "run the evaluation protocol and write report files");
  add_common(bench);

  CLI::App* mmd = app.add_subcommand("mmd", "MMD diagnostics per feature mode and target");
  std::string mmd_ckpt;
  mmd->add_option("--checkpoint", mmd_ckpt, "checkpoint to analyze (default: stage2.ckpt, then stage1.ckpt)");
  add_common(mmd);

  CLI::App* dump = app.add_subcommand("dump-features", "write F(x) rows for a manifest");
  std::string dump_manifest, dump_domain = "target", dump_ckpt, dump_out;
  dump->add_option("--manifest", dump_manifest, "dataset manifest to embed")->required();
  dump->add_option("--domain", dump_domain, "domain tag for the manifest")
      ->check(CLI::IsMember({"source", "target"}));
  dump->add_option("--checkpoint", dump_ckpt, "checkpoint to use (default: stage2.ckpt, then stage1.ckpt)");
  dump->add_option("--out", dump_out, "output path (default: <out.dir>/features.txt)");
  add_common(dump);

  CLI::App* toy = app.add_subcommand("make-toy-data", "write the synthetic two-domain fixture");
  add_common(toy);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    Config cfg = resolve_config(config_path, sets);
    if (train->parsed()) return cmd_train(cfg, stage);
    if (bench->parsed()) return cmd_bench(cfg);
    if (mmd->parsed()) return cmd_mmd(cfg, mmd_ckpt);
    if (dump->parsed()) return cmd_dump_features(cfg, dump_manifest, dump_domain, dump_ckpt, dump_out);
    if (toy->parsed()) return cmd_make_toy_data(cfg);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
