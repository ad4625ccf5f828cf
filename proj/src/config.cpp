#include "agra/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "agra/core/error.hpp"

namespace agra {

namespace {

enum class Kind { Int, Float, Bool, Str, Enum, FloatList, StrList };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* def;
  std::vector<const char*> allowed;  // Enum only
  const char* doc;
};

// The full schema. Every module's knobs live here so any artifact can embed
// one resolved snapshot.
const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s = {
      {"seed", Kind::Int, "1234", {}, "global RNG seed; all sub-streams derive from it"},
      {"method", Kind::Enum, "agra", {"agra", "dt", "plft", "adversarial_holistic"}, "adaptation method to run"},
      {"out.dir", Kind::Str, "out", {}, "output directory (re-rooted by AGRA_OUTPUT_ROOT when set)"},

      {"data.source", Kind::Str, "", {}, "source dataset manifest path"},
      {"data.targets", Kind::StrList, "", {}, "comma-separated target manifest paths"},

      {"backbone.id", Kind::Str, "toy", {}, "backbone registry id (toy, resnet50, resnet18, mobilenetv2)"},
      {"backbone.weights", Kind::Str, "", {}, "optional external pretrained weight file"},
      {"backbone.norm_mean", Kind::FloatList, "0.5,0.5,0.5", {}, "per-channel mean subtracted after [0,1] scaling"},
      {"backbone.norm_std", Kind::FloatList, "0.25,0.25,0.25", {}, "per-channel std divisor"},

      {"features.share_local_heads", Kind::Bool, "false", {}, "one shared head for the five local regions"},
      {"features.holistic_kernel", Kind::Int, "1", {}, "kernel size of the 512-to-64 projection (odd)"},
      {"augment.hflip", Kind::Bool, "false", {}, "random horizontal flip on training batches"},

      {"graph.init", Kind::Enum, "prior", {"prior", "random", "ones"}, "adjacency initialization"},
      {"graph.freeze_adjacency", Kind::Bool, "false", {}, "exclude adjacency matrices from training"},
      {"graph.mode",
       Kind::Enum,
       "full",
       {"full", "intra_only", "inter_only", "single", "holistic_only", "concat"},
       "graph propagation variant"},
      {"graph.t_intra", Kind::Int, "2", {}, "number of intra-domain GCN layers (1..3)"},
      {"graph.t_inter", Kind::Int, "1", {}, "number of inter-domain GCN layers (1..3)"},

      {"bank.alpha", Kind::Float, "0.1", {}, "moving-average rate for per-iteration bank updates"},
      {"bank.recluster_period", Kind::Int, "10", {}, "recluster the bank every E epochs"},
      {"bank.num_clusters", Kind::Int, "7", {}, "clusters per domain"},
      {"bank.mode", Kind::Enum, "per_class", {"per_class", "dataset_level"}, "per-class bank or C=1 dataset bank"},
      {"bank.update", Kind::Enum, "full", {"full", "iter_only", "epoch_only"}, "which bank update paths run"},
      {"bank.source_clusters", Kind::Enum, "kmeans", {"kmeans", "labels"}, "source clusters from k-means or labels"},
      {"bank.restarts", Kind::Int, "10", {}, "k-means restarts"},

      {"disc.hidden", Kind::Int, "128", {}, "discriminator hidden width"},

      {"train.adversarial", Kind::Bool, "true", {}, "enable the adversarial objective in stage 2"},
      {"train.adv_mode", Kind::Enum, "alternating", {"alternating", "grl"}, "explicit D/F steps or gradient reversal"},
      {"train.adv_lambda", Kind::Float, "1.0", {}, "weight of the adversarial term in the F,G objective"},
      {"train.batch_size", Kind::Int, "32", {}, "total batch size (stage 2 splits it half source, half target)"},
      {"train.stage1_epochs", Kind::Int, "15", {}, "stage-1 epochs"},
      {"train.stage2_epochs", Kind::Int, "20", {}, "stage-2 epochs"},
      {"train.lr_f", Kind::Float, "0.0001", {}, "feature/classifier learning rate"},
      {"train.lr_d", Kind::Float, "0.001", {}, "discriminator learning rate"},
      {"train.momentum", Kind::Float, "0.9", {}, "SGD momentum"},
      {"train.weight_decay", Kind::Float, "0.0005", {}, "SGD weight decay"},
      {"train.lr_decay_epoch", Kind::Int, "10", {}, "divide the feature lr by 10 after this many stage-2 epochs"},
      {"train.plateau_patience", Kind::Int, "3", {}, "epochs without D-loss improvement before lr_d decays"},
      {"train.plateau_delta", Kind::Float, "0.001", {}, "minimum D-loss improvement that resets the plateau"},
      {"train.early_stop_patience", Kind::Int, "0", {}, "stop stage 2 after this many epochs without source-val gain (0 disables)"},

      {"plft.epochs", Kind::Int, "5", {}, "pseudo-label fine-tuning epochs"},

      {"eval.split", Kind::Str, "test", {}, "manifest split used for accuracy evaluation"},

      {"mmd.scales", Kind::FloatList, "0.25,0.5,1,2,4", {}, "bandwidth multiples of the median heuristic"},
      {"mmd.max_samples", Kind::Int, "1000", {}, "cap on per-set samples used in MMD diagnostics"},

      {"toy.dir", Kind::Str, "toydata", {}, "output directory for the synthetic fixture"},
      {"toy.train", Kind::Int, "2000", {}, "training samples per domain"},
      {"toy.val", Kind::Int, "200", {}, "validation samples per domain"},
      {"toy.test", Kind::Int, "400", {}, "test samples per domain"},
      {"toy.shift", Kind::Float, "1.0", {}, "domain shift strength (0 = identical domains)"},
      {"toy.classes", Kind::Int, "7", {}, "number of expression classes rendered (2..7)"},
  };
  return s;
}

const KeySpec& find_spec(const std::string& key) {
  for (const auto& ks : schema())
    if (key == ks.key) return ks;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace

Config Config::defaults() {
  Config c;
  for (const auto& ks : schema()) c.values_[ks.key] = ks.def;
  return c;
}

void Config::validate(const std::string& key, const std::string& value) const {
  const KeySpec& ks = find_spec(key);
  switch (ks.kind) {
    case Kind::Int: {
      try {
        size_t pos = 0;
        (void)std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
      }
      break;
    }
    case Kind::Float: {
      try {
        size_t pos = 0;
        (void)std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
      }
      break;
    }
    case Kind::Bool: {
      bool b;
      if (!parse_bool(value, b)) throw ConfigError("config key '" + key + "': expected boolean, got '" + value + "'");
      break;
    }
    case Kind::Enum: {
      for (const char* a : ks.allowed)
        if (value == a) return;
      std::string msg = "config key '" + key + "': '" + value + "' not in {";
      for (size_t i = 0; i < ks.allowed.size(); ++i) msg += std::string(i ? "," : "") + ks.allowed[i];
      throw ConfigError(msg + "}");
    }
    case Kind::FloatList: {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
          size_t pos = 0;
          (void)std::stod(item, &pos);
          if (pos != item.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
          throw ConfigError("config key '" + key + "': bad list element '" + item + "'");
        }
      }
      break;
    }
    case Kind::Str:
    case Kind::StrList:
      break;
  }
}

void Config::set(const std::string& key, const std::string& value) {
  validate(key, value);
  values_[key] = value;
}

void Config::set_override(const std::string& spec) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + spec + "' is not of the form key=value");
  set(trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

void Config::load_text(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path);
}

std::string Config::get_str(const std::string& key) const {
  find_spec(key);
  auto it = values_.find(key);
  return it == values_.end() ? std::string() : it->second;
}

int64_t Config::get_int(const std::string& key) const { return std::stoll(get_str(key)); }

double Config::get_double(const std::string& key) const { return std::stod(get_str(key)); }

bool Config::get_bool(const std::string& key) const {
  bool b = false;
  if (!parse_bool(get_str(key), b)) throw ConfigError("config key '" + key + "' is not boolean");
  return b;
}

std::string Config::get_enum(const std::string& key) const {
  std::string v = get_str(key);
  validate(key, v);
  return v;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get_str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::vector<std::string> Config::get_str_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get_str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string Config::text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

uint64_t Config::hash() const {
  std::string t = text();
  uint64_t h = 14695981039346656037ULL;
  for (char c : t) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string Config::hash_hex() const {
  static const char* hexd = "0123456789abcdef";
  uint64_t h = hash();
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hexd[h & 0xF];
    h >>= 4;
  }
  return out;
}

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& ks : schema()) k.push_back(ks.key);
    return k;
  }();
  return keys;
}

std::string Config::describe(const std::string& key) { return find_spec(key).doc; }

std::string resolve_output_dir(const std::string& dir) {
  const char* root = std::getenv("AGRA_OUTPUT_ROOT");
  if (root == nullptr || *root == '\0') return dir;
  std::filesystem::path p(dir);
  if (p.is_absolute()) return dir;
  return (std::filesystem::path(root) / p).string();
}

}  // namespace agra
