#include "osproto/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace osproto {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long to_long(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long x = 0;
  try {
    x = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty())
    throw Error("config '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

int to_int(const std::string& key, const std::string& v) { return int(to_long(key, v)); }

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const long x = to_long(key, v);
  if (x < 0) throw Error("config '" + key + "': expected a non-negative integer");
  return std::uint64_t(x);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw Error("config '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw Error("config '" + key + "': expected a boolean, got '" + v + "'");
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

std::string num(double x) { return format_double(x); }

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Field> table = {
      {"data", [](C& c, S, S v) { c.data = v; }, [](const C& c) { return c.data.string(); }},
      {"init", [](C& c, S, S v) { c.init = v; }, [](const C& c) { return c.init.string(); }},
      {"checkpoint", [](C& c, S, S v) { c.checkpoint = v; },
       [](const C& c) { return c.checkpoint.string(); }},
      {"pretrained", [](C& c, S, S v) { c.pretrained = v; },
       [](const C& c) { return c.pretrained.string(); }},
      {"out-dir", [](C& c, S, S v) { c.out_dir = v; },
       [](const C& c) { return c.out_dir.string(); }},
      {"out", [](C& c, S, S v) { c.out = v; }, [](const C& c) { return c.out; }},
      {"classes", [](C& c, S k, S v) { c.synthetic.n_categories = to_int(k, v); },
       [](const C& c) { return std::to_string(c.synthetic.n_categories); }},
      {"per-class", [](C& c, S k, S v) { c.synthetic.per_category = to_int(k, v); },
       [](const C& c) { return std::to_string(c.synthetic.per_category); }},
      {"dim", [](C& c, S k, S v) { c.synthetic.dim = to_long(k, v); },
       [](const C& c) { return std::to_string(c.synthetic.dim); }},
      {"mean-scale", [](C& c, S k, S v) { c.synthetic.mean_scale = to_double(k, v); },
       [](const C& c) { return num(c.synthetic.mean_scale); }},
      {"intra-scale", [](C& c, S k, S v) { c.synthetic.intra_scale = to_double(k, v); },
       [](const C& c) { return num(c.synthetic.intra_scale); }},
      {"splits",
       [](C& c, S k, S v) {
         const auto parts = split_list(v);
         if (parts.size() != 3) throw Error("config 'splits': expected three fractions");
         for (int i = 0; i < 3; ++i) c.synthetic.split_fractions[std::size_t(i)] = to_double(k, parts[std::size_t(i)]);
       },
       [](const C& c) {
         const auto& f = c.synthetic.split_fractions;
         return num(f[0]) + "," + num(f[1]) + "," + num(f[2]);
       }},
      {"hidden",
       [](C& c, S k, S v) {
         c.hidden.clear();
         for (const auto& p : split_list(v)) c.hidden.push_back(to_long(k, p));
       },
       [](const C& c) {
         std::vector<std::string> parts;
         for (auto h : c.hidden) parts.push_back(std::to_string(h));
         return join(parts);
       }},
      {"feature-dim", [](C& c, S k, S v) { c.feature_dim = to_long(k, v); },
       [](const C& c) { return std::to_string(c.feature_dim); }},
      {"pretrain-epochs", [](C& c, S k, S v) { c.pretrain.epochs = to_int(k, v); },
       [](const C& c) { return std::to_string(c.pretrain.epochs); }},
      {"batch-size", [](C& c, S k, S v) { c.pretrain.batch_size = to_int(k, v); },
       [](const C& c) { return std::to_string(c.pretrain.batch_size); }},
      {"pretrain-lr", [](C& c, S k, S v) { c.pretrain.lr = to_double(k, v); },
       [](const C& c) { return num(c.pretrain.lr); }},
      {"seed", [](C& c, S k, S v) { c.seed = to_u64(k, v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"episodes", [](C& c, S k, S v) { c.stage1.episodes = to_int(k, v); },
       [](const C& c) { return std::to_string(c.stage1.episodes); }},
      {"lr-encoder", [](C& c, S k, S v) { c.stage1.lr_encoder = to_double(k, v); },
       [](const C& c) { return num(c.stage1.lr_encoder); }},
      {"lr-head", [](C& c, S k, S v) { c.stage1.lr_head = to_double(k, v); },
       [](const C& c) { return num(c.stage1.lr_head); }},
      {"lr-decay", [](C& c, S k, S v) { c.stage1.lr_decay_factor = to_double(k, v); },
       [](const C& c) { return num(c.stage1.lr_decay_factor); }},
      {"lr-decay-interval", [](C& c, S k, S v) { c.stage1.lr_decay_interval = to_int(k, v); },
       [](const C& c) { return std::to_string(c.stage1.lr_decay_interval); }},
      {"momentum",
       [](C& c, S k, S v) {
         c.stage1.momentum = c.stage2.momentum = c.pretrain.momentum = to_double(k, v);
       },
       [](const C& c) { return num(c.stage1.momentum); }},
      {"weight-decay",
       [](C& c, S k, S v) {
         c.stage1.weight_decay = c.stage2.weight_decay = c.pretrain.weight_decay =
             to_double(k, v);
       },
       [](const C& c) { return num(c.stage1.weight_decay); }},
      {"iterations", [](C& c, S k, S v) { c.stage2.iterations = to_int(k, v); },
       [](const C& c) { return std::to_string(c.stage2.iterations); }},
      {"stage2-lr-encoder", [](C& c, S k, S v) { c.stage2.lr_encoder = to_double(k, v); },
       [](const C& c) { return num(c.stage2.lr_encoder); }},
      {"lr-classifier", [](C& c, S k, S v) { c.stage2.lr_classifier = to_double(k, v); },
       [](const C& c) { return num(c.stage2.lr_classifier); }},
      {"m-open", [](C& c, S k, S v) { c.stage2.m_open = to_int(k, v); },
       [](const C& c) { return std::to_string(c.stage2.m_open); }},
      {"base-category-limit", [](C& c, S k, S v) { c.base_category_limit = to_int(k, v); },
       [](const C& c) { return std::to_string(c.base_category_limit); }},
      {"lite-pseudo", [](C& c, S k, S v) { c.stage2.lite_pseudo = to_bool(k, v); },
       [](const C& c) { return std::string(c.stage2.lite_pseudo ? "1" : "0"); }},
      {"lite-freeze", [](C& c, S k, S v) { c.stage2.lite_freeze = to_bool(k, v); },
       [](const C& c) { return std::string(c.stage2.lite_freeze ? "1" : "0"); }},
      {"variant", [](C& c, S, S v) { c.variant = parse_eval_variant(v); },
       [](const C& c) { return std::string(to_string(c.variant)); }},
      {"head", [](C& c, S, S v) { c.head = parse_head_kind(v); },
       [](const C& c) { return std::string(to_string(c.head)); }},
      {"n-way", [](C& c, S k, S v) { c.n_way = to_int(k, v); },
       [](const C& c) { return std::to_string(c.n_way); }},
      {"k-shot", [](C& c, S k, S v) { c.k_shot = to_int(k, v); },
       [](const C& c) { return std::to_string(c.k_shot); }},
      {"queries", [](C& c, S k, S v) { c.queries = to_int(k, v); },
       [](const C& c) { return std::to_string(c.queries); }},
      {"open-ways", [](C& c, S k, S v) { c.open_ways = to_int(k, v); },
       [](const C& c) { return std::to_string(c.open_ways); }},
      {"tasks", [](C& c, S k, S v) { c.task_count = to_int(k, v); },
       [](const C& c) { return std::to_string(c.task_count); }},
      {"workers", [](C& c, S k, S v) { c.workers = to_int(k, v); },
       [](const C& c) { return std::to_string(c.workers); }},
      {"sweep", [](C& c, S, S v) { c.sweep = v; }, [](const C& c) { return c.sweep; }},
      {"values", [](C& c, S, S v) { c.values = split_list(v); },
       [](const C& c) { return join(c.values); }},
      {"variants", [](C& c, S, S v) { c.report_variants = split_list(v); },
       [](const C& c) { return join(c.report_variants); }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(cfg, key, value);
      return;
    }
  throw Error("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(line_no) + ": expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(buf.str())) {
    try {
      apply_setting(cfg, k, v);
    } catch (const Error& e) {
      throw Error(path.string() + ": " + e.what());
    }
  }
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // File locations are not part of the experiment.
  ExperimentConfig c = cfg;
  c.data.clear(), c.init.clear(), c.checkpoint.clear(), c.pretrained.clear(), c.out_dir.clear();
  c.out.clear();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash64(canonical_config(c))));
  return buf;
}

EpisodeShape ExperimentConfig::episode_shape() const {
  return {n_way, k_shot, queries, open_ways > 0 ? open_ways : n_way, queries};
}

Stage1Config ExperimentConfig::stage1_config() const {
  Stage1Config c = stage1;
  c.shape = episode_shape();
  c.seed = seed;
  return c;
}

EvalConfig ExperimentConfig::eval_config() const {
  EvalConfig e;
  e.variant = variant;
  e.shape = episode_shape();
  e.stage2 = stage2;
  e.stage2.base_category_limit = base_category_limit;
  e.head = head;
  e.task_count = task_count;
  e.workers = workers;
  e.master_seed = seed;
  return e;
}

PretrainConfig ExperimentConfig::pretrain_config(Eigen::Index input_dim) const {
  PretrainConfig p = pretrain;
  p.layer_dims = {input_dim};
  p.layer_dims.insert(p.layer_dims.end(), hidden.begin(), hidden.end());
  p.layer_dims.push_back(feature_dim);
  return p;
}

void ExperimentConfig::validate() const {
  require(n_way >= 1 && k_shot >= 1 && queries >= 1, "config: n-way, k-shot, queries must be >= 1");
  require(open_ways >= 0, "config: open-ways must be >= 0");
  require(task_count >= 1, "config: tasks must be >= 1");
  require(workers >= 1, "config: workers must be >= 1");
  require(feature_dim >= 1, "config: feature-dim must be >= 1");
  for (auto h : hidden) require(h >= 1, "config: hidden sizes must be >= 1");
  require(pretrain.epochs >= 0 && pretrain.batch_size >= 1 && pretrain.lr > 0.0,
          "config: bad pretraining settings");
  stage1.validate();
  require(stage2.iterations >= 0 && stage2.lr_encoder > 0.0 && stage2.m_open >= 0,
          "config: bad stage-2 settings");
}

ExperimentConfig paper_defaults() {
  ExperimentConfig c;
  c.stage1.episodes = 20000;
  c.stage1.lr_encoder = 2e-4;
  c.stage1.lr_head = 2e-5;
  c.stage1.lr_decay_factor = 0.5;
  c.stage2.iterations = 300;
  c.stage2.lr_encoder = 2e-4;
  c.task_count = 600;
  return c;
}

}  // namespace osproto
