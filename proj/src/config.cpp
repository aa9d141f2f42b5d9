#include "nekfac/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace nekfac {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v)) {
    throw ConfigError(key, "expected a finite number, got '" + value + "'");
  }
  return v;
}

int64_t parse_int(const std::string& key, const std::string& value) {
  const double v = parse_double(key, value);
  const auto i = static_cast<int64_t>(v);
  if (static_cast<double>(i) != v) {
    throw ConfigError(key, "expected an integer, got '" + value + "'");
  }
  return i;
}

uint64_t parse_uint(const std::string& key, const std::string& value) {
  const int64_t v = parse_int(key, value);
  if (v < 0) throw ConfigError(key, "must be non-negative");
  return static_cast<uint64_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + value + "'");
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "optimizer",     "alpha",        "beta",
      "omega",         "lambda",       "eta",
      "gamma_ex",      "t_stats",      "t_scale",
      "t_eig",         "t_reinit",     "batch_size",
      "epochs",        "max_iters",    "seed",
      "fisher_sampling", "hidden_units", "decay_all_rates",
      "n_mc_eval",     "dataset",      "dataset_path",
      "delimiter",     "target_column", "dataset_n",
      "dataset_d",     "dataset_hidden", "dataset_noise",
      "data_seed",     "train_fraction", "repeats",
      "optimizers"};
  return keys;
}

}  // namespace

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("(file)", "cannot open config file: " + path);
  ConfigMap map;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("(file)", "line " + std::to_string(line_no) +
                                      ": expected 'key = value', got '" +
                                      stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("(file)",
                        "line " + std::to_string(line_no) + ": empty key");
    }
    map[key] = value;
  }
  return map;
}

void apply_overrides(ConfigMap& map, const std::vector<std::string>& kvs) {
  for (const auto& kv : kvs) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("(override)",
                        "expected KEY=VALUE, got '" + kv + "'");
    }
    map[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }
}

ResolvedConfig resolve_config(const ConfigMap& map) {
  for (const auto& [key, value] : map) {
    (void)value;
    if (!known_keys().count(key)) {
      throw ConfigError(key, "unknown key");
    }
  }
  for (const char* required : {"optimizer", "dataset", "alpha", "lambda",
                               "eta"}) {
    if (!map.count(required)) {
      throw ConfigError(required, "required field is missing");
    }
  }

  ResolvedConfig cfg;
  auto get = [&](const char* key) -> const std::string* {
    const auto it = map.find(key);
    return it == map.end() ? nullptr : &it->second;
  };

  {
    const std::string& name = *get("optimizer");
    const auto kind = parse_optimizer(name);
    if (!kind) {
      throw ConfigError("optimizer",
                        "unknown optimizer '" + name +
                            "' (kfac|ekfac|noisy-kfac|noisy-ekfac|bbb)");
    }
    cfg.train.optimizer = *kind;
  }

  auto positive = [](const char* key, double v) {
    if (!(v > 0.0)) throw ConfigError(key, "must be positive");
    return v;
  };
  auto non_negative = [](const char* key, double v) {
    if (v < 0.0) throw ConfigError(key, "must be non-negative");
    return v;
  };

  cfg.train.alpha = positive("alpha", parse_double("alpha", *get("alpha")));
  cfg.train.lambda =
      positive("lambda", parse_double("lambda", *get("lambda")));
  cfg.train.eta = positive("eta", parse_double("eta", *get("eta")));
  if (const auto* v = get("beta")) {
    cfg.train.beta = parse_double("beta", *v);
    if (cfg.train.beta < 0.0 || cfg.train.beta > 1.0) {
      throw ConfigError("beta", "must be in [0, 1]");
    }
  }
  if (const auto* v = get("omega")) {
    cfg.train.omega = parse_double("omega", *v);
    if (cfg.train.omega < 0.0 || cfg.train.omega > 1.0) {
      throw ConfigError("omega", "must be in [0, 1]");
    }
  }
  if (const auto* v = get("gamma_ex")) {
    cfg.train.gamma_ex = non_negative("gamma_ex", parse_double("gamma_ex", *v));
  }
  auto interval = [&](const char* key, uint64_t& out) {
    if (const auto* v = get(key)) {
      out = parse_uint(key, *v);
      if (out == 0 && std::string(key) != "t_reinit") {
        throw ConfigError(key, "must be >= 1");
      }
    }
  };
  interval("t_stats", cfg.train.t_stats);
  interval("t_scale", cfg.train.t_scale);
  interval("t_eig", cfg.train.t_eig);
  interval("t_reinit", cfg.train.t_reinit);
  if (const auto* v = get("batch_size")) {
    const int64_t b = parse_int("batch_size", *v);
    if (b < 1) throw ConfigError("batch_size", "must be >= 1");
    cfg.train.batch_size = static_cast<Index>(b);
  }
  if (const auto* v = get("epochs")) {
    cfg.train.epochs = parse_uint("epochs", *v);
  }
  if (const auto* v = get("max_iters")) {
    cfg.train.max_iters = parse_uint("max_iters", *v);
  }
  if (const auto* v = get("seed")) {
    cfg.train.seed = parse_uint("seed", *v);
  }
  if (const auto* v = get("fisher_sampling")) {
    if (*v == "empirical") {
      cfg.train.fisher_sampling = FisherSampling::kEmpirical;
    } else if (*v == "model") {
      cfg.train.fisher_sampling = FisherSampling::kModel;
    } else {
      throw ConfigError("fisher_sampling",
                        "expected empirical|model, got '" + *v + "'");
    }
  }
  if (const auto* v = get("hidden_units")) {
    const int64_t h = parse_int("hidden_units", *v);
    if (h < 1) throw ConfigError("hidden_units", "must be >= 1");
    cfg.train.hidden_units = static_cast<Index>(h);
  }
  if (const auto* v = get("decay_all_rates")) {
    cfg.train.decay_all_rates = parse_bool("decay_all_rates", *v);
  }
  if (const auto* v = get("n_mc_eval")) {
    const int64_t m = parse_int("n_mc_eval", *v);
    if (m < 1) throw ConfigError("n_mc_eval", "must be >= 1");
    cfg.train.n_mc_eval = static_cast<int>(m);
  }

  cfg.dataset = *get("dataset");
  if (cfg.dataset != "synthetic-linear" && cfg.dataset != "synthetic-teacher" &&
      cfg.dataset != "file") {
    throw ConfigError(
        "dataset",
        "expected synthetic-linear|synthetic-teacher|file, got '" +
            cfg.dataset + "'");
  }
  if (const auto* v = get("dataset_path")) cfg.dataset_path = *v;
  if (cfg.dataset == "file" && cfg.dataset_path.empty()) {
    throw ConfigError("dataset_path", "required when dataset = file");
  }
  if (const auto* v = get("delimiter")) {
    if (*v == "comma") {
      cfg.delimiter = ',';
    } else if (*v == "space") {
      cfg.delimiter = ' ';
    } else if (*v == "tab") {
      cfg.delimiter = '\t';
    } else if (*v == "auto") {
      cfg.delimiter = 0;
    } else {
      throw ConfigError("delimiter",
                        "expected auto|comma|space|tab, got '" + *v + "'");
    }
  }
  if (const auto* v = get("target_column")) {
    const int64_t t = parse_int("target_column", *v);
    if (t < -1) throw ConfigError("target_column", "must be >= -1");
    cfg.target_column = static_cast<int>(t);
  }
  auto size_field = [&](const char* key, Index& out, Index min_value) {
    if (const auto* v = get(key)) {
      const int64_t n = parse_int(key, *v);
      if (n < min_value) {
        throw ConfigError(key,
                          "must be >= " + std::to_string(min_value));
      }
      out = static_cast<Index>(n);
    }
  };
  size_field("dataset_n", cfg.dataset_n, 2);
  size_field("dataset_d", cfg.dataset_d, 1);
  size_field("dataset_hidden", cfg.dataset_hidden, 1);
  if (const auto* v = get("dataset_noise")) {
    cfg.dataset_noise =
        non_negative("dataset_noise", parse_double("dataset_noise", *v));
  }
  if (const auto* v = get("data_seed")) {
    cfg.data_seed = parse_uint("data_seed", *v);
  }

  if (const auto* v = get("train_fraction")) {
    cfg.split.train_fraction = parse_double("train_fraction", *v);
    if (!(cfg.split.train_fraction > 0.0 && cfg.split.train_fraction < 1.0)) {
      throw ConfigError("train_fraction", "must be in (0, 1)");
    }
  }
  if (const auto* v = get("repeats")) {
    const int64_t r = parse_int("repeats", *v);
    if (r < 1) throw ConfigError("repeats", "must be >= 1");
    cfg.split.repeats = static_cast<int>(r);
  }
  cfg.split.seed = cfg.train.seed;

  if (const auto* v = get("optimizers")) {
    std::istringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto kind = parse_optimizer(item);
      if (!kind) {
        throw ConfigError("optimizers", "unknown optimizer '" + item + "'");
      }
      cfg.bench_optimizers.push_back(*kind);
    }
    if (cfg.bench_optimizers.empty()) {
      throw ConfigError("optimizers", "empty optimizer list");
    }
  } else {
    cfg.bench_optimizers = {cfg.train.optimizer};
  }
  return cfg;
}

nlohmann::json config_to_json(const ResolvedConfig& cfg) {
  nlohmann::json j;
  j["optimizer"] = optimizer_name(cfg.train.optimizer);
  j["alpha"] = cfg.train.alpha;
  j["beta"] = cfg.train.beta;
  j["omega"] = cfg.train.omega;
  j["lambda"] = cfg.train.lambda;
  j["eta"] = cfg.train.eta;
  j["gamma_ex"] = cfg.train.gamma_ex;
  j["t_stats"] = cfg.train.t_stats;
  j["t_scale"] = cfg.train.t_scale;
  j["t_eig"] = cfg.train.t_eig;
  j["t_reinit"] = cfg.train.t_reinit;
  j["batch_size"] = cfg.train.batch_size;
  j["epochs"] = cfg.train.epochs;
  j["max_iters"] = cfg.train.max_iters;
  j["seed"] = cfg.train.seed;
  j["fisher_sampling"] =
      cfg.train.fisher_sampling == FisherSampling::kModel ? "model"
                                                          : "empirical";
  j["hidden_units"] = cfg.train.hidden_units;
  j["decay_all_rates"] = cfg.train.decay_all_rates;
  j["n_mc_eval"] = cfg.train.n_mc_eval;
  j["dataset"] = cfg.dataset;
  j["dataset_path"] = cfg.dataset_path;
  j["delimiter"] = cfg.delimiter == 0
                       ? "auto"
                       : (cfg.delimiter == ',' ? "comma"
                          : cfg.delimiter == '\t' ? "tab" : "space");
  j["target_column"] = cfg.target_column;
  j["dataset_n"] = cfg.dataset_n;
  j["dataset_d"] = cfg.dataset_d;
  j["dataset_hidden"] = cfg.dataset_hidden;
  j["dataset_noise"] = cfg.dataset_noise;
  j["data_seed"] = cfg.data_seed;
  j["train_fraction"] = cfg.split.train_fraction;
  j["repeats"] = cfg.split.repeats;
  nlohmann::json optims = nlohmann::json::array();
  for (const auto kind : cfg.bench_optimizers) {
    optims.push_back(optimizer_name(kind));
  }
  j["optimizers"] = optims;
  return j;
}

}  // namespace nekfac
