#pragma once

#include "nekfac/dataset.hpp"
#include "nekfac/optimizer.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nekfac {

/// Config-schema violation; `field` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error("config field '" + field + "': " + message),
        field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

using ConfigMap = std::map<std::string, std::string>;

/// Parses a flat `key = value` file. '#' starts a comment; blank lines are
/// skipped. Duplicate keys: last one wins.
ConfigMap parse_config_file(const std::string& path);

/// Applies repeatable KEY=VALUE override strings on top of the map.
void apply_overrides(ConfigMap& map, const std::vector<std::string>& kvs);

/// Fully typed run configuration: optimizer hyperparameters plus dataset
/// selection and the split protocol.
struct ResolvedConfig {
  TrainConfig train;

  // dataset = synthetic-linear | synthetic-teacher | file
  std::string dataset = "synthetic-teacher";
  std::string dataset_path;       // for dataset = file
  char delimiter = 0;             // 0 = auto
  int target_column = -1;         // -1 = last
  Index dataset_n = 400;          // synthetic generators
  Index dataset_d = 8;
  Index dataset_hidden = 16;      // teacher width
  double dataset_noise = 0.2;
  uint64_t data_seed = 1;

  SplitSpec split;                           // bench protocol
  std::vector<OptimizerKind> bench_optimizers;  // bench; defaults to train.optimizer
};

/// Validates every key against the schema (unknown keys are errors), checks
/// required fields (optimizer, dataset, alpha, lambda, eta) and value
/// ranges. Throws ConfigError naming the field.
ResolvedConfig resolve_config(const ConfigMap& map);

/// Resolved snapshot for the run manifest (deterministic key order).
nlohmann::json config_to_json(const ResolvedConfig& cfg);

}  // namespace nekfac
