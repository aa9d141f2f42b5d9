#pragma once

#include "nekfac/optimizer.hpp"

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace nekfac {

std::string version_string();

/// Output root: NEKFAC_OUT_ROOT if set, else "runs".
std::string default_out_root();

struct RunPaths {
  std::string dir;
  std::string manifest;  // <dir>/manifest.jsonl (append-only)
  std::string metrics;   // <dir>/metrics.jsonl
  std::string snapshot;  // <dir>/snapshot.json
  std::string records;   // <dir>/records.jsonl (bench per-split records)
  std::string table;     // <dir>/table.txt (bench aggregate table)
};

/// Creates the run directory (parents included). If `explicit_dir` is empty a
/// fresh run-NNNN directory is allocated under the output root. Refuses a
/// directory that already contains a manifest.
RunPaths prepare_run_dir(const std::string& explicit_dir,
                         const std::string& out_root);

/// Appends the start record (resolved config, version, seed, ISO-8601 UTC
/// timestamp) to the manifest.
void write_manifest_start(const RunPaths& paths,
                          const nlohmann::json& config_snapshot,
                          uint64_t seed);

/// Appends the end record (status, end timestamp, optional summary).
void write_manifest_end(const RunPaths& paths, const std::string& status,
                        const nlohmann::json& summary);

nlohmann::json step_to_json(const StepReport& report);

/// JSON-lines StepReport stream; content depends only on the reports, so
/// equal config+seed runs produce bitwise-identical files.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write(const StepReport& report);
  void close();

 private:
  std::ofstream out_;
};

/// Serializes the trainer's posterior state (means, Kronecker factors,
/// re-scaling grids, BBB log-sigmas, damping constants) to JSON.
nlohmann::json snapshot_to_json(const Trainer& trainer,
                                const GaussianNoiseModel& noise,
                                double final_elbo);

void save_snapshot(const std::string& path, const nlohmann::json& snapshot);
nlohmann::json load_snapshot(const std::string& path);

/// Human-readable posterior statistics for `inspect`.
std::string describe_snapshot(const nlohmann::json& snapshot);

}  // namespace nekfac
