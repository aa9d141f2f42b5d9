#include "nekfac/run_io.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace nekfac {

namespace fs = std::filesystem;

std::string version_string() { return "nekfac 1.0.0"; }

std::string default_out_root() {
  if (const char* env = std::getenv("NEKFAC_OUT_ROOT")) {
    if (*env != '\0') return env;
  }
  return "runs";
}

namespace {

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void append_manifest_line(const RunPaths& paths, const nlohmann::json& j) {
  std::ofstream out(paths.manifest, std::ios::app);
  if (!out) {
    throw std::runtime_error("cannot write manifest: " + paths.manifest);
  }
  out << j.dump() << '\n';
}

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

RunPaths prepare_run_dir(const std::string& explicit_dir,
                         const std::string& out_root) {
  fs::path dir;
  if (!explicit_dir.empty()) {
    dir = explicit_dir;
  } else {
    for (int k = 0;; ++k) {
      std::ostringstream name;
      name << "run-" << std::setw(4) << std::setfill('0') << k;
      const fs::path candidate = fs::path(out_root) / name.str();
      if (!fs::exists(candidate)) {
        dir = candidate;
        break;
      }
      if (k > 999999) {
        throw std::runtime_error("cannot allocate a run directory under " +
                                 out_root);
      }
    }
  }
  fs::create_directories(dir);
  RunPaths paths;
  paths.dir = dir.string();
  paths.manifest = (dir / "manifest.jsonl").string();
  paths.metrics = (dir / "metrics.jsonl").string();
  paths.snapshot = (dir / "snapshot.json").string();
  paths.records = (dir / "records.jsonl").string();
  paths.table = (dir / "table.txt").string();
  if (fs::exists(paths.manifest)) {
    throw std::runtime_error("run directory already contains a manifest: " +
                             paths.manifest);
  }
  return paths;
}

void write_manifest_start(const RunPaths& paths,
                          const nlohmann::json& config_snapshot,
                          uint64_t seed) {
  nlohmann::json j;
  j["record"] = "start";
  j["version"] = version_string();
  j["seed"] = seed;
  j["started_at"] = utc_timestamp();
  j["config"] = config_snapshot;
  j["outputs"] = {paths.metrics, paths.snapshot, paths.records, paths.table};
  append_manifest_line(paths, j);
}

void write_manifest_end(const RunPaths& paths, const std::string& status,
                        const nlohmann::json& summary) {
  nlohmann::json j;
  j["record"] = "end";
  j["status"] = status;
  j["ended_at"] = utc_timestamp();
  if (!summary.is_null()) j["summary"] = summary;
  append_manifest_line(paths, j);
}

nlohmann::json step_to_json(const StepReport& report) {
  nlohmann::json j;
  j["iteration"] = report.iteration;
  j["elbo"] = report.elbo;
  j["ll_term"] = report.ll_term;
  j["kl_term"] = report.kl_term;
  return j;
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
}

void MetricsWriter::write(const StepReport& report) {
  out_ << step_to_json(report).dump() << '\n';
  if (!out_) throw std::runtime_error("metrics write failure");
}

void MetricsWriter::close() {
  out_.flush();
  out_.close();
}

nlohmann::json snapshot_to_json(const Trainer& trainer,
                                const GaussianNoiseModel& noise,
                                double final_elbo) {
  const TrainConfig& cfg = trainer.config();
  nlohmann::json j;
  j["version"] = version_string();
  j["optimizer"] = optimizer_name(cfg.optimizer);
  j["iteration"] = trainer.iteration();
  j["final_elbo"] = final_elbo;
  j["gamma_in"] = trainer.gamma_in();
  j["posterior_scale"] = trainer.posterior_scale();
  j["noise"] = {{"shape", noise.shape},
                {"rate", noise.rate},
                {"mean_precision", noise.mean_precision()}};

  nlohmann::json layers = nlohmann::json::array();
  const bool kron = cfg.optimizer != OptimizerKind::kBbb;
  for (const auto& slot : trainer.slots()) {
    nlohmann::json layer;
    layer["rows"] = slot.mean.rows();
    layer["cols"] = slot.mean.cols();
    layer["mean"] = mat_to_json(slot.mean);
    if (kron) {
      layer["input_cov"] = mat_to_json(slot.stats.input_cov);
      layer["output_cov"] = mat_to_json(slot.stats.output_cov);
      layer["resc_grid"] = mat_to_json(slot.resc.grid);
      layer["pi"] = slot.pi;
    }
    if (cfg.optimizer == OptimizerKind::kBbb) {
      layer["log_sigma"] = mat_to_json(slot.log_sigma);
    }
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  return j;
}

void save_snapshot(const std::string& path, const nlohmann::json& snapshot) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write snapshot: " + path);
  out << snapshot.dump(2) << '\n';
  if (!out) throw std::runtime_error("snapshot write failure: " + path);
}

nlohmann::json load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open snapshot: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

namespace {

struct MatStats {
  double frob = 0.0;
  double min = 0.0;
  double max = 0.0;
};

MatStats stats_of(const nlohmann::json& m) {
  MatStats s;
  bool first = true;
  for (const auto& row : m) {
    for (const auto& cell : row) {
      const double v = cell.get<double>();
      s.frob += v * v;
      if (first) {
        s.min = s.max = v;
        first = false;
      } else {
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
      }
    }
  }
  s.frob = std::sqrt(s.frob);
  return s;
}

}  // namespace

std::string describe_snapshot(const nlohmann::json& snapshot) {
  std::ostringstream out;
  out << snapshot.value("version", std::string("?")) << " snapshot\n";
  out << "optimizer:       " << snapshot.value("optimizer", std::string("?"))
      << "\n";
  out << "iterations:      " << snapshot.value("iteration", 0) << "\n";
  out << std::setprecision(6);
  out << "final elbo:      " << snapshot.value("final_elbo", 0.0) << "\n";
  out << "gamma_in:        " << snapshot.value("gamma_in", 0.0) << "\n";
  out << "posterior scale: " << snapshot.value("posterior_scale", 0.0) << "\n";
  if (snapshot.contains("noise")) {
    out << "noise precision: "
        << snapshot["noise"].value("mean_precision", 0.0) << " (shape "
        << snapshot["noise"].value("shape", 0.0) << ", rate "
        << snapshot["noise"].value("rate", 0.0) << ")\n";
  }
  int l = 0;
  for (const auto& layer : snapshot.value("layers", nlohmann::json::array())) {
    out << "layer " << l++ << ": " << layer.value("rows", 0) << " x "
        << layer.value("cols", 0);
    if (layer.contains("mean")) {
      out << ", |mean|_F = " << stats_of(layer["mean"]).frob;
    }
    if (layer.contains("resc_grid")) {
      const MatStats g = stats_of(layer["resc_grid"]);
      out << ", resc grid in [" << g.min << ", " << g.max << "]";
    }
    if (layer.contains("pi")) {
      out << ", pi = " << layer.value("pi", 1.0);
    }
    if (layer.contains("log_sigma")) {
      const MatStats s = stats_of(layer["log_sigma"]);
      out << ", log_sigma in [" << s.min << ", " << s.max << "]";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace nekfac
