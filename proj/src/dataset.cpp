#include "nekfac/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace nekfac {

namespace {

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> tokens;
  if (delimiter == 0 || delimiter == ' ' || delimiter == '\t') {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
  } else {
    std::string tok;
    std::istringstream ss(line);
    while (std::getline(ss, tok, delimiter)) {
      const auto b = tok.find_first_not_of(" \t\r");
      if (b == std::string::npos) {
        tokens.emplace_back();
      } else {
        const auto e = tok.find_last_not_of(" \t\r");
        tokens.push_back(tok.substr(b, e - b + 1));
      }
    }
  }
  return tokens;
}

double parse_cell(const std::string& tok, size_t row, size_t col) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw std::runtime_error("parse failure at row " + std::to_string(row) +
                             ", column " + std::to_string(col) + ": '" + tok +
                             "' is not a number");
  }
  if (!std::isfinite(value)) {
    throw std::runtime_error("non-finite value at row " + std::to_string(row) +
                             ", column " + std::to_string(col));
  }
  return value;
}

}  // namespace

Dataset load_dataset(const std::string& path, char delimiter,
                     int target_column) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  size_t line_no = 0;
  size_t data_row = 0;
  size_t n_cols = 0;
  char delim = delimiter;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    if (delim == 0) {
      delim = line.find(',') != std::string::npos ? ',' : ' ';
    }
    ++data_row;
    const auto tokens = split_line(line, delim);
    if (n_cols == 0) {
      n_cols = tokens.size();
      if (n_cols < 2) {
        throw std::runtime_error(
            "dataset needs at least one feature column and one target "
            "column (row " +
            std::to_string(data_row) + " has " + std::to_string(n_cols) + ")");
      }
    } else if (tokens.size() != n_cols) {
      throw std::runtime_error("row " + std::to_string(data_row) +
                               ": expected " + std::to_string(n_cols) +
                               " columns, got " +
                               std::to_string(tokens.size()));
    }
    std::vector<double> values(n_cols);
    for (size_t c = 0; c < n_cols; ++c) {
      values[c] = parse_cell(tokens[c], data_row, c + 1);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw std::runtime_error("dataset file is empty: " + path);

  const int t = target_column >= 0 ? target_column
                                   : static_cast<int>(n_cols) - 1;
  if (t < 0 || t >= static_cast<int>(n_cols)) {
    throw std::runtime_error("target column " + std::to_string(t) +
                             " out of range for " + std::to_string(n_cols) +
                             " columns");
  }

  Dataset ds;
  ds.name = std::filesystem::path(path).stem().string();
  ds.features.resize(static_cast<Index>(rows.size()),
                     static_cast<Index>(n_cols) - 1);
  ds.targets.resize(static_cast<Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    Index f = 0;
    for (size_t c = 0; c < n_cols; ++c) {
      if (static_cast<int>(c) == t) {
        ds.targets(static_cast<Index>(r)) = rows[r][c];
      } else {
        ds.features(static_cast<Index>(r), f++) = rows[r][c];
      }
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path, char delimiter) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << std::setprecision(17);
  for (Index r = 0; r < ds.n(); ++r) {
    for (Index c = 0; c < ds.dim(); ++c) {
      out << ds.features(r, c) << delimiter;
    }
    out << ds.targets(r) << '\n';
  }
  if (!out) throw std::runtime_error("write failure: " + path);
}

SplitIndices make_split(Index n, double train_fraction, Rng& rng) {
  if (n < 2) throw std::invalid_argument("make_split: need at least 2 rows");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("make_split: train_fraction must be in (0,1)");
  }
  Index n_train = static_cast<Index>(
      std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<Index>(n_train, 1, n - 1);

  const std::vector<Index> perm = rng.permutation(n);
  SplitIndices split;
  split.train.assign(perm.begin(), perm.begin() + n_train);
  split.test.assign(perm.begin() + n_train, perm.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Mat Standardizer::transform_features(const Mat& x) const {
  return (x.rowwise() - feature_mean.transpose()).array().rowwise() /
         feature_scale.transpose().array();
}

Vec Standardizer::transform_targets(const Vec& y) const {
  return (y.array() - target_mean) / target_scale;
}

Vec Standardizer::destandardize_targets(const Vec& y_std) const {
  return (y_std.array() * target_scale + target_mean).matrix();
}

Mat select_rows(const Mat& x, const std::vector<Index>& idx) {
  Mat out(static_cast<Index>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Index>(i)) = x.row(idx[i]);
  }
  return out;
}

Vec select_rows(const Vec& v, const std::vector<Index>& idx) {
  Vec out(static_cast<Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) {
    out(static_cast<Index>(i)) = v(idx[i]);
  }
  return out;
}

NormalizedSplit normalize_split(const Dataset& ds, const SplitIndices& split) {
  if (split.train.empty() || split.test.empty()) {
    throw std::invalid_argument("normalize_split: empty split side");
  }
  const Mat train_raw = select_rows(ds.features, split.train);
  const Vec train_y_raw = select_rows(ds.targets, split.train);

  constexpr double kVarianceFloor = 1e-24;
  Standardizer tfm;
  tfm.feature_mean = train_raw.colwise().mean();
  const Mat centered = train_raw.rowwise() - tfm.feature_mean.transpose();
  const Vec var =
      centered.array().square().colwise().mean().transpose();
  tfm.feature_scale.resize(var.size());
  for (Index c = 0; c < var.size(); ++c) {
    if (var(c) < kVarianceFloor) {
      std::cerr << "warning: feature column " << c
                << " is (near-)constant; centering only\n";
      tfm.feature_scale(c) = 1.0;
    } else {
      tfm.feature_scale(c) = std::sqrt(var(c));
    }
  }
  tfm.target_mean = train_y_raw.mean();
  const double ty_var =
      (train_y_raw.array() - tfm.target_mean).square().mean();
  if (ty_var < kVarianceFloor) {
    std::cerr << "warning: training targets are (near-)constant; centering "
                 "only\n";
    tfm.target_scale = 1.0;
  } else {
    tfm.target_scale = std::sqrt(ty_var);
  }

  NormalizedSplit out;
  out.train_x = tfm.transform_features(train_raw);
  out.train_y = tfm.transform_targets(train_y_raw);
  out.test_x = tfm.transform_features(select_rows(ds.features, split.test));
  out.test_y = select_rows(ds.targets, split.test);
  out.transforms = tfm;
  return out;
}

}  // namespace nekfac
