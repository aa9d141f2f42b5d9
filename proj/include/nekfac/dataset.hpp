#pragma once

#include "nekfac/matrix.hpp"
#include "nekfac/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nekfac {

/// Regression dataset held fully in memory.
struct Dataset {
  std::string name;
  Mat features;  // N x d
  Vec targets;   // N

  Index n() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

/// Parses a delimited text file into a dataset. `delimiter` 0 auto-detects
/// (comma if the first data line contains one, else whitespace);
/// `target_column` -1 selects the last column. Lines starting with '#' and
/// blank lines are skipped. Throws std::runtime_error with row/column
/// diagnostics on malformed or non-finite values.
Dataset load_dataset(const std::string& path, char delimiter = 0,
                     int target_column = -1);

/// Writes the dataset with enough precision that load_dataset reproduces the
/// matrices bitwise.
void save_dataset(const Dataset& ds, const std::string& path,
                  char delimiter = ' ');

/// Split protocol parameters: train fraction, number of repeated splits, and
/// the seed the split permutations derive from.
struct SplitSpec {
  double train_fraction = 0.9;
  int repeats = 10;
  uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> test;
};

/// Disjoint covering split with |train| = round(fraction * n), clamped so
/// both sides are non-empty. Indices are sorted ascending.
SplitIndices make_split(Index n, double train_fraction, Rng& rng);

/// Affine feature/target transforms fitted on training data.
struct Standardizer {
  Vec feature_mean;
  Vec feature_scale;  // 1 for (near-)constant features
  double target_mean = 0.0;
  double target_scale = 1.0;

  Mat transform_features(const Mat& x) const;
  Vec transform_targets(const Vec& y) const;
  Vec destandardize_targets(const Vec& y_std) const;
};

struct NormalizedSplit {
  Mat train_x;  // standardized
  Vec train_y;  // standardized
  Mat test_x;   // standardized by the train transforms
  Vec test_y;   // raw units
  Standardizer transforms;
};

/// Fits feature/target standardizers on the train rows and applies them:
/// train features and targets are z-scored, test features use the train
/// transforms, test targets stay in original units. Near-constant features
/// are centered only (unit scale) with a warning on stderr.
NormalizedSplit normalize_split(const Dataset& ds, const SplitIndices& split);

Mat select_rows(const Mat& x, const std::vector<Index>& idx);
Vec select_rows(const Vec& v, const std::vector<Index>& idx);

}  // namespace nekfac
