#ifndef TDN_DATA_HPP
#define TDN_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tdn/common.hpp"

namespace tdn {

enum class TaskKind { Regression, Classification };

struct Dataset {
  Matrix X;
  Vec y;  // real target, or class index stored as double
  std::vector<std::string> feature_names;
  std::string target_name = "y";
  TaskKind task = TaskKind::Regression;
  std::vector<std::string> class_labels;  // class index -> original label
  std::size_t dropped_rows = 0;
  std::vector<std::string> warnings;

  std::size_t size() const { return X.rows(); }
  std::size_t dim() const { return X.cols(); }
  std::size_t n_classes() const { return class_labels.size(); }

  Dataset subset(const std::vector<std::size_t>& rows) const;
};

struct Standardization {
  Vec feature_mean;
  Vec feature_std;
  double target_mean = 0.0;
  double target_std = 1.0;
  bool target_standardized = false;
  std::vector<std::size_t> kept_features;  // indices into the raw columns
};

struct DataSplit {
  Dataset train, val, test;
  Standardization stats;
  std::vector<std::size_t> train_rows, val_rows, test_rows;  // raw row indices
};

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column, TaskKind task);

// Fits statistics on `train` only. Features with zero training std are dropped
// (with a warning in train.warnings). Regression targets are standardized,
// class indices are left alone.
Standardization fit_standardization(const Dataset& train);
Dataset apply_standardization(const Dataset& ds, const Standardization& st);

// Shuffles rows with `seed`, splits by (train, val, test) fractions and
// standardizes all three with training statistics. A fraction of exactly 0
// yields an empty split; any other split must hold at least one row.
DataSplit split_and_standardize(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed);

// Split sizes used by split_and_standardize.
std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> fractions);

// Cache directory of {meta.json, X.csv, y.csv}. Values are written in
// shortest round-trip form, so X and y reload bit-identically.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace tdn

#endif // TDN_DATA_HPP
