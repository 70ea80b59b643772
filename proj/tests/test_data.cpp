#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "tdn/data.hpp"

using namespace tdn;
namespace fs = std::filesystem;

namespace {

fs::path write_tmp(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("tdn_test_" + name);
  std::ofstream(p) << body;
  return p;
}

Dataset ramp(std::size_t n, std::size_t d) {
  Dataset ds;
  ds.X = Matrix(n, d);
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.X(i, j) = static_cast<double>(i * (j + 1)) + 0.5 * static_cast<double>(j);
    ds.y[i] = 3.0 * static_cast<double>(i) + 1.0;
  }
  return ds;
}

} // namespace

TEST_CASE("split sizes are 8/1/1 for n=10") {
  const auto s = split_sizes(10, {0.8, 0.1, 0.1});
  CHECK(s[0] == 8);
  CHECK(s[1] == 1);
  CHECK(s[2] == 1);
  CHECK_THROWS_AS(split_sizes(10, {0.5, 0.1, 0.1}), ValidationError);
  CHECK_THROWS_AS(split_sizes(3, {0.98, 0.01, 0.01}), ValidationError);
}

TEST_CASE("split partitions rows and standardizes with training statistics") {
  const Dataset ds = ramp(100, 3);
  const DataSplit sp = split_and_standardize(ds, {0.8, 0.1, 0.1}, 42);
  CHECK(sp.train.size() == 80);
  CHECK(sp.val.size() == 10);
  CHECK(sp.test.size() == 10);

  std::vector<std::size_t> all = sp.train_rows;
  all.insert(all.end(), sp.val_rows.begin(), sp.val_rows.end());
  all.insert(all.end(), sp.test_rows.begin(), sp.test_rows.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

  for (std::size_t j = 0; j < sp.train.dim(); ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < sp.train.size(); ++i) mean += sp.train.X(i, j);
    mean /= 80.0;
    for (std::size_t i = 0; i < sp.train.size(); ++i) sq += (sp.train.X(i, j) - mean) * (sp.train.X(i, j) - mean);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    CHECK(std::sqrt(sq / 80.0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  // test rows use the training mean/std, not their own
  const std::size_t raw = sp.test_rows[0];
  CHECK(sp.test.X(0, 0) ==
        doctest::Approx((ds.X(raw, 0) - sp.stats.feature_mean[0]) / sp.stats.feature_std[0]).epsilon(1e-12));
  CHECK(sp.test.y[0] == doctest::Approx((ds.y[raw] - sp.stats.target_mean) / sp.stats.target_std).epsilon(1e-12));
}

TEST_CASE("split is seed deterministic") {
  const Dataset ds = ramp(50, 2);
  const auto a = split_and_standardize(ds, {0.8, 0.1, 0.1}, 7);
  const auto b = split_and_standardize(ds, {0.8, 0.1, 0.1}, 7);
  const auto c = split_and_standardize(ds, {0.8, 0.1, 0.1}, 8);
  CHECK(a.train_rows == b.train_rows);
  CHECK(a.train_rows != c.train_rows);
}

TEST_CASE("constant features are dropped with a warning") {
  Dataset ds = ramp(20, 3);
  for (std::size_t i = 0; i < 20; ++i) ds.X(i, 1) = 4.0;
  const auto sp = split_and_standardize(ds, {0.8, 0.0, 0.2}, 1);
  CHECK(sp.train.dim() == 2);
  CHECK(sp.test.dim() == 2);
  CHECK(sp.val.size() == 0);
  CHECK_FALSE(sp.train.warnings.empty());
}

TEST_CASE("csv: missing values drop rows, labels map to indices") {
  const auto p = write_tmp("cls.csv", "a,b,label\n1,2,cat\n3,,dog\n5,6,dog\nNA,1,cat\n7,8,bird\n");
  const Dataset ds = load_csv(p, "label", TaskKind::Classification);
  CHECK(ds.size() == 3);
  CHECK(ds.dropped_rows == 2);
  CHECK_FALSE(ds.warnings.empty());
  CHECK(ds.class_labels == std::vector<std::string>{"bird", "cat", "dog"});
  CHECK(ds.y[0] == 1.0);
  CHECK(ds.y[1] == 2.0);
  CHECK(ds.y[2] == 0.0);
  CHECK(ds.feature_names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("csv: numeric labels sort by value") {
  const auto p = write_tmp("num.csv", "x,y\n1,10\n2,9\n3,10\n");
  const Dataset ds = load_csv(p, "y", TaskKind::Classification);
  CHECK(ds.class_labels == std::vector<std::string>{"9", "10"});
  CHECK(ds.y[1] == 0.0);
}

TEST_CASE("csv: bad input is rejected") {
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", "y", TaskKind::Regression), ValidationError);
  CHECK_THROWS_AS(load_csv(write_tmp("t1.csv", "a,b\n1,2\n"), "y", TaskKind::Regression), ValidationError);
  CHECK_THROWS_AS(load_csv(write_tmp("t2.csv", "a,y\n1,2,3\n"), "y", TaskKind::Regression), ValidationError);
  CHECK_THROWS_AS(load_csv(write_tmp("t3.csv", "a,y\nfoo,2\n"), "y", TaskKind::Regression), ValidationError);
  CHECK_THROWS_AS(load_csv(write_tmp("t4.csv", "a,y\n1,bar\n"), "y", TaskKind::Regression), ValidationError);
}

TEST_CASE("dataset cache round-trips bit-identically") {
  Dataset ds = ramp(15, 2);
  ds.X(3, 1) = 0.1 + 0.2;
  ds.y[4] = 1.0 / 3.0;
  const fs::path dir = fs::temp_directory_path() / "tdn_test_cache";
  fs::remove_all(dir);
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.size() == ds.size());
  REQUIRE(back.dim() == ds.dim());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.y[i] == ds.y[i]);
    for (std::size_t j = 0; j < ds.dim(); ++j) CHECK(back.X(i, j) == ds.X(i, j));
  }
}

TEST_CASE("format_double is shortest round-trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, Stream::Weights) == derive_seed(1, Stream::Weights));
  CHECK(derive_seed(1, Stream::Weights) != derive_seed(1, Stream::Gates));
  CHECK(derive_seed(1, Stream::Weights, 0) != derive_seed(1, Stream::Weights, 1));
  CHECK(derive_seed(1, Stream::Weights) != derive_seed(2, Stream::Weights));
}

TEST_CASE("pairwise_sum matches naive sum") {
  std::vector<double> v(1001);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / static_cast<double>(i + 1);
  double naive = 0.0;
  for (double x : v) naive += x;
  CHECK(pairwise_sum(v) == doctest::Approx(naive).epsilon(1e-13));
}
