#include "doctest.h"

#include <cmath>

#include "tdn/synthetic.hpp"

using namespace tdn;

TEST_CASE("Pure 2: 10*P1 + 0.5*P2 by hand") {
  SyntheticSpec s;
  s.mode = SynthMode::Pure;
  s.formula_id = 2;
  s.d = 3;
  const GroundTruth gt = make_ground_truth(s);
  const Vec x{1.0, 2.0, -1.0};
  // 10 * (1 + 2 - 1) + 0.5 * (1 + 4 + 1) = 23
  CHECK(gt.evaluate(x) == doctest::Approx(23.0).epsilon(1e-15));
  CHECK(gt.structure().canonical() == "P1(x) + P2(x)");
}

TEST_CASE("I2 is the product of two projections") {
  SyntheticSpec s;
  s.mode = SynthMode::Interact;
  s.formula_id = 0;
  s.d = 4;
  GroundTruth gt = make_ground_truth(s);
  gt.terms[0].coefficient = 1.0;
  gt.interaction_weights[2] = {Vec{1, 0, 2, 0}, Vec{0, 1, 0, -1}};
  const Vec x{1.0, 3.0, 1.0, 1.0};
  CHECK(gt.evaluate(x) == doctest::Approx(3.0 * 2.0));
}

TEST_CASE("every cell has the documented structure") {
  const char* expect[3][5] = {
      {"P2(x)", "P3(x)", "P1(x) + P2(x)", "P2(x) + P4(x)", "P5(x)"},
      {"I2(x)", "I2(x) + I3(x)", "I2(x) + I3(x)", "I2(x) + I4(x)", "I4(x)"},
      {"P2(x) + I2(x)", "P1(x) + I2(x)", "P3(x) + I2(x)", "P2(x) + I3(x)", "P2(x) + I2(x) + I3(x)"}};
  const SynthMode modes[3] = {SynthMode::Pure, SynthMode::Interact, SynthMode::Hybrid};
  for (int m = 0; m < 3; ++m)
    for (int id = 0; id < 5; ++id) {
      SyntheticSpec s;
      s.mode = modes[m];
      s.formula_id = id;
      CHECK(make_ground_truth(s).structure().canonical() == expect[m][id]);
    }
  SyntheticSpec bad;
  bad.formula_id = 5;
  CHECK_THROWS_AS(make_ground_truth(bad), ValidationError);
}

TEST_CASE("interaction weight scale readings") {
  SyntheticSpec s;
  s.mode = SynthMode::Interact;
  s.formula_id = 0;
  s.d = 400;
  for (WeightScale ws : {WeightScale::Variance, WeightScale::Std}) {
    s.weight_scale = ws;
    const auto gt = make_ground_truth(s);
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& w : gt.interaction_weights.at(2))
      for (double v : w) {
        sq += v * v;
        ++n;
      }
    const double var = sq / static_cast<double>(n);
    const double want = ws == WeightScale::Variance ? 1.0 / std::sqrt(400.0) : 1.0 / 400.0;
    CHECK(var == doctest::Approx(want).epsilon(0.1));
  }
}

TEST_CASE("generated data: split sizes, standardization, determinism") {
  SyntheticSpec s;
  s.d = 6;
  s.n = 1000;
  s.coeff_seed = 4;
  s.data_seed = 5;
  const auto a = generate(s);
  CHECK(a.split.train.size() == 800);
  CHECK(a.split.test.size() == 200);
  CHECK(a.split.val.size() == 0);
  double mean = 0.0, sq = 0.0;
  for (double y : a.split.train.y) mean += y;
  mean /= 800.0;
  for (double y : a.split.train.y) sq += (y - mean) * (y - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(sq / 800.0 == doctest::Approx(1.0).epsilon(1e-9));

  const auto b = generate(s);
  CHECK(a.split.train.y == b.split.train.y);
  CHECK(a.split.test.X.flat()[7] == b.split.test.X.flat()[7]);
  s.data_seed = 6;
  const auto c = generate(s);
  CHECK(a.split.train.y != c.split.train.y);
  // same coefficients, different rows
  CHECK(a.truth.terms[0].coefficient == c.truth.terms[0].coefficient);
}

TEST_CASE("raw targets follow the ground truth") {
  SyntheticSpec s;
  s.d = 3;
  s.n = 50;
  const auto data = generate(s);
  const auto& st = data.split.stats;
  for (std::size_t i = 0; i < 5; ++i) {
    Vec x(3);
    for (std::size_t j = 0; j < 3; ++j) x[j] = data.split.train.X(i, j) * st.feature_std[j] + st.feature_mean[j];
    const double y = data.split.train.y[i] * st.target_std + st.target_mean;
    CHECK(y == doctest::Approx(data.truth.evaluate(x)).epsilon(1e-9));
  }
}

TEST_CASE("structure match classes") {
  const auto truth = parse_canonical("P2(x) + I2(x)");
  CHECK(classify_match(truth, truth) == StructureMatch::Exact);
  CHECK(classify_match(parse_canonical("P1(x) + P2(x) + I2(x)"), truth) == StructureMatch::Superset);
  CHECK(classify_match(parse_canonical("P2(x) + I2(x) + sin(x)"), truth) == StructureMatch::Superset);
  CHECK(classify_match(parse_canonical("P2(x)"), truth) == StructureMatch::Miss);
  CHECK(to_string(StructureMatch::Superset) == "superset");
}

TEST_CASE("spec JSON is strict") {
  SyntheticSpec s;
  s.mode = SynthMode::Interact;
  s.noise_sigma = 0.1;
  auto j = to_json(s);
  const auto back = synthetic_spec_from_json(j);
  CHECK(to_json(back) == j);
  j["dims"] = 3;
  CHECK_THROWS_AS(synthetic_spec_from_json(j), ValidationError);
  CHECK_THROWS_AS(parse_mode("mixed"), ValidationError);
  CHECK(parse_mode("hybrid") == SynthMode::Hybrid);
}
