#include "doctest.h"

#include "tdn/bench.hpp"

using namespace tdn;

namespace {

BenchConfig small_bench() {
  BenchConfig c;
  c.modes = {SynthMode::Pure, SynthMode::Hybrid};
  c.formula_ids = {0};
  c.dims = {4};
  c.trials = 2;
  c.n = 600;
  c.seed = 5;
  c.search.warmup_steps = 200;
  c.search.phase2_steps = 800;
  c.search.batch_size = 64;
  c.search.time_budget_s = std::nullopt;
  c.search.record_steps = false;
  c.model.k_max = 3;
  c.model.m_max = 3;
  c.model.rank = 4;
  c.refit.epochs = 200;
  c.refit.min_steps = 0;
  return c;
}

// Drops the wall-clock column.
std::string mask_wall(const std::string& csv) {
  std::string out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const auto eol = csv.find('\n', pos);
    const std::string line = csv.substr(pos, eol - pos);
    out += line.substr(0, line.rfind(',')) + "\n";
    pos = eol + 1;
  }
  return out;
}

} // namespace

TEST_CASE("two_stage_eval on Pure 0") {
  SyntheticSpec s;
  s.mode = SynthMode::Pure;
  s.formula_id = 0;
  s.d = 4;
  s.n = 600;
  const auto c = small_bench();
  const auto r = two_stage_eval(s, c.search, c.model, c.refit);
  CHECK(r.truth.canonical() == "P2(x)");
  CHECK(r.match == classify_match(r.structure, r.truth));
  CHECK(r.test_mse == r.refit.test_mse);
  CHECK(r.refit.spec.layer_widths == std::vector<int>{4, 1});
  CHECK(r.test_mse < 0.2);
}

TEST_CASE("bench rows, CSV, aggregate and thread-count independence") {
  auto cfg = small_bench();
  cfg.jobs = 1;
  const auto a = run_bench(cfg);
  REQUIRE(a.rows.size() == 4);
  CHECK(a.rows[0].mode == SynthMode::Pure);
  CHECK(a.rows[1].trial == 1);
  CHECK(a.rows[2].mode == SynthMode::Hybrid);
  const auto csv = results_csv(a);
  CHECK(csv.rfind("mode,formula_id,d,trial,structure,match,test_mse,search_wall_s\n", 0) == 0);

  const auto agg = aggregate_json(a);
  REQUIRE(agg["cells"].size() == 2);
  const auto& cell = agg["cells"][0];
  CHECK(cell["runs"] == 2);
  CHECK(cell["mean_test_mse"].get<double>() ==
        doctest::Approx((a.rows[0].result.test_mse + a.rows[1].result.test_mse) / 2.0));
  CHECK_FALSE(cell["sem"].is_null());

  cfg.jobs = 3;
  const auto b = run_bench(cfg);
  CHECK(mask_wall(results_csv(b)) == mask_wall(csv));

  cfg.trials = 1;
  cfg.modes = {SynthMode::Pure};
  CHECK(aggregate_json(run_bench(cfg))["cells"][0]["sem"].is_null());
}

TEST_CASE("bench config validation and strict JSON") {
  BenchConfig c;
  c.trials = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = BenchConfig{};
  c.formula_ids = {7};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  auto j = to_json(BenchConfig{});
  CHECK(to_json(bench_config_from_json(j)) == j);
  j["trails"] = 2;
  CHECK_THROWS_AS(bench_config_from_json(j), ValidationError);
  auto r = to_json(RefitConfig{});
  r["patience"] = 3;
  CHECK_THROWS_AS(refit_config_from_json(r), ValidationError);
}
