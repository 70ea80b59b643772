#include "doctest.h"

#include "tdn/stability.hpp"
#include "tdn/synthetic.hpp"

using namespace tdn;

namespace {

SeedRun run_of(std::uint64_t seed, std::vector<std::string> s) {
  SeedRun r;
  r.seed = seed;
  r.structures = std::move(s);
  return r;
}

} // namespace

TEST_CASE("unanimous seeds give diversity 1") {
  NoiseLevelReport lvl;
  for (int s = 0; s < 4; ++s) lvl.runs.push_back(run_of(s, {"P2(x)", "P2(x)", "P2(x)"}));
  compute_diversity(lvl);
  CHECK(lvl.epoch_wise == std::vector<int>{1, 1, 1});
  CHECK(lvl.cumulative == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(lvl.final_unique == 1);
}

TEST_CASE("two structures across seeds give diversity 2") {
  NoiseLevelReport lvl;
  lvl.runs.push_back(run_of(0, {"P2(x)"}));
  lvl.runs.push_back(run_of(1, {"P2(x) + I2(x)"}));
  compute_diversity(lvl);
  CHECK(lvl.final_unique == 2);
  CHECK(lvl.cumulative.back() == 1.0);
}

TEST_CASE("cumulative diversity counts each seed's history") {
  NoiseLevelReport lvl;
  lvl.runs.push_back(run_of(0, {"A", "B", "A", "C"}));
  lvl.runs.push_back(run_of(1, {"A", "A", "A", "A"}));
  SeedRun bad = run_of(2, {});
  bad.failed = true;
  lvl.runs.push_back(bad);
  compute_diversity(lvl);
  CHECK(lvl.epoch_wise == std::vector<int>{1, 2, 1, 2});
  CHECK(lvl.cumulative == std::vector<double>{1.0, 1.5, 1.5, 2.0});
}

TEST_CASE("cumulative diversity is monotone on random histories") {
  auto rng = make_rng(1, Stream::Weights);
  std::uniform_int_distribution<int> pick(0, 3), len(1, 12);
  for (int t = 0; t < 50; ++t) {
    NoiseLevelReport lvl;
    for (int s = 0; s < 5; ++s) {
      std::vector<std::string> h(static_cast<std::size_t>(len(rng)));
      for (auto& x : h) x = std::string(1, static_cast<char>('A' + pick(rng)));
      lvl.runs.push_back(run_of(s, h));
    }
    compute_diversity(lvl);
    for (std::size_t e = 1; e < lvl.cumulative.size(); ++e) CHECK(lvl.cumulative[e] >= lvl.cumulative[e - 1]);
    for (int v : lvl.epoch_wise) CHECK(v <= 4);
  }
}

TEST_CASE("run_stability: shape, CSVs and determinism") {
  SyntheticSpec spec;
  spec.d = 4;
  spec.n = 500;
  const auto data = generate(spec);
  StabilityConfig cfg;
  cfg.n_seeds = 3;
  cfg.noise_levels = {0.0, 0.05};
  cfg.epochs = 3;
  cfg.jobs = 2;
  SearchConfig sc;
  sc.batch_size = 32;
  const ModelConfig mc{4, 3, 3, 4, true};
  const auto a = run_stability(data.split.train, cfg, sc, mc);
  CHECK(a.epochs == 3);
  CHECK(a.steps_per_epoch == 13);
  REQUIRE(a.levels.size() == 2);
  for (const auto& l : a.levels) {
    CHECK(l.runs.size() == 3);
    CHECK(l.epoch_wise.size() == 3);
    CHECK(l.runs[0].seed == 0);
    CHECK(l.runs[2].seed == 2);
  }
  const auto csv = epoch_diversity_csv(a);
  CHECK(csv.rfind("method,noise,epoch,count\n", 0) == 0);
  CHECK(csv.find("td,0.05,3,") != std::string::npos);
  CHECK(cumulative_diversity_csv(a).rfind("method,noise,epoch,avg_unique\n", 0) == 0);
  cfg.jobs = 1;
  const auto b = run_stability(data.split.train, cfg, sc, mc);
  CHECK(to_json(a) == to_json(b));

  cfg.n_seeds = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  auto j = to_json(StabilityConfig{});
  j["seeds"] = 3;
  CHECK_THROWS_AS(stability_config_from_json(j), ValidationError);
}
