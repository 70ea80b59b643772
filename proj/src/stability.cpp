#include "tdn/stability.hpp"

#include <atomic>
#include <set>
#include <sstream>
#include <thread>

namespace tdn {

void StabilityConfig::validate() const {
  if (n_seeds < 2) throw ValidationError("stability.n_seeds: must be >= 2");
  if (noise_levels.empty()) throw ValidationError("stability.noise_levels: empty");
  for (double s : noise_levels)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("stability.noise_levels: levels must be finite and >= 0");
  if (epochs < 1) throw ValidationError("stability.epochs: must be >= 1");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw ValidationError("stability.warmup_fraction: must be in (0, 1)");
  if (jobs < 1) throw ValidationError("stability.jobs: must be >= 1");
}

nlohmann::json to_json(const StabilityConfig& c) {
  return {{"n_seeds", c.n_seeds},   {"noise_levels", c.noise_levels},       {"epochs", c.epochs},
          {"snapshot_per_epoch", c.snapshot_per_epoch}, {"seed_base", c.seed_base},
          {"noise_seed", c.noise_seed}, {"warmup_fraction", c.warmup_fraction}, {"jobs", c.jobs}};
}

StabilityConfig stability_config_from_json(const nlohmann::json& j) {
  StabilityConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "n_seeds") c.n_seeds = v.get<int>();
    else if (k == "noise_levels") c.noise_levels = v.get<std::vector<double>>();
    else if (k == "epochs") c.epochs = v.get<int>();
    else if (k == "snapshot_per_epoch") c.snapshot_per_epoch = v.get<bool>();
    else if (k == "seed_base") c.seed_base = v.get<std::uint64_t>();
    else if (k == "noise_seed") c.noise_seed = v.get<std::uint64_t>();
    else if (k == "warmup_fraction") c.warmup_fraction = v.get<double>();
    else if (k == "jobs") c.jobs = v.get<int>();
    else throw ValidationError("stability." + k + ": unknown key");
  }
  return c;
}

void compute_diversity(NoiseLevelReport& level) {
  std::size_t n_epochs = 0;
  std::size_t ok = 0;
  for (const auto& run : level.runs)
    if (!run.failed) {
      n_epochs = std::max(n_epochs, run.structures.size());
      ++ok;
    }
  level.epoch_wise.assign(n_epochs, 0);
  level.cumulative.assign(n_epochs, 0.0);
  level.final_unique = 0;
  if (ok == 0) return;
  std::vector<std::set<std::string>> seen(level.runs.size());
  for (std::size_t e = 0; e < n_epochs; ++e) {
    std::set<std::string> distinct;
    std::size_t total = 0;
    for (std::size_t s = 0; s < level.runs.size(); ++s) {
      const auto& run = level.runs[s];
      if (run.failed) continue;
      // A run with fewer snapshots keeps its last structure.
      const auto& st = run.structures[std::min(e, run.structures.size() - 1)];
      distinct.insert(st);
      seen[s].insert(st);
      total += seen[s].size();
    }
    level.epoch_wise[e] = static_cast<int>(distinct.size());
    level.cumulative[e] = static_cast<double>(total) / static_cast<double>(ok);
  }
  level.final_unique = level.epoch_wise.back();
}

DiversityReport run_stability(const Dataset& data, const StabilityConfig& cfg, const SearchConfig& search,
                              const ModelConfig& model_cfg) {
  cfg.validate();
  if (data.size() == 0) throw ValidationError("stability: empty dataset");
  if (static_cast<std::size_t>(search.batch_size) > data.size())
    throw ValidationError("stability: batch_size " + std::to_string(search.batch_size) + " exceeds the " +
                          std::to_string(data.size()) + " training rows");

  SearchConfig base = search;
  base.set_epochs(cfg.epochs, data.size(), cfg.warmup_fraction);
  const int per_epoch = static_cast<int>((data.size() + static_cast<std::size_t>(base.batch_size) - 1) /
                                         static_cast<std::size_t>(base.batch_size));
  base.snapshot_every = cfg.snapshot_per_epoch ? per_epoch : 0;
  base.time_budget_s = std::nullopt;
  base.record_steps = false;
  base.validate();

  DiversityReport rep;
  rep.epochs = cfg.epochs;
  rep.steps_per_epoch = per_epoch;

  std::vector<Dataset> noisy;
  for (std::size_t l = 0; l < cfg.noise_levels.size(); ++l) {
    Dataset ds = data;
    if (cfg.noise_levels[l] > 0.0) {
      auto rng = make_rng(cfg.noise_seed, Stream::Noise, l);
      std::normal_distribution<double> nd(0.0, cfg.noise_levels[l]);
      for (double& y : ds.y) y += nd(rng);
    }
    noisy.push_back(std::move(ds));
    NoiseLevelReport lr;
    lr.noise = cfg.noise_levels[l];
    lr.runs.resize(static_cast<std::size_t>(cfg.n_seeds));
    rep.levels.push_back(std::move(lr));
  }

  const std::size_t n_jobs = rep.levels.size() * static_cast<std::size_t>(cfg.n_seeds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_jobs) return;
      const std::size_t l = i / static_cast<std::size_t>(cfg.n_seeds);
      const std::size_t s = i % static_cast<std::size_t>(cfg.n_seeds);
      auto& run = rep.levels[l].runs[s];
      run.seed = cfg.seed_base + s;
      SearchConfig sc = base;
      sc.seed = run.seed;
      try {
        const auto res = run_search(noisy[l], sc, model_cfg);
        if (cfg.snapshot_per_epoch)
          for (const auto& [step, st] : res.report.snapshots) run.structures.push_back(st.canonical());
        else
          run.structures.push_back(res.structure.canonical());
      } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
        run.structures.clear();
      }
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), n_jobs);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (auto& lr : rep.levels) {
    for (const auto& run : lr.runs)
      if (run.failed)
        lr.warnings.push_back("seed " + std::to_string(run.seed) + " excluded: " + run.error);
    compute_diversity(lr);
  }
  return rep;
}

nlohmann::json to_json(const DiversityReport& r) {
  auto levels = nlohmann::json::array();
  for (const auto& lr : r.levels) {
    auto runs = nlohmann::json::array();
    for (const auto& run : lr.runs) {
      nlohmann::json j{{"seed", run.seed}, {"failed", run.failed}, {"structures", run.structures}};
      if (run.failed) j["error"] = run.error;
      runs.push_back(j);
    }
    levels.push_back({{"noise", lr.noise},
                      {"epoch_wise", lr.epoch_wise},
                      {"cumulative", lr.cumulative},
                      {"final_unique", lr.final_unique},
                      {"warnings", lr.warnings},
                      {"runs", runs}});
  }
  return {{"version", kVersion}, {"method", "td"}, {"epochs", r.epochs}, {"steps_per_epoch", r.steps_per_epoch},
          {"levels", levels}};
}

std::string epoch_diversity_csv(const DiversityReport& r) {
  std::ostringstream os;
  os << "method,noise,epoch,count\n";
  for (const auto& lr : r.levels)
    for (std::size_t e = 0; e < lr.epoch_wise.size(); ++e)
      os << "td," << format_double(lr.noise) << ',' << e + 1 << ',' << lr.epoch_wise[e] << '\n';
  return os.str();
}

std::string cumulative_diversity_csv(const DiversityReport& r) {
  std::ostringstream os;
  os << "method,noise,epoch,avg_unique\n";
  for (const auto& lr : r.levels)
    for (std::size_t e = 0; e < lr.cumulative.size(); ++e)
      os << "td," << format_double(lr.noise) << ',' << e + 1 << ',' << format_double(lr.cumulative[e]) << '\n';
  return os.str();
}

} // namespace tdn
