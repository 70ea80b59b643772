#include "tdn/bench.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace tdn {

void RefitConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("refit.learning_rate: must be > 0");
  if (epochs < 1) throw ValidationError("refit.epochs: must be >= 1");
  if (batch_size < 1) throw ValidationError("refit.batch_size: must be >= 1");
  if (patience_steps < 0) throw ValidationError("refit.patience_steps: must be >= 0");
  if (eval_every < 1) throw ValidationError("refit.eval_every: must be >= 1");
  if (min_steps < 0) throw ValidationError("refit.min_steps: must be >= 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("refit.val_fraction: must be in [0, 1)");
  if (rank2 < 1) throw ValidationError("refit.rank2: must be >= 1");
}

nlohmann::json to_json(const RefitConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"patience_steps", c.patience_steps}, {"eval_every", c.eval_every}, {"min_steps", c.min_steps}, {"val_fraction", c.val_fraction},
          {"rank2", c.rank2}};
}

RefitConfig refit_config_from_json(const nlohmann::json& j) {
  RefitConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "learning_rate") c.learning_rate = v.get<double>();
    else if (k == "epochs") c.epochs = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "patience_steps") c.patience_steps = v.get<int>();
    else if (k == "eval_every") c.eval_every = v.get<int>();
    else if (k == "min_steps") c.min_steps = v.get<int>();
    else if (k == "val_fraction") c.val_fraction = v.get<double>();
    else if (k == "rank2") c.rank2 = v.get<int>();
    else throw ValidationError("refit." + k + ": unknown key");
  }
  return c;
}

TwoStageResult two_stage_eval(const SyntheticData& data, std::uint64_t seed, const SearchConfig& search,
                              const ModelConfig& model, const RefitConfig& refit) {
  refit.validate();
  const Dataset& train = data.split.train;
  ModelConfig mc = model;
  mc.d = static_cast<int>(train.dim());
  SearchConfig sc = search;
  sc.seed = seed;

  TwoStageResult out;
  const SearchResult found = run_search(train, sc, mc);
  out.structure = found.structure;
  out.truth = data.truth.structure();
  out.match = classify_match(out.structure, out.truth);
  out.search_wall_s = found.report.wall_time_s;
  out.stopped_by_budget = found.report.stopped_by_budget;

  const auto n_val = static_cast<std::size_t>(std::floor(refit.val_fraction * static_cast<double>(train.size())));
  if (n_val >= train.size()) throw ValidationError("refit.val_fraction leaves no training rows");
  std::vector<std::size_t> fit_rows(train.size() - n_val), val_rows(n_val);
  std::iota(fit_rows.begin(), fit_rows.end(), 0);
  std::iota(val_rows.begin(), val_rows.end(), fit_rows.size());

  NetworkSpec ns;
  ns.layer_widths = {mc.d, 1};
  ns.structure = out.structure;
  ns.head = Head::Regression;
  ns.learning_rate = refit.learning_rate;
  ns.epochs = refit.epochs;
  ns.batch_size = refit.batch_size;
  ns.seed = seed;
  ns.rank2 = refit.rank2;
  ns.patience_steps = refit.patience_steps;
  ns.eval_every = refit.eval_every;
  ns.min_steps = refit.min_steps;
  out.refit = train_network(ns, train.subset(fit_rows), train.subset(val_rows), data.split.test).report;
  out.test_mse = out.refit.test_mse;
  return out;
}

TwoStageResult two_stage_eval(const SyntheticSpec& spec, const SearchConfig& search, const ModelConfig& model,
                              const RefitConfig& refit) {
  return two_stage_eval(generate(spec), search.seed, search, model, refit);
}

void BenchConfig::validate() const {
  if (modes.empty()) throw ValidationError("bench.modes: empty");
  if (formula_ids.empty()) throw ValidationError("bench.formula_ids: empty");
  for (int id : formula_ids)
    if (id < 0 || id > 4) throw ValidationError("bench.formula_ids: ids must be in 0..4");
  if (dims.empty()) throw ValidationError("bench.dims: empty");
  for (int d : dims)
    if (d < 1) throw ValidationError("bench.dims: dimensions must be >= 1");
  if (trials < 1) throw ValidationError("bench.trials: must be >= 1");
  if (n < 2) throw ValidationError("bench.n: must be >= 2");
  if (!(noise_sigma >= 0.0)) throw ValidationError("bench.noise_sigma: must be >= 0");
  if (jobs < 1) throw ValidationError("bench.jobs: must be >= 1");
  search.validate();
  refit.validate();
}

nlohmann::json to_json(const BenchConfig& c) {
  auto modes = nlohmann::json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  auto search = to_json(c.search);
  search.erase("seed");
  auto model = to_json(c.model);
  model.erase("d");
  return {{"modes", modes},
          {"formula_ids", c.formula_ids},
          {"dims", c.dims},
          {"trials", c.trials},
          {"seed", c.seed},
          {"n", c.n},
          {"noise_sigma", c.noise_sigma},
          {"weight_scale", c.weight_scale == WeightScale::Variance ? "variance" : "std"},
          {"search", search},
          {"model", model},
          {"refit", to_json(c.refit)},
          {"jobs", c.jobs}};
}

BenchConfig bench_config_from_json(const nlohmann::json& j) {
  BenchConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "modes") {
      c.modes.clear();
      for (const auto& m : v) c.modes.push_back(parse_mode(m.get<std::string>()));
    } else if (k == "formula_ids") c.formula_ids = v.get<std::vector<int>>();
    else if (k == "dims") c.dims = v.get<std::vector<int>>();
    else if (k == "trials") c.trials = v.get<int>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "n") c.n = v.get<std::size_t>();
    else if (k == "noise_sigma") c.noise_sigma = v.get<double>();
    else if (k == "weight_scale") {
      const auto s = v.get<std::string>();
      if (s != "variance" && s != "std") throw ValidationError("bench.weight_scale: expected 'variance' or 'std'");
      c.weight_scale = s == "variance" ? WeightScale::Variance : WeightScale::Std;
    } else if (k == "search") {
      if (v.contains("seed")) throw ValidationError("bench.search.seed: set by the trial, use bench.seed");
      c.search = search_config_from_json(v);
    } else if (k == "model") {
      auto m = v;
      if (m.contains("d")) throw ValidationError("bench.model.d: set by bench.dims");
      m["d"] = 1;
      c.model = model_config_from_json(m);
    } else if (k == "refit") c.refit = refit_config_from_json(v);
    else if (k == "jobs") c.jobs = v.get<int>();
    else throw ValidationError("bench." + k + ": unknown key");
  }
  return c;
}

BenchResult run_bench(const BenchConfig& cfg) {
  cfg.validate();
  BenchResult res;
  for (auto mode : cfg.modes)
    for (int d : cfg.dims)
      for (int id : cfg.formula_ids)
        for (int t = 0; t < cfg.trials; ++t) res.rows.push_back({mode, id, d, t, {}});

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= res.rows.size()) return;
      {
        std::lock_guard lk(failure_mu);
        if (failure) return;
      }
      auto& row = res.rows[i];
      try {
        SyntheticSpec spec;
        spec.mode = row.mode;
        spec.formula_id = row.formula_id;
        spec.d = row.d;
        spec.n = cfg.n;
        spec.noise_sigma = cfg.noise_sigma;
        spec.weight_scale = cfg.weight_scale;
        const std::uint64_t s = cfg.seed + static_cast<std::uint64_t>(row.trial);
        spec.coeff_seed = s;
        spec.data_seed = s;
        SearchConfig sc = cfg.search;
        sc.seed = s;
        row.result = two_stage_eval(spec, sc, cfg.model, cfg.refit);
      } catch (...) {
        std::lock_guard lk(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), res.rows.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return res;
}

std::string results_csv(const BenchResult& r) {
  std::ostringstream os;
  os << "mode,formula_id,d,trial,structure,match,test_mse,search_wall_s\n";
  for (const auto& row : r.rows)
    os << to_string(row.mode) << ',' << row.formula_id << ',' << row.d << ',' << row.trial << ','
       << row.result.structure.canonical() << ',' << to_string(row.result.match) << ','
       << format_double(row.result.test_mse) << ',' << format_double(row.result.search_wall_s) << '\n';
  return os.str();
}

nlohmann::json aggregate_json(const BenchResult& r) {
  struct Cell {
    std::map<int, std::vector<double>> by_id;     // id -> per-trial mse
    std::map<int, std::vector<double>> by_trial;  // trial -> per-id mse
    int exact = 0, total = 0;
  };
  std::map<std::pair<std::string, int>, Cell> cells;
  std::vector<std::pair<std::string, int>> order;
  for (const auto& row : r.rows) {
    const auto key = std::make_pair(to_string(row.mode), row.d);
    if (!cells.contains(key)) order.push_back(key);
    auto& c = cells[key];
    c.by_id[row.formula_id].push_back(row.result.test_mse);
    c.by_trial[row.trial].push_back(row.result.test_mse);
    c.exact += row.result.match == StructureMatch::Exact ? 1 : 0;
    ++c.total;
  }
  auto mean = [](const std::vector<double>& v) { return pairwise_sum(v) / static_cast<double>(v.size()); };
  auto out = nlohmann::json::array();
  for (const auto& key : order) {
    const auto& c = cells[key];
    nlohmann::json per_id = nlohmann::json::object();
    std::vector<double> id_means;
    for (const auto& [id, v] : c.by_id) {
      per_id[std::to_string(id)] = mean(v);
      id_means.push_back(mean(v));
    }
    std::vector<double> trial_means;
    for (const auto& [t, v] : c.by_trial) trial_means.push_back(mean(v));
    nlohmann::json sem = nullptr;
    if (trial_means.size() > 1) {
      const double m = mean(trial_means);
      double ss = 0.0;
      for (double v : trial_means) ss += (v - m) * (v - m);
      const double n = static_cast<double>(trial_means.size());
      sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    out.push_back({{"mode", key.first},
                   {"d", key.second},
                   {"mean_test_mse", mean(id_means)},
                   {"sem", sem},
                   {"per_formula_mse", per_id},
                   {"exact_matches", c.exact},
                   {"runs", c.total}});
  }
  return {{"version", kVersion}, {"cells", out}};
}

} // namespace tdn
