#ifndef TDN_BENCH_HPP
#define TDN_BENCH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/network.hpp"
#include "tdn/search.hpp"
#include "tdn/synthetic.hpp"

namespace tdn {

// Stage-2 settings for the [d, 1] refit. layer_widths, structure, head and
// seed are filled in per run.
struct RefitConfig {
  double learning_rate = 1e-3;
  int epochs = 300;
  int batch_size = 64;
  int patience_steps = 50;
  int eval_every = 10;
  int min_steps = 3000;
  double val_fraction = 0.1;  // carved from the end of the training split
  int rank2 = 8;

  void validate() const;
};

nlohmann::json to_json(const RefitConfig& c);
RefitConfig refit_config_from_json(const nlohmann::json& j);

struct TwoStageResult {
  FormulaStructure structure;
  FormulaStructure truth;
  StructureMatch match = StructureMatch::Miss;
  double test_mse = 0.0;
  double search_wall_s = 0.0;
  bool stopped_by_budget = false;
  EvalReport refit;
};

// Search on the training split, then refit a fresh [d, 1] identity network
// with the found structure and report its test MSE. The model config's d is
// taken from the spec.
TwoStageResult two_stage_eval(const SyntheticSpec& spec, const SearchConfig& search, const ModelConfig& model,
                              const RefitConfig& refit = {});
TwoStageResult two_stage_eval(const SyntheticData& data, std::uint64_t seed, const SearchConfig& search,
                              const ModelConfig& model, const RefitConfig& refit = {});

struct BenchConfig {
  std::vector<SynthMode> modes{SynthMode::Pure, SynthMode::Interact, SynthMode::Hybrid};
  std::vector<int> formula_ids{0, 1, 2, 3, 4};
  std::vector<int> dims{10};
  int trials = 1;
  // Trial t uses coeff, data and search seed = seed + t.
  std::uint64_t seed = 0;
  std::size_t n = 2500;
  double noise_sigma = 0.0;
  WeightScale weight_scale = WeightScale::Variance;
  SearchConfig search{};
  ModelConfig model{};  // d ignored
  RefitConfig refit{};
  int jobs = 1;

  void validate() const;
};

nlohmann::json to_json(const BenchConfig& c);
BenchConfig bench_config_from_json(const nlohmann::json& j);

struct BenchRow {
  SynthMode mode = SynthMode::Pure;
  int formula_id = 0;
  int d = 0;
  int trial = 0;
  TwoStageResult result;
};

struct BenchResult {
  std::vector<BenchRow> rows;  // mode, d, formula_id, trial order
};

// Cells run on `jobs` worker threads; row order does not depend on scheduling.
BenchResult run_bench(const BenchConfig& cfg);

// mode,formula_id,d,trial,structure,match,test_mse,search_wall_s
std::string results_csv(const BenchResult& r);
// Per (mode, d): mean over formula IDs of the per-ID trial means, SEM over
// trials of the per-trial ID means, exact-match count.
nlohmann::json aggregate_json(const BenchResult& r);

} // namespace tdn

#endif // TDN_BENCH_HPP
