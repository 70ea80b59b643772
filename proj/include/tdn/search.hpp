#ifndef TDN_SEARCH_HPP
#define TDN_SEARCH_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/data.hpp"
#include "tdn/grad.hpp"
#include "tdn/model.hpp"
#include "tdn/optim.hpp"

namespace tdn {

// Coefficient-blind signature of an aggregation formula.
struct FormulaStructure {
  std::set<int> poly;          // active k in 1..K_max
  std::set<int> interactions;  // active m in 2..M_max
  bool sin = false;

  bool empty() const { return poly.empty() && interactions.empty() && !sin; }
  // "P1(x) + P2(x) + I2(x) + sin(x)"; "0" when empty.
  std::string canonical() const;
  bool operator==(const FormulaStructure&) const = default;
  auto operator<=>(const FormulaStructure&) const = default;
};

FormulaStructure parse_canonical(const std::string& s);

// {"poly": [...], "interactions": [...], "sin": b, "canonical": "..."}
nlohmann::json to_json(const FormulaStructure& s);
FormulaStructure structure_from_json(const nlohmann::json& j);

// Scaled: every term starts with output std init_weight_std and each block's
// Adam step is multiplied by its unit-output weight size. Uniform: every
// weight ~ N(0, init_weight_std^2), one learning rate for all blocks.
enum class InitScheme { Scaled, Uniform };

struct SearchConfig {
  double lambda_l0 = 0.05;
  int warmup_steps = 1000;
  int phase2_steps = 12000;
  int batch_size = 256;
  AdamParams adam{};
  std::optional<double> time_budget_s = 60.0;
  std::uint64_t seed = 0;
  double init_weight_std = 0.1;
  double init_log_alpha = 2.0;
  double threshold = 0.5;
  LossKind loss = LossKind::MSE;
  // Fit an ungated intercept next to f(z).
  bool fit_intercept = true;
  // Record extract_structure after every `snapshot_every` steps (0: never).
  int snapshot_every = 0;
  // Keep per-step records in the report (disable for large sweeps).
  bool record_steps = true;
  InitScheme init_scheme = InitScheme::Scaled;
  // Train the polynomial terms on x^k minus its training mean; the offsets
  // are folded into the intercept when the search ends.
  bool center_features = true;

  void validate() const;
  int total_steps() const { return warmup_steps + phase2_steps; }
  // Splits `epochs * ceil(n / batch_size)` steps into warm-up and phase 2
  // using `warmup_fraction`.
  void set_epochs(int epochs, std::size_t n_train, double warmup_fraction = 0.4);
};

nlohmann::json to_json(const SearchConfig& c);
SearchConfig search_config_from_json(const nlohmann::json& j);

struct StepRecord {
  int step = 0;
  double task_loss = 0.0;
  double l0_penalty = 0.0;
  std::vector<double> gate_probs;
};

struct RankReport {
  int order = 0;
  int kept_components = 0;  // product-of-norms >= 1e-4 * largest
};

struct TrainReport {
  std::vector<StepRecord> per_step;
  std::vector<std::string> gate_names;
  std::vector<std::pair<int, FormulaStructure>> snapshots;  // (step, structure)
  std::vector<RankReport> rank_report;
  FormulaStructure structure;
  int steps_run = 0;
  bool stopped_by_budget = false;
  double final_task_loss = 0.0;  // full training set, test-time gates
  double wall_time_s = 0.0;
};

nlohmann::json to_json(const TrainReport& r, const SearchConfig& cfg, const ModelConfig& mcfg);
// CSV with columns step,gate_name,prob.
std::string gate_trajectory_csv(const TrainReport& r);

struct SearchResult {
  DualStreamModel model;
  FormulaStructure structure;
  TrainReport report;
};

// Two-phase search: warm-up with gates frozen open (weights only, task loss
// only), then gates unfrozen with objective task loss + lambda * expected L0.
// Deterministic given the seed unless the time budget cuts phase 2 short.
SearchResult run_search(const Dataset& train, const SearchConfig& cfg, const ModelConfig& model_cfg);

// A term is active iff its test-time gate exceeds `threshold`.
FormulaStructure extract_structure(const DualStreamModel& model, double threshold = 0.5);

std::vector<RankReport> rank_parsimony(const DualStreamModel& model, const FormulaStructure& s,
                                       double relative_cutoff = 1e-4);

} // namespace tdn

#endif // TDN_SEARCH_HPP
