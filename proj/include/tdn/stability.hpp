#ifndef TDN_STABILITY_HPP
#define TDN_STABILITY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/data.hpp"
#include "tdn/search.hpp"

namespace tdn {

struct StabilityConfig {
  int n_seeds = 10;
  std::vector<double> noise_levels{0.01, 0.025, 0.05, 0.1};
  int epochs = 20;
  // Record a structure after every epoch. When off only the final epoch is
  // recorded and the per-epoch tables have a single row per noise level.
  bool snapshot_per_epoch = true;
  // Search seeds are seed_base + i. Label noise for level l comes from the
  // noise stream of noise_seed, index l, and is shared by all seeds.
  std::uint64_t seed_base = 0;
  std::uint64_t noise_seed = 0;
  double warmup_fraction = 0.4;
  int jobs = 1;

  void validate() const;
};

nlohmann::json to_json(const StabilityConfig& c);
StabilityConfig stability_config_from_json(const nlohmann::json& j);

struct SeedRun {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::vector<std::string> structures;  // canonical string per recorded epoch
};

struct NoiseLevelReport {
  double noise = 0.0;
  std::vector<SeedRun> runs;
  std::vector<int> epoch_wise;      // distinct structures across seeds, per epoch
  std::vector<double> cumulative;   // mean per-seed distinct structures so far, per epoch
  int final_unique = 0;
  std::vector<std::string> warnings;
};

struct DiversityReport {
  int epochs = 0;
  int steps_per_epoch = 0;
  std::vector<NoiseLevelReport> levels;
};

// Epoch-wise and cumulative diversity from per-seed structure sequences.
// Failed runs are skipped.
void compute_diversity(NoiseLevelReport& level);

DiversityReport run_stability(const Dataset& data, const StabilityConfig& cfg, const SearchConfig& search,
                              const ModelConfig& model_cfg);

nlohmann::json to_json(const DiversityReport& r);
// method,noise,epoch,count
std::string epoch_diversity_csv(const DiversityReport& r);
// method,noise,epoch,avg_unique
std::string cumulative_diversity_csv(const DiversityReport& r);

} // namespace tdn

#endif // TDN_STABILITY_HPP
