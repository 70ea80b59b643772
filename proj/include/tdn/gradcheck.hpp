#ifndef TDN_GRADCHECK_HPP
#define TDN_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/grad.hpp"

namespace tdn {

// Random small models checked against central differences: d in {2,5,10},
// K_max <= 5, M_max <= 4, R <= 8, both losses, sampled gates.
struct GradcheckConfig {
  int n_configs = 20;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  int batch = 6;
};

struct GradcheckCase {
  ModelConfig model;
  LossKind loss = LossKind::MSE;
  bool gates_frozen = false;
  FiniteDiffReport report;
};

struct GradcheckSummary {
  std::vector<GradcheckCase> cases;
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  bool passed = false;
  double wall_time_s = 0.0;
};

GradcheckSummary run_gradcheck_suite(const GradcheckConfig& cfg);

nlohmann::json to_json(const GradcheckSummary& s);

} // namespace tdn

#endif // TDN_GRADCHECK_HPP
