#ifndef TDN_GATES_HPP
#define TDN_GATES_HPP

#include <string>
#include <vector>

#include "tdn/common.hpp"

namespace tdn {

struct HardConcreteParams {
  double beta = 2.0 / 3.0;
  double gamma = -0.1;
  double zeta = 1.1;
};

// One hard-concrete gate per candidate term, ordered
//   [poly k=1..K_max, interaction m=2..M_max, sin].
struct GateBank {
  int n_poly = 0;
  int n_interaction = 0;
  bool has_sin = false;
  std::vector<double> log_alphas;
  HardConcreteParams hc;
  bool frozen_open = false;

  GateBank() = default;
  GateBank(int k_max, int m_max, bool include_sin, double init_log_alpha);

  std::size_t size() const { return log_alphas.size(); }
  std::size_t poly_index(int k) const { return static_cast<std::size_t>(k - 1); }
  std::size_t interaction_index(int m) const { return static_cast<std::size_t>(n_poly + m - 2); }
  std::size_t sin_index() const { return static_cast<std::size_t>(n_poly + n_interaction); }

  // "P3", "I2", "sin"
  std::string gate_name(std::size_t g) const;

  void validate() const;
};

// What backward needs to push gradients through the reparameterisation:
// d gate / d log_alpha at the sampled noise (0 in the clamped regions).
struct GateSample {
  std::vector<double> values;
  std::vector<double> dvalue_dlog_alpha;
  std::vector<double> uniforms; // empty when frozen open
};

inline constexpr double kUniformEps = 1e-6;

GateSample sample_gates(const GateBank& bank, Rng& rng);

// Gate values for fixed uniforms; used by sample_gates and by the
// finite-difference check, which needs the noise frozen.
GateSample gates_from_uniforms(const GateBank& bank, const std::vector<double>& uniforms);

GateSample open_gates(const GateBank& bank);

// P(gate != 0) for a single log_alpha.
double gate_open_probability(double log_alpha, const HardConcreteParams& hc);

// Sum over gates of P(gate != 0); the sparsity term of the search objective.
double expected_l0(const GateBank& bank);
std::vector<double> expected_l0_grad(const GateBank& bank);

// Deterministic test-time gate clamp(sigmoid(log_alpha) (zeta - gamma) + gamma, 0, 1).
double test_time_gate(double log_alpha, const HardConcreteParams& hc);

} // namespace tdn

#endif // TDN_GATES_HPP
