#include "tdn/gates.hpp"

#include <algorithm>
#include <cmath>

namespace tdn {

GateBank::GateBank(int k_max, int m_max, bool include_sin, double init_log_alpha)
    : n_poly(k_max), n_interaction(m_max - 1), has_sin(include_sin) {
  log_alphas.assign(static_cast<std::size_t>(n_poly + n_interaction + (has_sin ? 1 : 0)),
                    init_log_alpha);
}

std::string GateBank::gate_name(std::size_t g) const {
  const auto i = static_cast<int>(g);
  if (i < n_poly) return "P" + std::to_string(i + 1);
  if (i < n_poly + n_interaction) return "I" + std::to_string(i - n_poly + 2);
  return "sin";
}

void GateBank::validate() const {
  if (!(hc.gamma < 0.0 && hc.zeta > 1.0 && hc.beta > 0.0))
    throw ValidationError("gate bank: require gamma < 0 < 1 < zeta and beta > 0");
  const std::size_t expected = static_cast<std::size_t>(n_poly + n_interaction + (has_sin ? 1 : 0));
  if (log_alphas.size() != expected)
    throw ValidationError("gate bank: expected " + std::to_string(expected) + " log_alphas, got " +
                          std::to_string(log_alphas.size()));
}

GateSample open_gates(const GateBank& bank) {
  GateSample s;
  s.values.assign(bank.size(), 1.0);
  s.dvalue_dlog_alpha.assign(bank.size(), 0.0);
  return s;
}

GateSample gates_from_uniforms(const GateBank& bank, const std::vector<double>& uniforms) {
  const auto& hc = bank.hc;
  GateSample s;
  s.uniforms = uniforms;
  s.values.resize(bank.size());
  s.dvalue_dlog_alpha.resize(bank.size());
  for (std::size_t g = 0; g < bank.size(); ++g) {
    const double u = uniforms[g];
    const double logit = (std::log(u) - std::log1p(-u) + bank.log_alphas[g]) / hc.beta;
    const double sv = sigmoid(logit);
    const double stretched = sv * (hc.zeta - hc.gamma) + hc.gamma;
    if (stretched <= 0.0) {
      s.values[g] = 0.0;
      s.dvalue_dlog_alpha[g] = 0.0;
    } else if (stretched >= 1.0) {
      s.values[g] = 1.0;
      s.dvalue_dlog_alpha[g] = 0.0;
    } else {
      s.values[g] = stretched;
      s.dvalue_dlog_alpha[g] = (hc.zeta - hc.gamma) * sv * (1.0 - sv) / hc.beta;
    }
  }
  return s;
}

GateSample sample_gates(const GateBank& bank, Rng& rng) {
  if (bank.frozen_open) return open_gates(bank);
  std::uniform_real_distribution<double> ud(kUniformEps, 1.0 - kUniformEps);
  std::vector<double> u(bank.size());
  for (double& x : u) x = ud(rng);
  return gates_from_uniforms(bank, u);
}

double gate_open_probability(double log_alpha, const HardConcreteParams& hc) {
  return sigmoid(log_alpha - hc.beta * std::log(-hc.gamma / hc.zeta));
}

double expected_l0(const GateBank& bank) {
  double total = 0.0;
  for (double la : bank.log_alphas) total += gate_open_probability(la, bank.hc);
  return total;
}

std::vector<double> expected_l0_grad(const GateBank& bank) {
  std::vector<double> g(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double p = gate_open_probability(bank.log_alphas[i], bank.hc);
    g[i] = p * (1.0 - p);
  }
  return g;
}

double test_time_gate(double log_alpha, const HardConcreteParams& hc) {
  return std::clamp(sigmoid(log_alpha) * (hc.zeta - hc.gamma) + hc.gamma, 0.0, 1.0);
}

} // namespace tdn
