#ifndef TDN_MODEL_HPP
#define TDN_MODEL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/common.hpp"
#include "tdn/gates.hpp"

namespace tdn {

struct ModelConfig {
  int d = 1;
  int k_max = 5;
  int m_max = 4;
  int rank = 8;
  bool include_sin = true;

  void validate() const;
  std::size_t gate_count() const {
    return static_cast<std::size_t>(k_max + (m_max - 1) + (include_sin ? 1 : 0));
  }
  bool operator==(const ModelConfig&) const = default;
};

// Factor vectors a_{r,j} of one interaction order, stored as (rank * order) rows of length d.
struct CpFactors {
  int order = 2;
  int rank = 1;
  Matrix a;

  CpFactors() = default;
  CpFactors(int order_, int rank_, int d) : order(order_), rank(rank_), a(static_cast<std::size_t>(order_ * rank_), static_cast<std::size_t>(d)) {}

  std::span<double> factor(int r, int j) { return a.row(static_cast<std::size_t>(r * order + j)); }
  std::span<const double> factor(int r, int j) const { return a.row(static_cast<std::size_t>(r * order + j)); }

  bool operator==(const CpFactors&) const = default;
};

// Sum_r Prod_j (a_{r,j} . z)
double cp_contract(const CpFactors& f, std::span<const double> z);

// All stage-1 learnables.
//   f(z) = sum_k g_k (w_k . z^k) + sum_m g_m sum_r prod_j (a_{r,j} . z) + g_s (D . sin z)
// The intercept is not part of f; the search objective fits f(z) + intercept.
struct DualStreamModel {
  ModelConfig config;
  Matrix poly_weights;          // k_max x d, row k-1 holds w_k
  std::vector<CpFactors> cp;    // cp[m - 2] for m = 2..m_max
  Vec sin_weights;              // d (empty when sin is disabled)
  double intercept = 0.0;
  GateBank gates;
  // Optional k_max x d offsets: when set, the polynomial terms are
  // w_k . (z^k - poly_centers[k-1]). Used during search; see fold_centers.
  Matrix poly_centers;

  DualStreamModel() = default;
  explicit DualStreamModel(const ModelConfig& cfg, double init_log_alpha = 2.0);

  CpFactors& order(int m) { return cp[static_cast<std::size_t>(m - 2)]; }
  const CpFactors& order(int m) const { return cp[static_cast<std::size_t>(m - 2)]; }

  // Every entry i.i.d. Normal(0, stddev^2); intercept reset to 0.
  void init_weights(double stddev, Rng& rng);

  bool finite() const;
  bool operator==(const DualStreamModel&) const;

  // Moves the centre offsets into the intercept using the given gate values
  // and clears them, so predictions at those gates are unchanged.
  void fold_centers(std::span<const double> gate_values);
};

// Ungated term values in gate order: [w_k . z^k]_k, [cp order m]_m, [D . sin z].
std::vector<double> term_values(const DualStreamModel& model, std::span<const double> z);

double forward(const DualStreamModel& model, std::span<const double> z,
               std::span<const double> gate_values);

// forward + intercept
double predict(const DualStreamModel& model, std::span<const double> z,
               std::span<const double> gate_values);

// Materialises W = sum_r a_r^(1) o ... o a_r^(m) and contracts it with z (x) ... (x) z.
// Test-scale only: refuses d > 4 or m > 3.
double interaction_dense_oracle(const CpFactors& f, std::span<const double> z);

struct ParameterCount {
  std::uint64_t poly = 0;
  std::uint64_t interaction = 0;
  std::uint64_t sin = 0;
  std::uint64_t dense_equivalent = 0; // saturates at UINT64_MAX
};

ParameterCount count_parameters(const ModelConfig& cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// {config, poly_weights, cp_factors[m][r][j][d], sin_weights, gate_log_alphas, intercept}
nlohmann::json checkpoint_to_json(const DualStreamModel& model);
DualStreamModel checkpoint_from_json(const nlohmann::json& j);

} // namespace tdn

#endif // TDN_MODEL_HPP
