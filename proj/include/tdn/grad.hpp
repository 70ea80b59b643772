#ifndef TDN_GRAD_HPP
#define TDN_GRAD_HPP

#include <span>
#include <string>
#include <vector>

#include "tdn/common.hpp"
#include "tdn/gates.hpp"
#include "tdn/model.hpp"

namespace tdn {

enum class LossKind { MSE, BCE };

// Rows of X (all rows when `rows` is empty) with their targets.
struct BatchView {
  const Matrix& X;
  std::span<const double> y;
  std::span<const std::size_t> rows = {};

  std::size_t size() const { return rows.empty() ? X.rows() : rows.size(); }
  std::size_t index(std::size_t i) const { return rows.empty() ? i : rows[i]; }
};

struct GradientBundle {
  Matrix d_poly;
  std::vector<Matrix> d_cp;
  Vec d_sin;
  double d_intercept = 0.0;
  Vec d_gate_logits;

  explicit GradientBundle(const DualStreamModel& model);
  void set_zero();
  bool finite() const;
  // Name of the first parameter block holding a non-finite entry, or "".
  std::string first_nonfinite_block() const;
};

struct BackwardResult {
  double task_loss = 0.0;   // mean over the batch
  double l0_penalty = 0.0;  // expected L0, unscaled
  double objective = 0.0;   // task_loss + lambda * l0_penalty
};

// Exact gradients of task_loss + lambda * expected_l0 at the sampled gate
// values, including the pathwise term through the hard-concrete transform.
// Pass lambda = 0 and an open GateSample for the warm-up phase.
BackwardResult backward(const DualStreamModel& model, const BatchView& batch, LossKind loss,
                        const GateSample& gates, double lambda, GradientBundle& grads);

// Loss only; same conventions as backward.
BackwardResult evaluate_objective(const DualStreamModel& model, const BatchView& batch,
                                  LossKind loss, const GateSample& gates, double lambda);

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t parameters_checked = 0;
};

// Central differences over every weight, the intercept and (unless the gates
// are frozen open) every log_alpha, with the gate noise held fixed.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
FiniteDiffReport finite_diff_check(const DualStreamModel& model, const BatchView& batch,
                                   LossKind loss, const GateSample& gates, double lambda,
                                   double step);

} // namespace tdn

#endif // TDN_GRAD_HPP
