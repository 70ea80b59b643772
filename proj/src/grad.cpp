#include "tdn/grad.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace tdn {

GradientBundle::GradientBundle(const DualStreamModel& model)
    : d_poly(model.poly_weights.rows(), model.poly_weights.cols()),
      d_sin(model.sin_weights.size(), 0.0),
      d_gate_logits(model.gates.size(), 0.0) {
  for (const auto& f : model.cp) d_cp.emplace_back(f.a.rows(), f.a.cols());
}

void GradientBundle::set_zero() {
  std::fill(d_poly.flat().begin(), d_poly.flat().end(), 0.0);
  for (auto& m : d_cp) std::fill(m.flat().begin(), m.flat().end(), 0.0);
  std::fill(d_sin.begin(), d_sin.end(), 0.0);
  d_intercept = 0.0;
  std::fill(d_gate_logits.begin(), d_gate_logits.end(), 0.0);
}

std::string GradientBundle::first_nonfinite_block() const {
  if (!all_finite(d_poly.flat())) return "poly_weights";
  for (std::size_t i = 0; i < d_cp.size(); ++i)
    if (!all_finite(d_cp[i].flat())) return "cp_factors[order " + std::to_string(i + 2) + "]";
  if (!all_finite(d_sin)) return "sin_weights";
  if (!std::isfinite(d_intercept)) return "intercept";
  if (!all_finite(d_gate_logits)) return "gate_log_alphas";
  return "";
}

bool GradientBundle::finite() const { return first_nonfinite_block().empty(); }

namespace {

void check_batch(const DualStreamModel& model, const BatchView& batch, LossKind loss,
                 const GateSample& gates) {
  if (batch.size() == 0) throw ValidationError("backward: empty batch");
  if (static_cast<int>(batch.X.cols()) != model.config.d)
    throw ValidationError("backward: batch width " + std::to_string(batch.X.cols()) +
                          " does not match model d = " + std::to_string(model.config.d));
  if (gates.values.size() != model.gates.size())
    throw ValidationError("backward: gate sample does not match the gate bank");
  if (loss == LossKind::BCE) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double y = batch.y[batch.index(i)];
      if (y != 0.0 && y != 1.0)
        throw ValidationError("backward: BCE label " + std::to_string(y) + " outside {0,1}");
    }
  }
}

// log(1 + exp(f)) - y f, stable for large |f|.
double bce(double f, double y) { return std::max(f, 0.0) - y * f + std::log1p(std::exp(-std::abs(f))); }

// Per-sample working buffers, reused across the batch.
struct Workspace {
  Vec zk;
  Vec proj;     // projections a_{r,j} . z for one order, length rank*order
  Vec partial;  // prod_{i != j} p_{r,i}
  Vec terms;
};

// Fills ws.terms with the ungated term values; leaves nothing else behind.
void compute_terms(const DualStreamModel& model, std::span<const double> z, Workspace& ws) {
  const auto& cfg = model.config;
  ws.terms.assign(cfg.gate_count(), 0.0);
  ws.zk.assign(z.begin(), z.end());
  std::size_t g = 0;
  for (int k = 1; k <= cfg.k_max; ++k, ++g) {
    if (k > 1)
      for (std::size_t i = 0; i < z.size(); ++i) ws.zk[i] *= z[i];
    ws.terms[g] = dot(model.poly_weights.row(static_cast<std::size_t>(k - 1)), ws.zk);
    if (!model.poly_centers.empty())
      ws.terms[g] -= dot(model.poly_weights.row(static_cast<std::size_t>(k - 1)), model.poly_centers.row(static_cast<std::size_t>(k - 1)));
  }
  for (const auto& f : model.cp) ws.terms[g++] = cp_contract(f, z);
  if (cfg.include_sin) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += model.sin_weights[i] * std::sin(z[i]);
    ws.terms[g] = s;
  }
}

template <bool WithGrad>
BackwardResult run(const DualStreamModel& model, const BatchView& batch, LossKind loss,
                   const GateSample& gates, double lambda, GradientBundle* grads) {
  check_batch(model, batch, loss, gates);
  const auto& cfg = model.config;
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  if constexpr (WithGrad) grads->set_zero();

  Workspace ws;
  Vec losses(n);
  Vec d_gate_task(model.gates.size(), 0.0);

  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t row = batch.index(s);
    const auto z = batch.X.row(row);
    const double y = batch.y[row];
    compute_terms(model, z, ws);

    double f = model.intercept;
    for (std::size_t g = 0; g < ws.terms.size(); ++g) f += gates.values[g] * ws.terms[g];

    double e = 0.0;
    if (loss == LossKind::MSE) {
      const double r = f - y;
      losses[s] = r * r;
      e = 2.0 * r * inv_n;
    } else {
      losses[s] = bce(f, y);
      e = (sigmoid(f) - y) * inv_n;
    }

    if constexpr (WithGrad) {
      grads->d_intercept += e;
      for (std::size_t g = 0; g < ws.terms.size(); ++g) d_gate_task[g] += e * ws.terms[g];

      // polynomial stream
      ws.zk.assign(z.begin(), z.end());
      for (int k = 1; k <= cfg.k_max; ++k) {
        if (k > 1)
          for (std::size_t i = 0; i < z.size(); ++i) ws.zk[i] *= z[i];
        const double c = e * gates.values[model.gates.poly_index(k)];
        if (c == 0.0) continue;
        axpy(c, ws.zk, grads->d_poly.row(static_cast<std::size_t>(k - 1)));
        if (!model.poly_centers.empty())
          axpy(-c, model.poly_centers.row(static_cast<std::size_t>(k - 1)), grads->d_poly.row(static_cast<std::size_t>(k - 1)));
      }

      // interaction stream: prefix/suffix products give every
      // prod_{i != j} p_{r,i} without dividing by a possibly zero factor.
      for (std::size_t mi = 0; mi < model.cp.size(); ++mi) {
        const auto& f_m = model.cp[mi];
        const int m = f_m.order;
        const double c = e * gates.values[model.gates.interaction_index(m)];
        if (c == 0.0) continue;
        auto& dA = grads->d_cp[mi];
        ws.proj.resize(static_cast<std::size_t>(m));
        ws.partial.resize(static_cast<std::size_t>(m));
        for (int r = 0; r < f_m.rank; ++r) {
          for (int j = 0; j < m; ++j) ws.proj[static_cast<std::size_t>(j)] = dot(f_m.factor(r, j), z);
          double prefix = 1.0;
          for (int j = 0; j < m; ++j) {
            ws.partial[static_cast<std::size_t>(j)] = prefix;
            prefix *= ws.proj[static_cast<std::size_t>(j)];
          }
          double suffix = 1.0;
          for (int j = m - 1; j >= 0; --j) {
            ws.partial[static_cast<std::size_t>(j)] *= suffix;
            suffix *= ws.proj[static_cast<std::size_t>(j)];
          }
          for (int j = 0; j < m; ++j)
            axpy(c * ws.partial[static_cast<std::size_t>(j)], z,
                 dA.row(static_cast<std::size_t>(r * m + j)));
        }
      }

      if (cfg.include_sin) {
        const double c = e * gates.values[model.gates.sin_index()];
        if (c != 0.0)
          for (std::size_t i = 0; i < z.size(); ++i) grads->d_sin[i] += c * std::sin(z[i]);
      }
    }
  }

  BackwardResult out;
  out.task_loss = pairwise_sum(losses) * inv_n;
  out.l0_penalty = expected_l0(model.gates);
  out.objective = out.task_loss + lambda * out.l0_penalty;

  if constexpr (WithGrad) {
    const auto dl0 = expected_l0_grad(model.gates);
    for (std::size_t g = 0; g < model.gates.size(); ++g)
      grads->d_gate_logits[g] = d_gate_task[g] * gates.dvalue_dlog_alpha[g] + lambda * dl0[g];
  }
  return out;
}

} // namespace

BackwardResult backward(const DualStreamModel& model, const BatchView& batch, LossKind loss,
                        const GateSample& gates, double lambda, GradientBundle& grads) {
  return run<true>(model, batch, loss, gates, lambda, &grads);
}

BackwardResult evaluate_objective(const DualStreamModel& model, const BatchView& batch,
                                  LossKind loss, const GateSample& gates, double lambda) {
  return run<false>(model, batch, loss, gates, lambda, nullptr);
}

FiniteDiffReport finite_diff_check(const DualStreamModel& model, const BatchView& batch,
                                   LossKind loss, const GateSample& gates, double lambda,
                                   double step) {
  if (!(step > 0.0)) throw ValidationError("finite_diff_check: step must be > 0");
  GradientBundle analytic(model);
  backward(model, batch, loss, gates, lambda, analytic);

  DualStreamModel probe = model;
  FiniteDiffReport rep;

  auto objective = [&](const DualStreamModel& m) {
    const GateSample gs = gates.uniforms.empty() ? gates : gates_from_uniforms(m.gates, gates.uniforms);
    return evaluate_objective(m, batch, loss, gs, lambda).objective;
  };

  auto check = [&](double& param, double grad, const std::string& name) {
    const double saved = param;
    param = saved + step;
    const double up = objective(probe);
    param = saved - step;
    const double down = objective(probe);
    param = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(grad), std::abs(numeric), 1e-8});
    const double rel = std::abs(grad - numeric) / denom;
    ++rep.parameters_checked;
    if (rel > rep.max_relative_error || rep.worst_parameter.empty()) {
      rep.max_relative_error = rel;
      rep.worst_parameter = name;
    }
  };

  for (std::size_t i = 0; i < probe.poly_weights.size(); ++i)
    check(probe.poly_weights.flat()[i], analytic.d_poly.flat()[i], "poly_weights[" + std::to_string(i) + "]");
  for (std::size_t mi = 0; mi < probe.cp.size(); ++mi)
    for (std::size_t i = 0; i < probe.cp[mi].a.size(); ++i)
      check(probe.cp[mi].a.flat()[i], analytic.d_cp[mi].flat()[i],
            "cp_factors[order " + std::to_string(mi + 2) + "][" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < probe.sin_weights.size(); ++i)
    check(probe.sin_weights[i], analytic.d_sin[i], "sin_weights[" + std::to_string(i) + "]");
  check(probe.intercept, analytic.d_intercept, "intercept");
  for (std::size_t g = 0; g < probe.gates.size(); ++g)
    check(probe.gates.log_alphas[g], analytic.d_gate_logits[g], "log_alpha[" + model.gates.gate_name(g) + "]");
  return rep;
}

} // namespace tdn
