#include "tdn/gradcheck.hpp"

#include <chrono>

namespace tdn {

GradcheckSummary run_gradcheck_suite(const GradcheckConfig& cfg) {
  if (cfg.n_configs < 1) throw ValidationError("gradcheck: n_configs must be >= 1");
  if (!(cfg.step > 0.0)) throw ValidationError("gradcheck: step must be > 0");
  if (cfg.batch < 1) throw ValidationError("gradcheck: batch must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckSummary out;
  auto rng = make_rng(cfg.seed, Stream::Weights);
  std::uniform_int_distribution<int> pick_d(0, 2), pick_k(1, 5), pick_m(2, 4), pick_r(1, 8), coin(0, 1);
  std::normal_distribution<double> la(0.0, 1.5);
  const int dims[] = {2, 5, 10};
  for (int c = 0; c < cfg.n_configs; ++c) {
    GradcheckCase gc;
    gc.model.d = dims[pick_d(rng)];
    gc.model.k_max = pick_k(rng);
    gc.model.m_max = pick_m(rng);
    gc.model.rank = pick_r(rng);
    gc.model.include_sin = coin(rng) == 1;
    gc.loss = c % 2 == 0 ? LossKind::MSE : LossKind::BCE;
    gc.gates_frozen = c % 5 == 4;

    DualStreamModel model(gc.model);
    model.init_weights(0.3, rng);
    model.intercept = 0.1;
    for (double& a : model.gates.log_alphas) a = la(rng);
    model.gates.frozen_open = gc.gates_frozen;

    Matrix X(static_cast<std::size_t>(cfg.batch), static_cast<std::size_t>(gc.model.d));
    fill_normal(X.flat(), 0.7, rng);
    Vec y(X.rows());
    if (gc.loss == LossKind::MSE) fill_normal(y, 1.0, rng);
    else
      for (double& v : y) v = coin(rng);

    auto grng = make_rng(cfg.seed, Stream::Gates, static_cast<std::uint64_t>(c));
    const GateSample gates = gc.gates_frozen ? open_gates(model.gates) : sample_gates(model.gates, grng);
    gc.report = finite_diff_check(model, BatchView{X, y}, gc.loss, gates, gc.gates_frozen ? 0.0 : 0.05, cfg.step);
    out.max_relative_error = std::max(out.max_relative_error, gc.report.max_relative_error);
    out.parameters_checked += gc.report.parameters_checked;
    out.cases.push_back(std::move(gc));
  }
  out.passed = out.max_relative_error < cfg.tolerance;
  out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

nlohmann::json to_json(const GradcheckSummary& s) {
  auto cases = nlohmann::json::array();
  for (const auto& c : s.cases)
    cases.push_back({{"model", to_json(c.model)},
                     {"loss", c.loss == LossKind::MSE ? "mse" : "bce"},
                     {"gates_frozen", c.gates_frozen},
                     {"max_relative_error", c.report.max_relative_error},
                     {"worst_parameter", c.report.worst_parameter},
                     {"parameters_checked", c.report.parameters_checked}});
  return {{"version", kVersion},
          {"passed", s.passed},
          {"max_relative_error", s.max_relative_error},
          {"parameters_checked", s.parameters_checked},
          {"cases", cases}};
}

} // namespace tdn
