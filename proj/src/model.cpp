#include "tdn/model.hpp"

#include <cmath>
#include <limits>

namespace tdn {

void ModelConfig::validate() const {
  if (d < 1) throw ValidationError("model config: d must be >= 1");
  if (k_max < 1) throw ValidationError("model config: k_max must be >= 1");
  if (m_max < 2) throw ValidationError("model config: m_max must be >= 2");
  if (rank < 1) throw ValidationError("model config: rank must be >= 1");
}

double cp_contract(const CpFactors& f, std::span<const double> z) {
  double total = 0.0;
  for (int r = 0; r < f.rank; ++r) {
    double prod = 1.0;
    for (int j = 0; j < f.order; ++j) prod *= dot(f.factor(r, j), z);
    total += prod;
  }
  return total;
}

DualStreamModel::DualStreamModel(const ModelConfig& cfg, double init_log_alpha)
    : config(cfg), gates(cfg.k_max, cfg.m_max, cfg.include_sin, init_log_alpha) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d);
  poly_weights = Matrix(static_cast<std::size_t>(cfg.k_max), d);
  for (int m = 2; m <= cfg.m_max; ++m) cp.emplace_back(m, cfg.rank, cfg.d);
  if (cfg.include_sin) sin_weights.assign(d, 0.0);
}

void DualStreamModel::init_weights(double stddev, Rng& rng) {
  fill_normal(poly_weights.flat(), stddev, rng);
  for (auto& f : cp) fill_normal(f.a.flat(), stddev, rng);
  fill_normal(sin_weights, stddev, rng);
  intercept = 0.0;
}

bool DualStreamModel::finite() const {
  if (!all_finite(poly_weights.flat()) || !all_finite(sin_weights) || !std::isfinite(intercept))
    return false;
  for (const auto& f : cp)
    if (!all_finite(f.a.flat())) return false;
  return all_finite(gates.log_alphas);
}

void DualStreamModel::fold_centers(std::span<const double> gate_values) {
  if (poly_centers.empty()) return;
  for (int k = 1; k <= config.k_max; ++k) {
    const auto r = static_cast<std::size_t>(k - 1);
    intercept -= gate_values[gates.poly_index(k)] * dot(poly_weights.row(r), poly_centers.row(r));
  }
  poly_centers = Matrix();
}

bool DualStreamModel::operator==(const DualStreamModel& o) const {
  return config == o.config && poly_weights == o.poly_weights && cp == o.cp &&
         sin_weights == o.sin_weights && intercept == o.intercept &&
         gates.log_alphas == o.gates.log_alphas;
}

namespace {

void check_input(const DualStreamModel& model, std::span<const double> z) {
  if (static_cast<int>(z.size()) != model.config.d)
    throw ValidationError("forward: input has length " + std::to_string(z.size()) +
                          " but the polynomial/interaction/sin streams expect d = " +
                          std::to_string(model.config.d));
}

} // namespace

std::vector<double> term_values(const DualStreamModel& model, std::span<const double> z) {
  check_input(model, z);
  const auto& cfg = model.config;
  std::vector<double> t;
  t.reserve(cfg.gate_count());

  Vec zk(z.begin(), z.end());
  for (int k = 1; k <= cfg.k_max; ++k) {
    if (k > 1)
      for (std::size_t i = 0; i < zk.size(); ++i) zk[i] *= z[i];
    double v = dot(model.poly_weights.row(static_cast<std::size_t>(k - 1)), zk);
    if (!model.poly_centers.empty())
      v -= dot(model.poly_weights.row(static_cast<std::size_t>(k - 1)), model.poly_centers.row(static_cast<std::size_t>(k - 1)));
    t.push_back(v);
  }
  for (const auto& f : model.cp) t.push_back(cp_contract(f, z));
  if (cfg.include_sin) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += model.sin_weights[i] * std::sin(z[i]);
    t.push_back(s);
  }
  return t;
}

double forward(const DualStreamModel& model, std::span<const double> z,
               std::span<const double> gate_values) {
  if (gate_values.size() != model.config.gate_count())
    throw ValidationError("forward: got " + std::to_string(gate_values.size()) +
                          " gate values for a bank of " + std::to_string(model.config.gate_count()));
  const auto t = term_values(model, z);
  double f = 0.0;
  for (std::size_t g = 0; g < t.size(); ++g) f += gate_values[g] * t[g];
  return f;
}

double predict(const DualStreamModel& model, std::span<const double> z,
               std::span<const double> gate_values) {
  return forward(model, z, gate_values) + model.intercept;
}

double interaction_dense_oracle(const CpFactors& f, std::span<const double> z) {
  const auto d = f.a.cols();
  if (d > 4 || f.order > 3)
    throw ValidationError("dense oracle: refusing d = " + std::to_string(d) + ", m = " +
                          std::to_string(f.order) + " (test scale is d <= 4, m <= 3)");
  if (z.size() != d) throw ValidationError("dense oracle: input length mismatch");

  const int m = f.order;
  std::size_t cells = 1;
  for (int j = 0; j < m; ++j) cells *= d;

  // W[i1..im] = sum_r a_r1[i1] * ... * a_rm[im], flattened with i1 most significant.
  std::vector<double> w(cells, 0.0);
  std::vector<std::size_t> idx(static_cast<std::size_t>(m));
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rem = c;
    for (int j = m - 1; j >= 0; --j) {
      idx[static_cast<std::size_t>(j)] = rem % d;
      rem /= d;
    }
    for (int r = 0; r < f.rank; ++r) {
      double v = 1.0;
      for (int j = 0; j < m; ++j) v *= f.factor(r, j)[idx[static_cast<std::size_t>(j)]];
      w[c] += v;
    }
  }

  double total = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rem = c;
    double zz = 1.0;
    for (int j = 0; j < m; ++j) {
      zz *= z[rem % d];
      rem /= d;
    }
    total += w[c] * zz;
  }
  return total;
}

ParameterCount count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::uint64_t>(cfg.d);
  ParameterCount pc;
  pc.poly = static_cast<std::uint64_t>(cfg.k_max) * d;
  pc.sin = cfg.include_sin ? d : 0;
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  for (int m = 2; m <= cfg.m_max; ++m) {
    pc.interaction += static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(cfg.rank) * d;
    std::uint64_t p = 1;
    for (int j = 0; j < m; ++j) p = (p > kMax / d) ? kMax : p * d;
    pc.dense_equivalent = (pc.dense_equivalent > kMax - p) ? kMax : pc.dense_equivalent + p;
  }
  return pc;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"d", cfg.d}, {"k_max", cfg.k_max}, {"m_max", cfg.m_max}, {"rank", cfg.rank},
          {"include_sin", cfg.include_sin}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.d = j.at("d").get<int>();
  cfg.k_max = j.at("k_max").get<int>();
  cfg.m_max = j.at("m_max").get<int>();
  cfg.rank = j.at("rank").get<int>();
  cfg.include_sin = j.at("include_sin").get<bool>();
  cfg.validate();
  return cfg;
}

namespace {

nlohmann::json rows_to_json(const Matrix& m) {
  auto out = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    out.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return out;
}

void rows_from_json(const nlohmann::json& j, Matrix& m, const char* what) {
  if (j.size() != m.rows()) throw ValidationError(std::string("checkpoint: wrong row count in ") + what);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto v = j[r].get<std::vector<double>>();
    if (v.size() != m.cols()) throw ValidationError(std::string("checkpoint: wrong width in ") + what);
    std::copy(v.begin(), v.end(), m.row(r).begin());
  }
}

} // namespace

// nlohmann/json writes doubles in shortest round-trip form, so finite values
// survive a dump/parse cycle bit-exactly.
nlohmann::json checkpoint_to_json(const DualStreamModel& model) {
  nlohmann::json j;
  j["config"] = to_json(model.config);
  j["poly_weights"] = rows_to_json(model.poly_weights);
  auto cp = nlohmann::json::array();
  for (const auto& f : model.cp) {
    auto per_rank = nlohmann::json::array();
    for (int r = 0; r < f.rank; ++r) {
      auto per_mode = nlohmann::json::array();
      for (int jj = 0; jj < f.order; ++jj) {
        auto v = f.factor(r, jj);
        per_mode.push_back(std::vector<double>(v.begin(), v.end()));
      }
      per_rank.push_back(per_mode);
    }
    cp.push_back(per_rank);
  }
  j["cp_factors"] = cp;
  j["sin_weights"] = model.sin_weights;
  j["gate_log_alphas"] = model.gates.log_alphas;
  j["intercept"] = model.intercept;
  return j;
}

DualStreamModel checkpoint_from_json(const nlohmann::json& j) {
  DualStreamModel model(model_config_from_json(j.at("config")));
  rows_from_json(j.at("poly_weights"), model.poly_weights, "poly_weights");
  const auto& cp = j.at("cp_factors");
  if (cp.size() != model.cp.size()) throw ValidationError("checkpoint: wrong number of interaction orders");
  for (std::size_t mi = 0; mi < model.cp.size(); ++mi) {
    auto& f = model.cp[mi];
    if (cp[mi].size() != static_cast<std::size_t>(f.rank)) throw ValidationError("checkpoint: wrong CP rank");
    for (int r = 0; r < f.rank; ++r) {
      const auto& modes = cp[mi][static_cast<std::size_t>(r)];
      if (modes.size() != static_cast<std::size_t>(f.order)) throw ValidationError("checkpoint: wrong CP order");
      for (int jj = 0; jj < f.order; ++jj) {
        const auto v = modes[static_cast<std::size_t>(jj)].get<std::vector<double>>();
        if (v.size() != f.a.cols()) throw ValidationError("checkpoint: wrong factor length");
        std::copy(v.begin(), v.end(), f.factor(r, jj).begin());
      }
    }
  }
  model.sin_weights = j.at("sin_weights").get<std::vector<double>>();
  if (model.sin_weights.size() != (model.config.include_sin ? static_cast<std::size_t>(model.config.d) : 0u))
    throw ValidationError("checkpoint: wrong sin_weights length");
  model.gates.log_alphas = j.at("gate_log_alphas").get<std::vector<double>>();
  model.gates.validate();
  model.intercept = j.value("intercept", 0.0);
  return model;
}

} // namespace tdn
