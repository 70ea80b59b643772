#include "tdn/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tdn {

std::string FormulaStructure::canonical() const {
  std::vector<std::string> parts;
  for (int k : poly) parts.push_back("P" + std::to_string(k) + "(x)");
  for (int m : interactions) parts.push_back("I" + std::to_string(m) + "(x)");
  if (sin) parts.push_back("sin(x)");
  if (parts.empty()) return "0";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += " + " + parts[i];
  return out;
}

FormulaStructure parse_canonical(const std::string& s) {
  FormulaStructure out;
  if (s == "0") return out;
  std::stringstream ss(s);
  std::string tok;
  while (ss >> tok) {
    if (tok == "+") continue;
    if (tok == "sin(x)") {
      out.sin = true;
    } else if (tok.size() > 4 && (tok[0] == 'P' || tok[0] == 'I') && tok.ends_with("(x)")) {
      int v = 0;
      try {
        v = std::stoi(tok.substr(1, tok.size() - 4));
      } catch (const std::exception&) {
        throw ValidationError("formula: cannot parse term '" + tok + "'");
      }
      if (tok[0] == 'P') {
        if (v < 1) throw ValidationError("formula: polynomial order must be >= 1");
        out.poly.insert(v);
      } else {
        if (v < 2) throw ValidationError("formula: interaction order must be >= 2");
        out.interactions.insert(v);
      }
    } else {
      throw ValidationError("formula: cannot parse term '" + tok + "'");
    }
  }
  return out;
}

nlohmann::json to_json(const FormulaStructure& s) {
  return {{"poly", std::vector<int>(s.poly.begin(), s.poly.end())},
          {"interactions", std::vector<int>(s.interactions.begin(), s.interactions.end())},
          {"sin", s.sin},
          {"canonical", s.canonical()}};
}

FormulaStructure structure_from_json(const nlohmann::json& j) {
  FormulaStructure s;
  for (int k : j.at("poly").get<std::vector<int>>()) {
    if (k < 1) throw ValidationError("formula: polynomial order must be >= 1");
    s.poly.insert(k);
  }
  for (int m : j.at("interactions").get<std::vector<int>>()) {
    if (m < 2) throw ValidationError("formula: interaction order must be >= 2");
    s.interactions.insert(m);
  }
  s.sin = j.at("sin").get<bool>();
  if (j.contains("canonical") && j.at("canonical").get<std::string>() != s.canonical())
    throw ValidationError("formula: canonical string '" + j.at("canonical").get<std::string>() +
                          "' does not match the structural fields ('" + s.canonical() + "')");
  return s;
}

void SearchConfig::validate() const {
  if (lambda_l0 < 0.0) throw ValidationError("search: lambda_l0 must be >= 0");
  if (warmup_steps < 1 || phase2_steps < 1) throw ValidationError("search: warmup_steps and phase2_steps must be >= 1");
  if (batch_size < 1) throw ValidationError("search: batch_size must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw ValidationError("search: learning_rate must be > 0");
  if (time_budget_s && !(*time_budget_s > 0.0)) throw ValidationError("search: time_budget_s must be > 0");
  if (!(init_weight_std > 0.0)) throw ValidationError("search: init_weight_std must be > 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("search: threshold must be in (0,1)");
}

void SearchConfig::set_epochs(int epochs, std::size_t n_train, double warmup_fraction) {
  const auto per_epoch = static_cast<int>((n_train + static_cast<std::size_t>(batch_size) - 1) /
                                          static_cast<std::size_t>(batch_size));
  const int total = std::max(2, epochs * per_epoch);
  warmup_steps = std::clamp(static_cast<int>(std::lround(warmup_fraction * total)), 1, total - 1);
  phase2_steps = total - warmup_steps;
}

nlohmann::json to_json(const SearchConfig& c) {
  nlohmann::json j;
  j["lambda_l0"] = c.lambda_l0;
  j["warmup_steps"] = c.warmup_steps;
  j["phase2_steps"] = c.phase2_steps;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.adam.learning_rate;
  j["adam_beta1"] = c.adam.beta1;
  j["adam_beta2"] = c.adam.beta2;
  j["adam_epsilon"] = c.adam.epsilon;
  j["time_budget_s"] = c.time_budget_s ? nlohmann::json(*c.time_budget_s) : nlohmann::json(nullptr);
  j["seed"] = c.seed;
  j["init_weight_std"] = c.init_weight_std;
  j["init_log_alpha"] = c.init_log_alpha;
  j["threshold"] = c.threshold;
  j["loss"] = c.loss == LossKind::MSE ? "mse" : "bce";
  j["fit_intercept"] = c.fit_intercept;
  j["snapshot_every"] = c.snapshot_every;
  j["record_steps"] = c.record_steps;
  j["init_scheme"] = c.init_scheme == InitScheme::Scaled ? "scaled" : "uniform";
  j["center_features"] = c.center_features;
  return j;
}

SearchConfig search_config_from_json(const nlohmann::json& j) {
  SearchConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "lambda_l0") c.lambda_l0 = v.get<double>();
    else if (k == "warmup_steps") c.warmup_steps = v.get<int>();
    else if (k == "phase2_steps") c.phase2_steps = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "learning_rate") c.adam.learning_rate = v.get<double>();
    else if (k == "adam_beta1") c.adam.beta1 = v.get<double>();
    else if (k == "adam_beta2") c.adam.beta2 = v.get<double>();
    else if (k == "adam_epsilon") c.adam.epsilon = v.get<double>();
    else if (k == "time_budget_s") c.time_budget_s = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "init_weight_std") c.init_weight_std = v.get<double>();
    else if (k == "init_log_alpha") c.init_log_alpha = v.get<double>();
    else if (k == "threshold") c.threshold = v.get<double>();
    else if (k == "loss") {
      const auto s = v.get<std::string>();
      if (s != "mse" && s != "bce") throw ValidationError("search.loss: expected 'mse' or 'bce'");
      c.loss = s == "mse" ? LossKind::MSE : LossKind::BCE;
    } else if (k == "snapshot_every") c.snapshot_every = v.get<int>();
    else if (k == "fit_intercept") c.fit_intercept = v.get<bool>();
    else if (k == "record_steps") c.record_steps = v.get<bool>();
    else if (k == "center_features") c.center_features = v.get<bool>();
    else if (k == "init_scheme") {
      const auto s = v.get<std::string>();
      if (s != "scaled" && s != "uniform") throw ValidationError("search.init_scheme: expected 'scaled' or 'uniform'");
      c.init_scheme = s == "scaled" ? InitScheme::Scaled : InitScheme::Uniform;
    }
    else throw ValidationError("search." + k + ": unknown key");
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainReport& r, const SearchConfig& cfg, const ModelConfig& mcfg) {
  nlohmann::json j;
  j["config"] = {{"search", to_json(cfg)}, {"model", to_json(mcfg)}};
  j["gate_names"] = r.gate_names;
  auto steps = nlohmann::json::array();
  for (const auto& s : r.per_step)
    steps.push_back({{"step", s.step}, {"task_loss", s.task_loss}, {"l0_penalty", s.l0_penalty}, {"gate_probs", s.gate_probs}});
  j["per_step"] = steps;
  auto snaps = nlohmann::json::array();
  for (const auto& [step, s] : r.snapshots) snaps.push_back({{"step", step}, {"structure", s.canonical()}});
  j["snapshots"] = snaps;
  auto ranks = nlohmann::json::array();
  for (const auto& rr : r.rank_report) ranks.push_back({{"order", rr.order}, {"kept_components", rr.kept_components}});
  j["rank_report"] = ranks;
  j["steps_run"] = r.steps_run;
  j["stopped_by_budget"] = r.stopped_by_budget;
  j["final_task_loss"] = r.final_task_loss;
  j["wall_time_s"] = r.wall_time_s;
  j["structure"] = to_json(r.structure);
  return j;
}

std::string gate_trajectory_csv(const TrainReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "step,gate_name,prob\n";
  for (const auto& s : r.per_step)
    for (std::size_t g = 0; g < s.gate_probs.size(); ++g)
      os << s.step << "," << r.gate_names[g] << "," << s.gate_probs[g] << "\n";
  return os.str();
}

FormulaStructure extract_structure(const DualStreamModel& model, double threshold) {
  FormulaStructure s;
  const auto& gb = model.gates;
  for (std::size_t g = 0; g < gb.size(); ++g) {
    if (!(test_time_gate(gb.log_alphas[g], gb.hc) > threshold)) continue;
    const auto i = static_cast<int>(g);
    if (i < gb.n_poly) s.poly.insert(i + 1);
    else if (i < gb.n_poly + gb.n_interaction) s.interactions.insert(i - gb.n_poly + 2);
    else s.sin = true;
  }
  return s;
}

std::vector<RankReport> rank_parsimony(const DualStreamModel& model, const FormulaStructure& s,
                                       double relative_cutoff) {
  std::vector<RankReport> out;
  for (int m : s.interactions) {
    if (m > model.config.m_max) continue;
    const auto& f = model.order(m);
    std::vector<double> norms(static_cast<std::size_t>(f.rank));
    for (int r = 0; r < f.rank; ++r) {
      double p = 1.0;
      for (int j = 0; j < f.order; ++j) p *= std::sqrt(dot(f.factor(r, j), f.factor(r, j)));
      norms[static_cast<std::size_t>(r)] = p;
    }
    const double top = *std::max_element(norms.begin(), norms.end());
    const auto kept = std::count_if(norms.begin(), norms.end(), [&](double v) { return v >= relative_cutoff * top && v > 0; });
    out.push_back({m, static_cast<int>(kept)});
  }
  return out;
}

namespace {

struct Blocks {
  std::vector<std::size_t> poly_rows;
  std::size_t sin, intercept, gates;
  std::vector<std::size_t> cp;
};

// Per-block learning-rate multipliers.
struct BlockScales {
  std::vector<double> poly, cp;
  double sin = 1.0;
  explicit BlockScales(const DualStreamModel& m) : poly(static_cast<std::size_t>(m.config.k_max), 1.0), cp(m.cp.size(), 1.0) {}
};

// (2k-1)!! = E[z^(2k)] for z ~ N(0,1)
double double_factorial_odd(int k) {
  double r = 1.0;
  for (int i = 2 * k - 1; i > 1; i -= 2) r *= i;
  return r;
}

// Each term starts with output std sigma0 on standard-normal inputs. The
// scales are the weight sizes that would give unit output std; they set the
// per-block learning rate, so Adam steps are comparable across orders and d.
void init_scaled(DualStreamModel& model, double sigma0, Rng& rng, BlockScales& sc) {
  const auto& c = model.config;
  const double d = c.d;
  for (int k = 1; k <= c.k_max; ++k) {
    const double unit = 1.0 / std::sqrt(d * double_factorial_odd(k));
    fill_normal(model.poly_weights.row(static_cast<std::size_t>(k - 1)), sigma0 * unit, rng);
    sc.poly[static_cast<std::size_t>(k - 1)] = unit;
  }
  for (std::size_t i = 0; i < model.cp.size(); ++i) {
    const int m = model.cp[i].order;
    const double unit = std::pow(static_cast<double>(c.rank), -0.5 / m) / std::sqrt(d);
    fill_normal(model.cp[i].a.flat(), std::pow(sigma0, 1.0 / m) * unit, rng);
    sc.cp[i] = unit;
  }
  const double unit = 1.0 / std::sqrt(d * 0.5 * (1.0 - std::exp(-2.0)));
  fill_normal(model.sin_weights, sigma0 * unit, rng);
  sc.sin = unit;
  model.intercept = 0.0;
}

// Row k-1 holds the per-feature training mean of x^k.
Matrix feature_power_means(const Matrix& X, int k_max) {
  Matrix mu(static_cast<std::size_t>(k_max), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < X.cols(); ++c) {
      double p = 1.0;
      for (int k = 1; k <= k_max; ++k) {
        p *= X(r, c);
        mu(static_cast<std::size_t>(k - 1), c) += p;
      }
    }
  for (double& v : mu.flat()) v /= static_cast<double>(X.rows());
  return mu;
}

void check_finite(int step, double loss, const GradientBundle& g) {
  if (!std::isfinite(loss))
    throw NumericalError("search: non-finite task loss at step " + std::to_string(step));
  const auto block = g.first_nonfinite_block();
  if (!block.empty())
    throw NumericalError("search: non-finite gradient at step " + std::to_string(step) + " in " + block);
}

} // namespace

SearchResult run_search(const Dataset& train, const SearchConfig& cfg, const ModelConfig& model_cfg) {
  cfg.validate();
  model_cfg.validate();
  if (train.size() == 0) throw ValidationError("search: empty dataset");
  if (static_cast<int>(train.dim()) != model_cfg.d)
    throw ValidationError("search: dataset has " + std::to_string(train.dim()) + " features, model d = " +
                          std::to_string(model_cfg.d));
  if (train.size() < 2 * static_cast<std::size_t>(cfg.batch_size))
    throw ValidationError("search: need at least 2 * batch_size = " + std::to_string(2 * cfg.batch_size) +
                          " samples, got " + std::to_string(train.size()));

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  SearchResult res{DualStreamModel(model_cfg, cfg.init_log_alpha), {}, {}};
  auto& model = res.model;
  auto& rep = res.report;
  BlockScales scales(model);
  if (cfg.center_features) model.poly_centers = feature_power_means(train.X, model_cfg.k_max);
  {
    auto wrng = make_rng(cfg.seed, Stream::Weights);
    if (cfg.init_scheme == InitScheme::Scaled) init_scaled(model, cfg.init_weight_std, wrng, scales);
    else model.init_weights(cfg.init_weight_std, wrng);
  }
  for (std::size_t g = 0; g < model.gates.size(); ++g) rep.gate_names.push_back(model.gates.gate_name(g));

  Adam opt(cfg.adam);
  Blocks b;
  for (int k = 0; k < model_cfg.k_max; ++k) b.poly_rows.push_back(opt.add_block(model.poly_weights.cols()));
  for (const auto& f : model.cp) b.cp.push_back(opt.add_block(f.a.size()));
  b.sin = opt.add_block(model.sin_weights.size());
  b.intercept = opt.add_block(1);
  b.gates = opt.add_block(model.gates.size());

  auto shuffle_rng = make_rng(cfg.seed, Stream::Shuffle);
  auto gate_rng = make_rng(cfg.seed, Stream::Gates);
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_epoch = (train.size() + bs - 1) / bs;

  GradientBundle grads(model);
  const int total = cfg.total_steps();
  for (int step = 0; step < total; ++step) {
    const bool warmup = step < cfg.warmup_steps;
    if (!warmup && cfg.time_budget_s && elapsed() > *cfg.time_budget_s) {
      rep.stopped_by_budget = true;
      break;
    }
    const std::size_t slot = static_cast<std::size_t>(step) % per_epoch;
    if (slot == 0) std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    const std::size_t begin = slot * bs;
    const std::size_t end = std::min(begin + bs, perm.size());
    const BatchView batch{train.X, train.y, std::span<const std::size_t>(perm.data() + begin, end - begin)};

    model.gates.frozen_open = warmup;
    const GateSample gs = sample_gates(model.gates, gate_rng);
    const double lambda = warmup ? 0.0 : cfg.lambda_l0;
    const auto br = backward(model, batch, cfg.loss, gs, lambda, grads);
    check_finite(step, br.task_loss, grads);

    opt.begin_step();
    for (std::size_t k = 0; k < b.poly_rows.size(); ++k)
      opt.update(b.poly_rows[k], model.poly_weights.row(k), grads.d_poly.row(k), scales.poly[k]);
    for (std::size_t i = 0; i < model.cp.size(); ++i) opt.update(b.cp[i], model.cp[i].a.flat(), grads.d_cp[i].flat(), scales.cp[i]);
    opt.update(b.sin, model.sin_weights, grads.d_sin, scales.sin);
    if (cfg.fit_intercept)
      opt.update(b.intercept, std::span<double>(&model.intercept, 1), std::span<const double>(&grads.d_intercept, 1));
    if (!warmup) opt.update(b.gates, model.gates.log_alphas, grads.d_gate_logits);

    rep.steps_run = step + 1;
    if (cfg.record_steps) {
      StepRecord sr{step, br.task_loss, br.l0_penalty, {}};
      for (double la : model.gates.log_alphas) sr.gate_probs.push_back(gate_open_probability(la, model.gates.hc));
      rep.per_step.push_back(std::move(sr));
    }
    if (cfg.snapshot_every > 0 && (step + 1) % cfg.snapshot_every == 0)
      rep.snapshots.emplace_back(step + 1, extract_structure(model, cfg.threshold));
  }
  model.gates.frozen_open = false;
  GateSample test_gates;
  for (double la : model.gates.log_alphas) test_gates.values.push_back(test_time_gate(la, model.gates.hc));
  model.fold_centers(test_gates.values);
  if (!model.finite()) throw NumericalError("search: model weights became non-finite");
  test_gates.dvalue_dlog_alpha.assign(test_gates.values.size(), 0.0);
  test_gates.uniforms.assign(test_gates.values.size(), 0.5);
  rep.final_task_loss = evaluate_objective(model, BatchView{train.X, train.y, {}}, cfg.loss, test_gates, 0.0).task_loss;

  res.structure = extract_structure(model, cfg.threshold);
  rep.structure = res.structure;
  rep.rank_report = rank_parsimony(model, res.structure);
  rep.wall_time_s = elapsed();
  return res;
}

} // namespace tdn
