#include "tdn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tdn {

std::string to_string(SynthMode m) {
  switch (m) {
  case SynthMode::Pure: return "pure";
  case SynthMode::Interact: return "interact";
  case SynthMode::Hybrid: return "hybrid";
  }
  return "?";
}

SynthMode parse_mode(const std::string& s) {
  if (s == "pure") return SynthMode::Pure;
  if (s == "interact") return SynthMode::Interact;
  if (s == "hybrid") return SynthMode::Hybrid;
  throw ValidationError("unknown synthetic mode '" + s + "' (expected pure, interact or hybrid)");
}

void SyntheticSpec::validate() const {
  if (formula_id < 0 || formula_id > 4) throw ValidationError("synthetic: formula_id must be in 0..4");
  if (d < 1) throw ValidationError("synthetic: d must be >= 1");
  if (n < 2) throw ValidationError("synthetic: n must be >= 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("synthetic: split must be in (0,1)");
  if (noise_sigma < 0.0) throw ValidationError("synthetic: noise_sigma must be >= 0");
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"mode", to_string(s.mode)}, {"formula_id", s.formula_id}, {"d", s.d},
          {"n", s.n}, {"split", s.train_fraction}, {"coeff_seed", s.coeff_seed},
          {"data_seed", s.data_seed}, {"noise_sigma", s.noise_sigma},
          {"weight_scale", s.weight_scale == WeightScale::Variance ? "variance" : "std"}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "mode") s.mode = parse_mode(v.get<std::string>());
    else if (k == "formula_id") s.formula_id = v.get<int>();
    else if (k == "d") s.d = v.get<int>();
    else if (k == "n") s.n = v.get<std::size_t>();
    else if (k == "split") s.train_fraction = v.get<double>();
    else if (k == "coeff_seed") s.coeff_seed = v.get<std::uint64_t>();
    else if (k == "data_seed") s.data_seed = v.get<std::uint64_t>();
    else if (k == "noise_sigma") s.noise_sigma = v.get<double>();
    else if (k == "weight_scale") {
      const auto m = v.get<std::string>();
      if (m != "variance" && m != "std") throw ValidationError("synthetic.weight_scale: expected 'variance' or 'std'");
      s.weight_scale = m == "variance" ? WeightScale::Variance : WeightScale::Std;
    }
    else throw ValidationError("synthetic." + k + ": unknown key");
  }
  s.validate();
  return s;
}

FormulaStructure GroundTruth::structure() const {
  FormulaStructure s;
  for (const auto& t : terms) {
    if (t.coefficient == 0.0) continue;
    if (t.kind == 'P') s.poly.insert(t.order);
    else s.interactions.insert(t.order);
  }
  return s;
}

double GroundTruth::evaluate(std::span<const double> x) const {
  double y = 0.0;
  for (const auto& t : terms) {
    double v = 0.0;
    if (t.kind == 'P') {
      for (double xi : x) v += ipow(xi, t.order);
    } else {
      v = 1.0;
      for (const auto& w : interaction_weights.at(t.order)) v *= dot(w, x);
    }
    y += t.coefficient * v;
  }
  return y;
}

namespace {

// Coefficient NaN marks "draw from N(0,1)".
struct CellTerm {
  char kind;
  int order;
  double fixed;
};

std::vector<CellTerm> formula_cell(SynthMode mode, int id) {
  constexpr double R = std::numeric_limits<double>::quiet_NaN();
  switch (mode) {
  case SynthMode::Pure:
    switch (id) {
    case 0: return {{'P', 2, R}};
    case 1: return {{'P', 3, R}};
    case 2: return {{'P', 1, 10.0}, {'P', 2, 0.5}};
    case 3: return {{'P', 2, 5.0}, {'P', 4, 0.5}};
    case 4: return {{'P', 5, R}};
    }
    break;
  case SynthMode::Interact:
    switch (id) {
    case 0: return {{'I', 2, R}};
    case 1: return {{'I', 2, R}, {'I', 3, R}};
    case 2: return {{'I', 2, 8.0}, {'I', 3, 0.5}};
    case 3: return {{'I', 2, R}, {'I', 4, R}};
    case 4: return {{'I', 4, R}};
    }
    break;
  case SynthMode::Hybrid:
    switch (id) {
    case 0: return {{'P', 2, R}, {'I', 2, R}};
    case 1: return {{'P', 1, R}, {'I', 2, R}};
    case 2: return {{'P', 3, 5.0}, {'I', 2, 0.5}};
    case 3: return {{'P', 2, 0.5}, {'I', 3, 5.0}};
    case 4: return {{'P', 2, R}, {'I', 2, R}, {'I', 3, R}};
    }
    break;
  }
  throw ValidationError("synthetic: formula_id must be in 0..4");
}

} // namespace

GroundTruth make_ground_truth(const SyntheticSpec& spec) {
  spec.validate();
  auto rng = make_rng(spec.coeff_seed, Stream::Coefficients);
  std::normal_distribution<double> unit(0.0, 1.0);
  GroundTruth gt;
  for (const auto& c : formula_cell(spec.mode, spec.formula_id))
    gt.terms.push_back({c.kind, c.order, std::isnan(c.fixed) ? unit(rng) : c.fixed});
  // w_m ~ N(0, 1/sqrt(d)): variance 1/sqrt(d) by default, std 1/sqrt(d) on request.
  const double dd = static_cast<double>(spec.d);
  const double w_std = spec.weight_scale == WeightScale::Variance ? std::pow(dd, -0.25) : 1.0 / std::sqrt(dd);
  for (const auto& t : gt.terms) {
    if (t.kind != 'I') continue;
    std::vector<Vec> ws(static_cast<std::size_t>(t.order), Vec(static_cast<std::size_t>(spec.d)));
    for (auto& w : ws) fill_normal(w, w_std, rng);
    gt.interaction_weights[t.order] = std::move(ws);
  }
  return gt;
}

SyntheticData generate_with_truth(const SyntheticSpec& spec, const GroundTruth& truth) {
  spec.validate();
  Dataset raw;
  raw.X = Matrix(spec.n, static_cast<std::size_t>(spec.d));
  raw.y.resize(spec.n);
  for (int c = 0; c < spec.d; ++c) raw.feature_names.push_back("x" + std::to_string(c + 1));
  auto drng = make_rng(spec.data_seed, Stream::Data);
  fill_normal(raw.X.flat(), 1.0, drng);
  auto nrng = make_rng(spec.data_seed, Stream::Noise);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t r = 0; r < spec.n; ++r) {
    raw.y[r] = truth.evaluate(raw.X.row(r));
    if (spec.noise_sigma > 0.0) raw.y[r] += spec.noise_sigma * noise(nrng);
  }

  // Rows are i.i.d., so the first n_train rows form the training split.
  const auto sizes = split_sizes(spec.n, {spec.train_fraction, 0.0, 1.0 - spec.train_fraction});
  SyntheticData out;
  out.truth = truth;
  auto& sp = out.split;
  for (std::size_t r = 0; r < spec.n; ++r) (r < sizes[0] ? sp.train_rows : sp.test_rows).push_back(r);
  const Dataset train_raw = raw.subset(sp.train_rows);
  sp.stats = fit_standardization(train_raw);
  sp.train = apply_standardization(train_raw, sp.stats);
  sp.val = apply_standardization(raw.subset({}), sp.stats);
  sp.test = apply_standardization(raw.subset(sp.test_rows), sp.stats);
  return out;
}

SyntheticData generate(const SyntheticSpec& spec) { return generate_with_truth(spec, make_ground_truth(spec)); }

std::string to_string(StructureMatch m) {
  switch (m) {
  case StructureMatch::Exact: return "exact";
  case StructureMatch::Superset: return "superset";
  case StructureMatch::Miss: return "miss";
  }
  return "?";
}

StructureMatch classify_match(const FormulaStructure& found, const FormulaStructure& truth) {
  if (found == truth) return StructureMatch::Exact;
  const bool covers = std::includes(found.poly.begin(), found.poly.end(), truth.poly.begin(), truth.poly.end()) &&
                      std::includes(found.interactions.begin(), found.interactions.end(),
                                    truth.interactions.begin(), truth.interactions.end()) &&
                      (found.sin || !truth.sin);
  return covers ? StructureMatch::Superset : StructureMatch::Miss;
}

} // namespace tdn
