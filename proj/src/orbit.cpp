#include "tdn/orbit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <mpfr.h>

namespace tdn {

namespace {

double horner(const Vec& c, double x) {
  double acc = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) acc = acc * x + c[i];
  return acc;
}

Vec derivative(const Vec& c) {
  Vec d;
  for (std::size_t i = 1; i < c.size(); ++i) d.push_back(static_cast<double>(i) * c[i]);
  return d;
}

// Coefficients of p(a + s t) in t.
Vec affine_substitute(const Vec& p, double a, double s) {
  Vec q;
  for (std::size_t i = p.size(); i-- > 0;) {
    Vec next(q.size() + 1, 0.0);
    for (std::size_t j = 0; j < q.size(); ++j) {
      next[j] += q[j] * a;
      next[j + 1] += q[j] * s;
    }
    next[0] += p[i];
    q = std::move(next);
  }
  return q;
}

struct Extremum {
  double x;
  bool is_max;
};

// Sign changes of p' bracketed on a grid over its Cauchy bound, refined by
// bisection. Double roots without a sign change are not extrema and are skipped.
std::vector<Extremum> find_extrema(const Vec& p) {
  const Vec d = derivative(p);
  std::vector<Extremum> out;
  if (d.size() < 2) return out;
  double bound = 0.0;
  for (std::size_t i = 0; i + 1 < d.size(); ++i) bound = std::max(bound, std::abs(d[i] / d.back()));
  bound += 1.0;
  const int n = 200000;
  double last_x = -bound;
  double last_v = horner(d, last_x);
  for (int i = 1; i <= n; ++i) {
    const double x = -bound + 2.0 * bound * i / n;
    const double v = horner(d, x);
    if (v == 0.0) continue;
    if (last_v != 0.0 && (v > 0.0) != (last_v > 0.0)) {
      double lo = last_x, hi = x;
      const bool lo_pos = last_v > 0.0;
      for (int it = 0; it < 200 && lo < hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double mv = horner(d, mid);
        if (mv == 0.0) {
          lo = hi = mid;
          break;
        }
        ((mv > 0.0) == lo_pos ? lo : hi) = mid;
      }
      out.push_back({0.5 * (lo + hi), lo_pos});
    }
    last_x = x;
    last_v = v;
  }
  return out;
}

// Solves p(x) = level on a monotone stretch [lo, hi].
double solve_level(const Vec& p, double level, double lo, double hi) {
  const bool increasing = horner(p, hi) > horner(p, lo);
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double v = horner(p, mid);
    if (v == level) return mid;
    ((v < level) == increasing ? lo : hi) = mid;
  }
  return std::abs(horner(p, lo) - level) <= std::abs(horner(p, hi) - level) ? lo : hi;
}

struct Mpfr {
  mpfr_t v;
  explicit Mpfr(long prec) { mpfr_init2(v, prec); }
  ~Mpfr() { mpfr_clear(v); }
  Mpfr(const Mpfr&) = delete;
  Mpfr& operator=(const Mpfr&) = delete;
};

void set_seed(mpfr_t x, OrbitSeed s) {
  const auto prec = mpfr_get_prec(x);
  Mpfr t(prec);
  switch (s) {
  case OrbitSeed::InvPi:
    mpfr_const_pi(t.v, MPFR_RNDN);
    mpfr_ui_div(x, 1, t.v, MPFR_RNDN);
    break;
  case OrbitSeed::InvE:
    mpfr_set_si(t.v, -1, MPFR_RNDN);
    mpfr_exp(x, t.v, MPFR_RNDN);
    break;
  case OrbitSeed::Sqrt2Minus1:
    mpfr_sqrt_ui(x, 2, MPFR_RNDN);
    mpfr_sub_ui(x, x, 1, MPFR_RNDN);
    break;
  case OrbitSeed::PhiMinus1:
    mpfr_sqrt_ui(x, 5, MPFR_RNDN);
    mpfr_sub_ui(x, x, 1, MPFR_RNDN);
    mpfr_div_ui(x, x, 2, MPFR_RNDN);
    break;
  }
}

long precision_for(const UnimodalMap& map, long steps) { return 128 + static_cast<long>(map.bits_per_step()) * steps; }

} // namespace

double UnimodalMap::operator()(double t) const {
  const double v = horner(t <= eta ? left : right, t);
  return std::clamp(v, 0.0, 1.0);
}

void UnimodalMap::validate(double tol, int grid) const {
  if (!(eta > 0.0 && eta < 1.0)) throw ValidationError("unimodal map: turning point must lie in (0, 1)");
  if (left.empty() || right.empty()) throw ValidationError("unimodal map: empty branch");
  auto check = [&](double got, double want, const char* what) {
    if (!(std::abs(got - want) <= tol))
      throw ValidationError(std::string("unimodal map: ") + what + " is " + format_double(got) + ", expected " +
                            format_double(want));
  };
  check(horner(left, 0.0), 0.0, "T_L(0)");
  check(horner(right, 1.0), 0.0, "T_R(1)");
  check(horner(left, eta), 1.0, "T_L(eta)");
  check(horner(right, eta), 1.0, "T_R(eta)");
  double prev = horner(left, 0.0);
  for (int i = 1; i <= grid; ++i) {
    const double v = horner(left, eta * i / grid);
    if (v < prev - tol) throw ValidationError("unimodal map: left branch is not increasing");
    prev = v;
  }
  prev = horner(right, eta);
  for (int i = 1; i <= grid; ++i) {
    const double v = horner(right, eta + (1.0 - eta) * i / grid);
    if (v > prev + tol) throw ValidationError("unimodal map: right branch is not decreasing");
    prev = v;
  }
}

int UnimodalMap::bits_per_step() const {
  const Vec dl = derivative(left), dr = derivative(right);
  double slope = 1.0;
  const int n = 10000;
  for (int i = 0; i <= n; ++i) {
    slope = std::max(slope, std::abs(horner(dl, eta * i / n)));
    slope = std::max(slope, std::abs(horner(dr, eta + (1.0 - eta) * i / n)));
  }
  return static_cast<int>(std::ceil(std::log2(slope))) + 1;
}

UnimodalMap tent_map() {
  UnimodalMap m;
  m.eta = 0.5;
  m.left = {0.0, 2.0};
  m.right = {2.0, -2.0};
  m.kind = "tent";
  return m;
}

UnimodalMap unimodalize(const Vec& poly_coeffs) {
  Vec p = poly_coeffs;
  for (double c : p)
    if (!std::isfinite(c)) throw ValidationError("unimodalize: coefficients must be finite");
  while (!p.empty() && p.back() == 0.0) p.pop_back();
  if (p.size() < 3)
    throw ValidationError("unimodalize: polynomial has no interior local maximum; supply order >= 2");
  auto ext = find_extrema(p);
  if (std::none_of(ext.begin(), ext.end(), [](const Extremum& e) { return e.is_max; })) {
    if (ext.empty()) throw ValidationError("unimodalize: polynomial is monotone on R; supply order >= 2");
    for (double& c : p) c = -c;
    for (auto& e : ext) e.is_max = !e.is_max;
  }
  const auto peak_it = std::find_if(ext.begin(), ext.end(), [](const Extremum& e) { return e.is_max; });
  const double xs = peak_it->x;
  const double peak = horner(p, xs);
  const bool has_left = peak_it != ext.begin();
  const bool has_right = peak_it + 1 != ext.end();
  const double left_x = has_left ? (peak_it - 1)->x : 0.0;
  const double right_x = has_right ? (peak_it + 1)->x : 0.0;
  const double inf = std::numeric_limits<double>::infinity();
  const double left_bottom = has_left ? horner(p, left_x) : -inf;
  const double right_bottom = has_right ? horner(p, right_x) : -inf;
  double level = std::max(left_bottom, right_bottom);
  if (level == -inf) level = peak > 0.0 ? 0.0 : peak - 1.0;

  auto endpoint = [&](bool left_side) {
    const bool bounded = left_side ? has_left : has_right;
    const double cx = left_side ? left_x : right_x;
    if (bounded && horner(p, cx) == level) return cx;
    double far = cx;
    if (!bounded) {
      double step = 1.0;
      far = left_side ? xs - step : xs + step;
      while (horner(p, far) >= level) {
        step *= 2.0;
        far = left_side ? xs - step : xs + step;
        if (step > 1e300) throw ValidationError("unimodalize: cannot bracket the cut level");
      }
    }
    return left_side ? solve_level(p, level, far, xs) : solve_level(p, level, xs, far);
  };
  const double a = endpoint(true);
  const double b = endpoint(false);
  Vec q = affine_substitute(p, a, b - a);
  q[0] -= level;
  for (double& c : q) c /= peak - level;
  q[0] = 0.0;  // T(0) = p(a) - level = 0 up to the bisection error

  UnimodalMap m;
  m.eta = (xs - a) / (b - a);
  m.left = q;
  m.right = q;
  m.kind = "polynomial";
  m.validate();
  return m;
}

std::string to_string(OrbitSeed s) {
  switch (s) {
  case OrbitSeed::InvPi: return "1/pi";
  case OrbitSeed::InvE: return "1/e";
  case OrbitSeed::Sqrt2Minus1: return "sqrt(2)-1";
  case OrbitSeed::PhiMinus1: return "phi-1";
  }
  return "?";
}

double seed_value(OrbitSeed s) {
  Mpfr x(128);
  set_seed(x.v, s);
  return mpfr_get_d(x.v, MPFR_RNDN);
}

struct Orbit::Impl {
  UnimodalMap map;
  Mpfr x, acc;
  Impl(const UnimodalMap& m, long prec) : map(m), x(prec), acc(prec) {}
};

Orbit::Orbit(const UnimodalMap& map, double x0, long precision_bits)
    : p_(std::make_unique<Impl>(map, precision_bits)) {
  if (!(x0 >= 0.0 && x0 <= 1.0)) throw ValidationError("iterate: x0 must lie in [0, 1]");
  mpfr_set_d(p_->x.v, x0, MPFR_RNDN);
}

Orbit::Orbit(const UnimodalMap& map, OrbitSeed seed, long precision_bits)
    : p_(std::make_unique<Impl>(map, precision_bits)) {
  set_seed(p_->x.v, seed);
}

Orbit::~Orbit() = default;

void Orbit::step() {
  auto& x = p_->x.v;
  auto& acc = p_->acc.v;
  const Vec& c = mpfr_cmp_d(x, p_->map.eta) <= 0 ? p_->map.left : p_->map.right;
  mpfr_set_d(acc, c.back(), MPFR_RNDN);
  for (std::size_t i = c.size() - 1; i-- > 0;) {
    mpfr_mul(acc, acc, x, MPFR_RNDN);
    mpfr_add_d(acc, acc, c[i], MPFR_RNDN);
  }
  if (mpfr_sgn(acc) < 0) mpfr_set_ui(acc, 0, MPFR_RNDN);
  else if (mpfr_cmp_ui(acc, 1) > 0) mpfr_set_ui(acc, 1, MPFR_RNDN);
  mpfr_swap(x, acc);
  ++n_;
}

double Orbit::value() const { return mpfr_get_d(p_->x.v, MPFR_RNDN); }

double iterate(const UnimodalMap& map, double x0, long n) {
  if (n < 0) throw ValidationError("iterate: n must be >= 0");
  Orbit o(map, x0, precision_for(map, n));
  for (long i = 0; i < n; ++i) o.step();
  return o.value();
}

double iterate(const UnimodalMap& map, OrbitSeed seed, long n) {
  if (n < 0) throw ValidationError("iterate: n must be >= 0");
  Orbit o(map, seed, precision_for(map, n));
  for (long i = 0; i < n; ++i) o.step();
  return o.value();
}

OrbitFit fit_points(const UnimodalMap& map, const std::vector<double>& targets, double eps, long max_iters) {
  if (!(eps > 0.0)) throw ValidationError("fit_points: eps must be > 0");
  if (max_iters < 1) throw ValidationError("fit_points: max_iters must be >= 1");
  for (double t : targets)
    if (!std::isfinite(t)) throw ValidationError("fit_points: targets must be finite");

  OrbitFit best;
  std::size_t best_covered = 0;
  bool have_best = false;
  for (OrbitSeed seed : kOrbitSeeds) {
    long horizon = std::min<long>(2048, max_iters);
    for (;;) {
      OrbitFit fit;
      fit.xi = seed;
      fit.targets = targets;
      fit.m.assign(targets.size(), -1);
      fit.values.assign(targets.size(), std::numeric_limits<double>::quiet_NaN());
      fit.errors.assign(targets.size(), std::numeric_limits<double>::infinity());
      fit.precision_bits = precision_for(map, horizon);
      std::size_t covered = 0;
      Orbit orbit(map, seed, fit.precision_bits);
      while (orbit.steps() < horizon && covered < targets.size()) {
        orbit.step();
        const double v = orbit.value();
        for (std::size_t k = 0; k < targets.size(); ++k) {
          if (fit.m[k] >= 0) continue;
          const double err = std::abs(v - targets[k]);
          if (err < eps) {
            fit.m[k] = orbit.steps();
            fit.values[k] = v;
            fit.errors[k] = err;
            ++covered;
          }
        }
      }
      fit.iterations_scanned = orbit.steps();
      if (covered == targets.size()) {
        fit.success = true;
        return fit;
      }
      if (horizon >= max_iters) {
        for (std::size_t k = 0; k < targets.size(); ++k)
          if (fit.m[k] < 0) fit.uncovered.push_back(k);
        if (!have_best || covered > best_covered) {
          best = std::move(fit);
          best_covered = covered;
          have_best = true;
        }
        break;
      }
      // The orbit outran the precision before covering everything: rescan
      // from the start at higher precision so all m(k) refer to one orbit.
      horizon = std::min(max_iters, horizon * 4);
    }
  }
  return best;
}

double OrbitApproximant::operator()(double x) const {
  const auto k = std::clamp(static_cast<long>(std::floor(K * x)), 0L, static_cast<long>(K) - 1);
  return values[static_cast<std::size_t>(k)];
}

ApproximationReport approximate_function(const std::function<double(double)>& f, int K, double eps,
                                         const UnimodalMap& map, long max_iters, int grid_factor) {
  if (K < 1) throw ValidationError("approximate_function: K must be >= 1");
  if (grid_factor < 1) throw ValidationError("approximate_function: grid_factor must be >= 1");
  std::vector<double> targets(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double v = f((k + 0.5) / K);
    if (!(v >= -1e-12 && v <= 1.0 + 1e-12))
      throw ValidationError("approximate_function: f must map [0,1] into [0,1]; rescale its range first (f(" +
                            format_double((k + 0.5) / K) + ") = " + format_double(v) + ")");
    targets[static_cast<std::size_t>(k)] = std::clamp(v, 0.0, 1.0);
  }
  ApproximationReport rep;
  rep.eps = eps;
  rep.fit = fit_points(map, targets, eps, max_iters);
  if (!rep.fit.success)
    throw NumericalError("fit_points: " + std::to_string(rep.fit.uncovered.size()) + " of " + std::to_string(K) +
                         " targets not reached within max_iters = " + std::to_string(max_iters) +
                         "; relax eps or raise max_iters");
  rep.h.map = map;
  rep.h.xi = rep.fit.xi;
  rep.h.K = K;
  rep.h.m = rep.fit.m;
  rep.h.values = rep.fit.values;
  const int n = grid_factor * K;
  for (int j = 0; j < n; ++j) {
    const double x = n == 1 ? 0.0 : static_cast<double>(j) / (n - 1);
    const double fx = f(x), hx = rep.h(x);
    rep.grid_x.push_back(x);
    rep.grid_f.push_back(fx);
    rep.grid_h.push_back(hx);
    rep.sup_error = std::max(rep.sup_error, std::abs(fx - hx));
  }
  return rep;
}

nlohmann::json to_json(const UnimodalMap& m) {
  return {{"kind", m.kind}, {"eta", m.eta}, {"left", m.left}, {"right", m.right}};
}

nlohmann::json to_json(const ApproximationReport& r) {
  return {{"version", kVersion},
          {"K", r.h.K},
          {"eps", r.eps},
          {"xi", to_string(r.h.xi)},
          {"xi_value", seed_value(r.h.xi)},
          {"map", to_json(r.h.map)},
          {"m_counts", r.h.m},
          {"fit_errors", r.fit.errors},
          {"precision_bits", r.fit.precision_bits},
          {"iterations_scanned", r.fit.iterations_scanned},
          {"real_parameters", r.h.real_parameter_count()},
          {"sup_error", r.sup_error}};
}

std::string orbit_csv(const ApproximationReport& r) {
  std::ostringstream os;
  os << "x,f,h\n";
  for (std::size_t i = 0; i < r.grid_x.size(); ++i)
    os << format_double(r.grid_x[i]) << ',' << format_double(r.grid_f[i]) << ',' << format_double(r.grid_h[i]) << '\n';
  return os.str();
}

} // namespace tdn
