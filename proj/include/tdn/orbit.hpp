#ifndef TDN_ORBIT_HPP
#define TDN_ORBIT_HPP

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/common.hpp"

namespace tdn {

// Continuous self-map of [0,1], increasing on [0, eta], decreasing on
// [eta, 1]. Each branch is a polynomial in t with ascending coefficients.
struct UnimodalMap {
  double eta = 0.5;
  Vec left;
  Vec right;
  std::string kind = "polynomial";

  double operator()(double t) const;
  // Endpoint and peak conditions to `tol`, branch monotonicity on a grid.
  // Throws ValidationError on failure.
  void validate(double tol = 1e-12, int grid = 10000) const;
  // Bits of precision an iterate can lose per step: ceil(log2 max|T'|) + 1.
  int bits_per_step() const;
  // Coefficients plus the turning point.
  std::size_t real_parameter_count() const { return left.size() + right.size() + 1; }
};

UnimodalMap tent_map();

// Cuts a polynomial (ascending coefficients) around one interior local
// maximum, then shifts and scales domain and range onto [0,1]. A polynomial
// with only a local minimum is flipped first.
UnimodalMap unimodalize(const Vec& poly_coeffs);

// Irrational starting points, tried in this order.
enum class OrbitSeed { InvPi, InvE, Sqrt2Minus1, PhiMinus1 };
inline constexpr std::array<OrbitSeed, 4> kOrbitSeeds{OrbitSeed::InvPi, OrbitSeed::InvE, OrbitSeed::Sqrt2Minus1,
                                                      OrbitSeed::PhiMinus1};
std::string to_string(OrbitSeed s);
double seed_value(OrbitSeed s);

// Orbit of one point at a fixed binary precision (MPFR). Every iterate is
// clamped to [0,1].
class Orbit {
public:
  Orbit(const UnimodalMap& map, double x0, long precision_bits);
  Orbit(const UnimodalMap& map, OrbitSeed seed, long precision_bits);
  ~Orbit();
  Orbit(const Orbit&) = delete;
  Orbit& operator=(const Orbit&) = delete;

  void step();
  double value() const;
  long steps() const { return n_; }

private:
  struct Impl;
  std::unique_ptr<Impl> p_;
  long n_ = 0;
};

// T^n(x0). Precision is chosen so that n steps keep at least 64 good bits.
double iterate(const UnimodalMap& map, double x0, long n);
double iterate(const UnimodalMap& map, OrbitSeed seed, long n);

struct OrbitFit {
  OrbitSeed xi = OrbitSeed::InvPi;
  bool success = false;
  std::vector<double> targets;
  std::vector<long> m;         // first n >= 1 with |T^n(xi) - f_k| < eps; -1 if none
  std::vector<double> values;  // T^{m(k)}(xi)
  std::vector<double> errors;
  std::vector<std::size_t> uncovered;
  long precision_bits = 0;
  long iterations_scanned = 0;
};

// Scans each candidate orbit once. Precision starts at a 2048-step horizon
// and is quadrupled (with a fresh scan) until the horizon reaches max_iters.
// On failure returns the candidate covering the most targets.
OrbitFit fit_points(const UnimodalMap& map, const std::vector<double>& targets, double eps, long max_iters);

struct OrbitApproximant {
  UnimodalMap map;
  OrbitSeed xi = OrbitSeed::InvPi;
  int K = 1;
  std::vector<long> m;
  std::vector<double> values;  // cached T^{m(k)}(xi)

  // h(x) = T^{m(floor(K x))}(xi)
  double operator()(double x) const;
  // Map coefficients, turning point and xi. The integers m do not count.
  std::size_t real_parameter_count() const { return map.real_parameter_count() + 1; }
};

struct ApproximationReport {
  OrbitApproximant h;
  OrbitFit fit;
  double eps = 0.0;
  double sup_error = 0.0;
  Vec grid_x, grid_f, grid_h;
};

// Samples f at interval midpoints (k + 1/2)/K, fits them on one orbit and
// measures the sup error on grid_factor * K evenly spaced points of [0,1].
ApproximationReport approximate_function(const std::function<double(double)>& f, int K, double eps,
                                         const UnimodalMap& map, long max_iters = 1000000, int grid_factor = 10);

nlohmann::json to_json(const UnimodalMap& m);
nlohmann::json to_json(const ApproximationReport& r);
// x,f,h
std::string orbit_csv(const ApproximationReport& r);

} // namespace tdn

#endif // TDN_ORBIT_HPP
