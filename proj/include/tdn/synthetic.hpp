#ifndef TDN_SYNTHETIC_HPP
#define TDN_SYNTHETIC_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/data.hpp"
#include "tdn/search.hpp"

namespace tdn {

enum class SynthMode { Pure, Interact, Hybrid };

std::string to_string(SynthMode m);
SynthMode parse_mode(const std::string& s);

// How the 1/sqrt(d) in the interaction-weight distribution is read.
enum class WeightScale { Variance, Std };

struct SyntheticSpec {
  SynthMode mode = SynthMode::Hybrid;
  int formula_id = 0;
  int d = 10;
  std::size_t n = 2500;
  double train_fraction = 0.8;
  std::uint64_t coeff_seed = 0;
  std::uint64_t data_seed = 0;
  double noise_sigma = 0.0;
  WeightScale weight_scale = WeightScale::Variance;

  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// P_k(x) = sum_j x_j^k ; I_k(x) = prod_{m=1..k} (w_m . x)
struct TruthTerm {
  char kind = 'P';  // 'P' or 'I'
  int order = 1;
  double coefficient = 1.0;
};

struct GroundTruth {
  std::vector<TruthTerm> terms;
  std::map<int, std::vector<Vec>> interaction_weights;  // order k -> k vectors of length d

  FormulaStructure structure() const;
  double evaluate(std::span<const double> x) const;
};

// The formula table. Random coefficients and interaction weights are drawn
// from the coefficient stream of `coeff_seed`.
GroundTruth make_ground_truth(const SyntheticSpec& spec);

struct SyntheticData {
  DataSplit split;  // val is empty; standardized with training statistics
  GroundTruth truth;
};

SyntheticData generate(const SyntheticSpec& spec);
// Same sampling, but with a caller-supplied ground truth.
SyntheticData generate_with_truth(const SyntheticSpec& spec, const GroundTruth& truth);

enum class StructureMatch { Exact, Superset, Miss };
std::string to_string(StructureMatch m);
// Order-insensitive and coefficient-blind by construction of FormulaStructure.
StructureMatch classify_match(const FormulaStructure& found, const FormulaStructure& truth);

} // namespace tdn

#endif // TDN_SYNTHETIC_HPP
