#ifndef TDN_NETWORK_HPP
#define TDN_NETWORK_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdn/common.hpp"
#include "tdn/data.hpp"
#include "tdn/model.hpp"
#include "tdn/search.hpp"

namespace tdn {

enum class Activation { ReLU, Sigmoid, Identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

// One fully-connected layer whose units aggregate inputs with a given
// formula structure:
//   y = act( sum_k W_poly[k] z^k + sum_m W_inter[m] h_m(z) + W_sin sin(z) + bias )
// with h_m(z)_r = prod_j (a_{r,j} . z) for r < rank2. Factor vectors are
// shared by all output units; W_inter mixes them per unit.
struct TaskNeuronLayer {
  int in_dim = 0;
  int out_dim = 0;
  int rank2 = 8;
  FormulaStructure structure;
  Activation activation = Activation::Identity;
  std::map<int, Matrix> w_poly;     // k -> out x in
  std::map<int, CpFactors> factors; // m -> rank2 * m rows of length in
  std::map<int, Matrix> w_inter;    // m -> out x rank2
  Matrix w_sin;                     // out x in, empty unless structure.sin
  Vec bias;                         // out

  // Same shapes, all zero. Used for gradient storage.
  TaskNeuronLayer zeros_like() const;
  std::size_t parameter_count() const;
  // Every parameter block in a fixed order (poly by k, factors and mixing by
  // m, sin, bias).
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  bool operator==(const TaskNeuronLayer&) const = default;
};

// Linear weights ~ N(0, 2/in); other polynomial, mixing and sin weights
// ~ N(0, 1e-3^2); factor entries ~ N(0, 1/in); bias 0.
TaskNeuronLayer init_layer(int in_dim, int out_dim, const FormulaStructure& structure, std::uint64_t seed,
                           int rank2 = 8, Activation activation = Activation::Identity);

// Rows of Z are samples.
Matrix layer_forward(const TaskNeuronLayer& layer, const Matrix& Z);
Vec layer_forward(const TaskNeuronLayer& layer, std::span<const double> z);

// Forward FLOPs per sample: multiply-add = 2, x^k = k-1 multiplies per
// element, sin = 15, one per non-identity activation, plus the adds that
// combine the term outputs.
std::uint64_t layer_flops(const TaskNeuronLayer& layer);

enum class Head { Regression, Binary, Multiclass };

std::string to_string(Head h);

struct NetworkSpec {
  std::vector<int> layer_widths;  // [in, hidden..., out]
  FormulaStructure structure;
  Head head = Head::Regression;
  int n_classes = 0;              // multiclass only
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 64;
  std::uint64_t seed = 0;
  int rank2 = 8;
  // Early stopping on the validation loss: stop after this many optimizer
  // steps without improvement and restore the best weights (0: off).
  int patience_steps = 0;
  int eval_every = 10;
  // Early stopping cannot fire before this many steps. Products of several
  // fresh factors sit on a plateau at first.
  int min_steps = 0;

  void validate() const;
  // ReLU for regression, sigmoid for classification.
  Activation hidden_activation() const;
};

nlohmann::json to_json(const NetworkSpec& s);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

struct Network {
  std::vector<TaskNeuronLayer> layers;

  std::size_t parameter_count() const;
  std::uint64_t flops_per_sample() const;
  Vec forward(std::span<const double> z) const;
  bool operator==(const Network&) const = default;
};

Network init_network(const NetworkSpec& spec);

// Mean loss over `rows` (all rows when empty) and its gradient, one zeroed
// layer per network layer in `grads`. Regression: MSE. Binary: BCE on the
// single logit. Multiclass: softmax cross-entropy.
double network_loss(const Network& net, const Dataset& data, std::span<const std::size_t> rows, Head head,
                    std::vector<TaskNeuronLayer>* grads = nullptr);

struct NetGradReport {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
};

NetGradReport network_gradcheck(const Network& net, const Dataset& data, Head head, double step = 1e-5);

struct EvalReport {
  NetworkSpec spec;
  std::string metric_name;  // "test_mse" or "accuracy"
  double metric_value = 0.0;
  double test_mse = 0.0;    // regression
  double accuracy = 0.0;    // classification
  double f1 = 0.0;          // binary: positive class; multiclass: macro
  std::size_t params = 0;
  std::uint64_t flops_per_sample = 0;
  double epochs_run = 0.0;
  int steps_run = 0;
  double best_val_loss = 0.0;
  double wall_time_s = 0.0;
};

nlohmann::json to_json(const EvalReport& r);

struct TrainedNetwork {
  Network net;
  EvalReport report;
};

// Regression uses RMSProp, classification Adam. `val` may be empty, in which
// case early stopping is off. Non-finite loss aborts with NumericalError.
TrainedNetwork train_network(const NetworkSpec& spec, const Dataset& train, const Dataset& val, const Dataset& test);

nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

} // namespace tdn

#endif // TDN_NETWORK_HPP
