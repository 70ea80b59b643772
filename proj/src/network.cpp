#include "tdn/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tdn/optim.hpp"

namespace tdn {

std::string to_string(Activation a) {
  switch (a) {
  case Activation::ReLU: return "relu";
  case Activation::Sigmoid: return "sigmoid";
  case Activation::Identity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw ValidationError("unknown activation '" + s + "' (expected relu, sigmoid or identity)");
}

std::string to_string(Head h) {
  switch (h) {
  case Head::Regression: return "regression";
  case Head::Binary: return "binary";
  case Head::Multiclass: return "multiclass";
  }
  return "?";
}

namespace {

Head parse_head(const std::string& s) {
  if (s == "regression") return Head::Regression;
  if (s == "binary") return Head::Binary;
  if (s == "multiclass") return Head::Multiclass;
  throw ValidationError("network.head: expected regression, binary or multiclass, got '" + s + "'");
}

double activate(Activation a, double u) {
  switch (a) {
  case Activation::ReLU: return u > 0.0 ? u : 0.0;
  case Activation::Sigmoid: return sigmoid(u);
  case Activation::Identity: return u;
  }
  return u;
}

double activation_slope(Activation a, double u, double y) {
  switch (a) {
  case Activation::ReLU: return u > 0.0 ? 1.0 : 0.0;
  case Activation::Sigmoid: return y * (1.0 - y);
  case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// y += M x
void gemv(const Matrix& M, std::span<const double> x, std::span<double> y) {
  for (std::size_t o = 0; o < M.rows(); ++o) y[o] += dot(M.row(o), x);
}

// x += M^T y
void gemv_t(const Matrix& M, std::span<const double> y, std::span<double> x) {
  for (std::size_t o = 0; o < M.rows(); ++o) axpy(y[o], M.row(o), x);
}

// G += a b^T
void outer_add(Matrix& G, std::span<const double> a, std::span<const double> b) {
  for (std::size_t o = 0; o < G.rows(); ++o) axpy(a[o], b, G.row(o));
}

struct LayerCache {
  Vec z;
  std::map<int, Vec> zk;
  std::map<int, Vec> proj;  // m -> rank2 * m projections
  std::map<int, Vec> h;     // m -> rank2 products
  Vec sinz;
  Vec u, y;
};

void forward_cached(const TaskNeuronLayer& L, std::span<const double> z, LayerCache& c) {
  if (static_cast<int>(z.size()) != L.in_dim)
    throw ValidationError("layer_forward: input has width " + std::to_string(z.size()) + ", layer expects " +
                          std::to_string(L.in_dim));
  c.z.assign(z.begin(), z.end());
  c.u.assign(L.bias.begin(), L.bias.end());
  for (const auto& [k, W] : L.w_poly) {
    auto& zk = c.zk[k];
    zk.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) zk[i] = ipow(z[i], k);
    gemv(W, zk, c.u);
  }
  for (const auto& [m, F] : L.factors) {
    auto& p = c.proj[m];
    auto& h = c.h[m];
    p.resize(static_cast<std::size_t>(L.rank2 * m));
    h.assign(static_cast<std::size_t>(L.rank2), 1.0);
    for (int r = 0; r < L.rank2; ++r)
      for (int j = 0; j < m; ++j) {
        const double v = dot(F.factor(r, j), z);
        p[static_cast<std::size_t>(r * m + j)] = v;
        h[static_cast<std::size_t>(r)] *= v;
      }
    gemv(L.w_inter.at(m), h, c.u);
  }
  if (L.structure.sin) {
    c.sinz.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) c.sinz[i] = std::sin(z[i]);
    gemv(L.w_sin, c.sinz, c.u);
  }
  c.y.resize(c.u.size());
  for (std::size_t o = 0; o < c.u.size(); ++o) c.y[o] = activate(L.activation, c.u[o]);
}

// Accumulates parameter gradients into g and returns dL/dz.
Vec backward_cached(const TaskNeuronLayer& L, const LayerCache& c, std::span<const double> dy, TaskNeuronLayer& g) {
  Vec delta(dy.size());
  for (std::size_t o = 0; o < dy.size(); ++o) delta[o] = dy[o] * activation_slope(L.activation, c.u[o], c.y[o]);
  Vec dz(c.z.size(), 0.0);
  axpy(1.0, delta, g.bias);

  for (const auto& [k, W] : L.w_poly) {
    const auto& zk = c.zk.at(k);
    outer_add(g.w_poly.at(k), delta, zk);
    Vec t(c.z.size(), 0.0);
    gemv_t(W, delta, t);
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += t[i] * k * ipow(c.z[i], k - 1);
  }
  for (const auto& [m, F] : L.factors) {
    const auto& p = c.proj.at(m);
    outer_add(g.w_inter.at(m), delta, c.h.at(m));
    Vec dh(static_cast<std::size_t>(L.rank2), 0.0);
    gemv_t(L.w_inter.at(m), delta, dh);
    auto& gF = g.factors.at(m);
    for (int r = 0; r < L.rank2; ++r) {
      if (dh[static_cast<std::size_t>(r)] == 0.0) continue;
      for (int j = 0; j < m; ++j) {
        double others = 1.0;
        for (int i = 0; i < m; ++i)
          if (i != j) others *= p[static_cast<std::size_t>(r * m + i)];
        const double s = dh[static_cast<std::size_t>(r)] * others;
        axpy(s, c.z, gF.factor(r, j));
        axpy(s, F.factor(r, j), dz);
      }
    }
  }
  if (L.structure.sin) {
    outer_add(g.w_sin, delta, c.sinz);
    Vec t(c.z.size(), 0.0);
    gemv_t(L.w_sin, delta, t);
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += t[i] * std::cos(c.z[i]);
  }
  return dz;
}

double bce_logit(double f, double y) { return std::max(f, 0.0) - y * f + std::log1p(std::exp(-std::abs(f))); }

// Per-sample loss and dL/d(output), unscaled by the batch size.
double head_loss(Head head, std::span<const double> out, double target, Vec* dout) {
  switch (head) {
  case Head::Regression: {
    const double r = out[0] - target;
    if (dout) *dout = {2.0 * r};
    return r * r;
  }
  case Head::Binary:
    if (dout) *dout = {sigmoid(out[0]) - target};
    return bce_logit(out[0], target);
  case Head::Multiclass: {
    const double mx = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double v : out) z += std::exp(v - mx);
    const auto t = static_cast<std::size_t>(target);
    if (dout) {
      dout->resize(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) (*dout)[i] = std::exp(out[i] - mx) / z - (i == t ? 1.0 : 0.0);
    }
    return std::log(z) + mx - out[t];
  }
  }
  return 0.0;
}

void check_targets(const Dataset& data, Head head, std::size_t out_width) {
  if (head == Head::Regression) return;
  for (double v : data.y) {
    if (head == Head::Binary && v != 0.0 && v != 1.0)
      throw ValidationError("network: binary targets must be 0 or 1, got " + std::to_string(v));
    if (head == Head::Multiclass && (v < 0.0 || v != std::floor(v) || v >= static_cast<double>(out_width)))
      throw ValidationError("network: class index " + std::to_string(v) + " outside [0, " +
                            std::to_string(out_width) + ")");
  }
}

nlohmann::json matrix_json(const Matrix& M) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < M.rows(); ++r) rows.push_back(std::vector<double>(M.row(r).begin(), M.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw ValidationError("network checkpoint: " + what + " must have " + std::to_string(rows) + " rows");
  Matrix M(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto v = j[r].get<std::vector<double>>();
    if (v.size() != cols) throw ValidationError("network checkpoint: " + what + " rows must have " + std::to_string(cols) + " entries");
    std::copy(v.begin(), v.end(), M.row(r).begin());
  }
  return M;
}

} // namespace

TaskNeuronLayer TaskNeuronLayer::zeros_like() const {
  TaskNeuronLayer z = *this;
  for (auto b : z.blocks()) std::fill(b.begin(), b.end(), 0.0);
  return z;
}

std::vector<std::span<double>> TaskNeuronLayer::blocks() {
  std::vector<std::span<double>> out;
  for (auto& [k, W] : w_poly) out.push_back(W.flat());
  for (auto& [m, F] : factors) out.push_back(F.a.flat());
  for (auto& [m, W] : w_inter) out.push_back(W.flat());
  if (!w_sin.empty()) out.push_back(w_sin.flat());
  out.push_back(bias);
  return out;
}

std::vector<std::span<const double>> TaskNeuronLayer::blocks() const {
  std::vector<std::span<const double>> out;
  for (auto b : const_cast<TaskNeuronLayer*>(this)->blocks()) out.emplace_back(b);
  return out;
}

std::size_t TaskNeuronLayer::parameter_count() const {
  std::size_t n = 0;
  for (auto b : blocks()) n += b.size();
  return n;
}

TaskNeuronLayer init_layer(int in_dim, int out_dim, const FormulaStructure& structure, std::uint64_t seed, int rank2,
                           Activation activation) {
  if (in_dim < 1 || out_dim < 1) throw ValidationError("init_layer: in_dim and out_dim must be >= 1");
  if (rank2 < 1) throw ValidationError("init_layer: rank2 must be >= 1");
  TaskNeuronLayer L;
  L.in_dim = in_dim;
  L.out_dim = out_dim;
  L.rank2 = rank2;
  L.structure = structure;
  L.activation = activation;
  const auto in = static_cast<std::size_t>(in_dim);
  const auto out = static_cast<std::size_t>(out_dim);
  auto rng = make_rng(seed, Stream::Weights);
  for (int k : structure.poly) {
    auto& W = L.w_poly[k] = Matrix(out, in);
    fill_normal(W.flat(), k == 1 ? std::sqrt(2.0 / in_dim) : 1e-3, rng);
  }
  for (int m : structure.interactions) {
    auto& F = L.factors[m] = CpFactors(m, rank2, in_dim);
    fill_normal(F.a.flat(), 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
    auto& W = L.w_inter[m] = Matrix(out, static_cast<std::size_t>(rank2));
    fill_normal(W.flat(), 1e-3, rng);
  }
  if (structure.sin) {
    L.w_sin = Matrix(out, in);
    fill_normal(L.w_sin.flat(), 1e-3, rng);
  }
  L.bias.assign(out, 0.0);
  return L;
}

Vec layer_forward(const TaskNeuronLayer& layer, std::span<const double> z) {
  LayerCache c;
  forward_cached(layer, z, c);
  return c.y;
}

Matrix layer_forward(const TaskNeuronLayer& layer, const Matrix& Z) {
  Matrix Y(Z.rows(), static_cast<std::size_t>(layer.out_dim));
  LayerCache c;
  for (std::size_t r = 0; r < Z.rows(); ++r) {
    forward_cached(layer, Z.row(r), c);
    std::copy(c.y.begin(), c.y.end(), Y.row(r).begin());
  }
  return Y;
}

std::uint64_t layer_flops(const TaskNeuronLayer& L) {
  const std::uint64_t n = static_cast<std::uint64_t>(L.in_dim);
  const std::uint64_t o = static_cast<std::uint64_t>(L.out_dim);
  const std::uint64_t R = static_cast<std::uint64_t>(L.rank2);
  std::uint64_t f = 0, terms = 0;
  for (const auto& [k, W] : L.w_poly) {
    f += n * static_cast<std::uint64_t>(k - 1) + 2 * o * n;
    ++terms;
  }
  for (const auto& [m, F] : L.factors) {
    const auto mm = static_cast<std::uint64_t>(m);
    f += 2 * R * mm * n + R * (mm - 1) + 2 * o * R;
    ++terms;
  }
  if (L.structure.sin) {
    f += 15 * n + 2 * o * n;
    ++terms;
  }
  if (terms > 1) f += (terms - 1) * o;
  if (L.activation != Activation::Identity) f += o;
  return f;
}

void NetworkSpec::validate() const {
  if (layer_widths.size() < 2) throw ValidationError("network.layer_widths: need at least [in, out]");
  for (int w : layer_widths)
    if (w < 1) throw ValidationError("network.layer_widths: every width must be >= 1");
  const int out = layer_widths.back();
  if (head == Head::Multiclass) {
    if (n_classes < 2) throw ValidationError("network.n_classes: multiclass needs at least 2 classes");
    if (out != n_classes)
      throw ValidationError("network.layer_widths: final width " + std::to_string(out) + " must equal n_classes = " +
                            std::to_string(n_classes));
  } else if (out != 1) {
    throw ValidationError("network.layer_widths: final width must be 1 for the " + to_string(head) + " head, got " +
                          std::to_string(out));
  }
  if (!(learning_rate > 0.0)) throw ValidationError("network.learning_rate: must be > 0");
  if (epochs < 1) throw ValidationError("network.epochs: must be >= 1");
  if (batch_size < 1) throw ValidationError("network.batch_size: must be >= 1");
  if (rank2 < 1) throw ValidationError("network.rank2: must be >= 1");
  if (patience_steps < 0) throw ValidationError("network.patience_steps: must be >= 0");
  if (eval_every < 1) throw ValidationError("network.eval_every: must be >= 1");
  if (min_steps < 0) throw ValidationError("network.min_steps: must be >= 0");
}

Activation NetworkSpec::hidden_activation() const {
  return head == Head::Regression ? Activation::ReLU : Activation::Sigmoid;
}

nlohmann::json to_json(const NetworkSpec& s) {
  return {{"layer_widths", s.layer_widths}, {"structure", to_json(s.structure)}, {"head", to_string(s.head)},
          {"n_classes", s.n_classes},       {"learning_rate", s.learning_rate},  {"epochs", s.epochs},
          {"batch_size", s.batch_size},     {"seed", s.seed},                    {"rank2", s.rank2},
          {"patience_steps", s.patience_steps}, {"eval_every", s.eval_every},
          {"min_steps", s.min_steps}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "layer_widths") s.layer_widths = v.get<std::vector<int>>();
    else if (k == "structure") s.structure = v.is_string() ? parse_canonical(v.get<std::string>()) : structure_from_json(v);
    else if (k == "head") s.head = parse_head(v.get<std::string>());
    else if (k == "n_classes") s.n_classes = v.get<int>();
    else if (k == "learning_rate") s.learning_rate = v.get<double>();
    else if (k == "epochs") s.epochs = v.get<int>();
    else if (k == "batch_size") s.batch_size = v.get<int>();
    else if (k == "seed") s.seed = v.get<std::uint64_t>();
    else if (k == "rank2") s.rank2 = v.get<int>();
    else if (k == "patience_steps") s.patience_steps = v.get<int>();
    else if (k == "eval_every") s.eval_every = v.get<int>();
    else if (k == "min_steps") s.min_steps = v.get<int>();
    else throw ValidationError("network." + k + ": unknown key");
  }
  return s;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers) n += L.parameter_count();
  return n;
}

std::uint64_t Network::flops_per_sample() const {
  std::uint64_t f = 0;
  for (const auto& L : layers) f += layer_flops(L);
  return f;
}

Vec Network::forward(std::span<const double> z) const {
  Vec x(z.begin(), z.end());
  for (const auto& L : layers) x = layer_forward(L, x);
  return x;
}

Network init_network(const NetworkSpec& spec) {
  spec.validate();
  Network net;
  const std::size_t n_layers = spec.layer_widths.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Activation act = l + 1 == n_layers ? Activation::Identity : spec.hidden_activation();
    net.layers.push_back(init_layer(spec.layer_widths[l], spec.layer_widths[l + 1], spec.structure,
                                    derive_seed(spec.seed, Stream::Weights, l), spec.rank2, act));
  }
  return net;
}

double network_loss(const Network& net, const Dataset& data, std::span<const std::size_t> rows, Head head,
                    std::vector<TaskNeuronLayer>* grads) {
  const std::size_t n = rows.empty() ? data.size() : rows.size();
  if (n == 0) throw ValidationError("network_loss: empty batch");
  if (grads) {
    grads->clear();
    for (const auto& L : net.layers) grads->push_back(L.zeros_like());
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<LayerCache> caches(net.layers.size());
  Vec losses(n);
  Vec dout;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t row = rows.empty() ? s : rows[s];
    std::span<const double> x = data.X.row(row);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      forward_cached(net.layers[l], x, caches[l]);
      x = caches[l].y;
    }
    losses[s] = head_loss(head, x, data.y[row], grads ? &dout : nullptr);
    if (!grads) continue;
    for (double& v : dout) v *= inv_n;
    Vec d = dout;
    for (std::size_t l = net.layers.size(); l-- > 0;) d = backward_cached(net.layers[l], caches[l], d, (*grads)[l]);
  }
  return pairwise_sum(losses) * inv_n;
}

NetGradReport network_gradcheck(const Network& net, const Dataset& data, Head head, double step) {
  std::vector<TaskNeuronLayer> analytic;
  network_loss(net, data, {}, head, &analytic);
  NetGradReport rep;
  Network probe = net;
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto pb = probe.layers[l].blocks();
    auto gb = analytic[l].blocks();
    for (std::size_t b = 0; b < pb.size(); ++b)
      for (std::size_t i = 0; i < pb[b].size(); ++i) {
        const double orig = pb[b][i];
        pb[b][i] = orig + step;
        const double up = network_loss(probe, data, {}, head);
        pb[b][i] = orig - step;
        const double dn = network_loss(probe, data, {}, head);
        pb[b][i] = orig;
        const double num = (up - dn) / (2.0 * step);
        const double a = gb[b][i];
        const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
        rep.max_relative_error = std::max(rep.max_relative_error, rel);
        ++rep.parameters_checked;
      }
  }
  return rep;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"spec", to_json(r.spec)},
          {"metric_name", r.metric_name},
          {"metric_value", r.metric_value},
          {"test_mse", r.test_mse},
          {"accuracy", r.accuracy},
          {"f1", r.f1},
          {"params", r.params},
          {"flops_per_sample", r.flops_per_sample},
          {"epochs_run", r.epochs_run},
          {"steps_run", r.steps_run},
          {"best_val_loss", r.best_val_loss},
          {"wall_time_s", r.wall_time_s}};
}

namespace {

void score(const Network& net, const Dataset& test, const NetworkSpec& spec, EvalReport& rep) {
  if (test.size() == 0) return;
  if (spec.head == Head::Regression) {
    rep.test_mse = network_loss(net, test, {}, Head::Regression);
    rep.metric_name = "test_mse";
    rep.metric_value = rep.test_mse;
    return;
  }
  const std::size_t C = spec.head == Head::Binary ? 2 : static_cast<std::size_t>(spec.n_classes);
  std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    const Vec out = net.forward(test.X.row(r));
    std::size_t pred = 0;
    if (spec.head == Head::Binary) pred = out[0] > 0.0 ? 1 : 0;
    else pred = static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
    const auto truth = static_cast<std::size_t>(test.y[r]);
    if (pred == truth) {
      ++correct;
      ++tp[truth];
    } else {
      ++fp[pred];
      ++fn[truth];
    }
  }
  auto f1_of = [&](std::size_t c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    return denom > 0 ? 2.0 * tp[c] / denom : 0.0;
  };
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  if (spec.head == Head::Binary) {
    rep.f1 = f1_of(1);
  } else {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += f1_of(c);
    rep.f1 = s / static_cast<double>(C);
  }
  rep.metric_name = "accuracy";
  rep.metric_value = rep.accuracy;
}

} // namespace

TrainedNetwork train_network(const NetworkSpec& spec, const Dataset& train, const Dataset& val, const Dataset& test) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (train.size() == 0) throw ValidationError("train_network: empty training set");
  for (const Dataset* ds : {&train, &val, &test})
    if (ds->size() > 0 && static_cast<int>(ds->dim()) != spec.layer_widths.front())
      throw ValidationError("train_network: data has " + std::to_string(ds->dim()) + " features, layer_widths[0] = " +
                            std::to_string(spec.layer_widths.front()));
  const auto out_width = static_cast<std::size_t>(spec.layer_widths.back());
  check_targets(train, spec.head, out_width);
  check_targets(val, spec.head, out_width);
  check_targets(test, spec.head, out_width);

  TrainedNetwork res{init_network(spec), {}};
  auto& net = res.net;
  auto& rep = res.report;
  rep.spec = spec;

  const bool use_rms = spec.head == Head::Regression;
  RmsProp rms(RmsPropParams{spec.learning_rate, 0.99, 1e-8});
  Adam adam(AdamParams{spec.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<std::vector<std::size_t>> ids(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (auto b : net.layers[l].blocks()) ids[l].push_back(use_rms ? rms.add_block(b.size()) : adam.add_block(b.size()));

  const auto bs = static_cast<std::size_t>(spec.batch_size);
  const std::size_t per_epoch = (train.size() + bs - 1) / bs;
  const int total = spec.epochs * static_cast<int>(per_epoch);
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto shuffle_rng = make_rng(spec.seed, Stream::Shuffle);

  const bool early = spec.patience_steps > 0 && val.size() > 0;
  double best = std::numeric_limits<double>::infinity();
  int best_step = 0;
  Network best_net;
  std::vector<TaskNeuronLayer> grads;

  int step = 0;
  for (; step < total; ++step) {
    const std::size_t slot = static_cast<std::size_t>(step) % per_epoch;
    if (slot == 0) std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    const std::size_t begin = slot * bs;
    const std::size_t end = std::min(begin + bs, perm.size());
    const double loss = network_loss(net, train, std::span<const std::size_t>(perm.data() + begin, end - begin),
                                     spec.head, &grads);
    if (!std::isfinite(loss))
      throw NumericalError("train_network: non-finite training loss at step " + std::to_string(step) + " (epoch " +
                           std::to_string(step / static_cast<int>(per_epoch)) + ")");
    for (std::size_t l = 0; l < grads.size(); ++l)
      for (auto b : grads[l].blocks())
        if (!all_finite(b))
          throw NumericalError("train_network: non-finite gradient in layer " + std::to_string(l) + " at step " +
                               std::to_string(step));
    adam.begin_step();
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto pb = net.layers[l].blocks();
      auto gb = grads[l].blocks();
      for (std::size_t b = 0; b < pb.size(); ++b) {
        if (use_rms) rms.update(ids[l][b], pb[b], gb[b]);
        else adam.update(ids[l][b], pb[b], gb[b]);
      }
    }
    if (early && ((step + 1) % spec.eval_every == 0 || step + 1 == total)) {
      const double v = network_loss(net, val, {}, spec.head);
      if (!std::isfinite(v))
        throw NumericalError("train_network: non-finite validation loss at step " + std::to_string(step));
      if (v < best) {
        best = v;
        best_step = step + 1;
        best_net = net;
      } else if (step + 1 >= spec.min_steps && step + 1 - best_step >= spec.patience_steps) {
        ++step;
        break;
      }
    }
  }
  if (early && !best_net.layers.empty()) net = best_net;
  rep.steps_run = step;
  rep.epochs_run = static_cast<double>(step) / static_cast<double>(per_epoch);
  rep.best_val_loss = early ? best : (val.size() > 0 ? network_loss(net, val, {}, spec.head) : 0.0);
  rep.params = net.parameter_count();
  rep.flops_per_sample = net.flops_per_sample();
  score(net, test, spec, rep);
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

nlohmann::json network_to_json(const Network& net) {
  auto layers = nlohmann::json::array();
  for (const auto& L : net.layers) {
    nlohmann::json j;
    j["in_dim"] = L.in_dim;
    j["out_dim"] = L.out_dim;
    j["rank2"] = L.rank2;
    j["activation"] = to_string(L.activation);
    j["structure"] = to_json(L.structure);
    nlohmann::json wp = nlohmann::json::object(), fa = nlohmann::json::object(), wi = nlohmann::json::object();
    for (const auto& [k, W] : L.w_poly) wp[std::to_string(k)] = matrix_json(W);
    for (const auto& [m, F] : L.factors) fa[std::to_string(m)] = matrix_json(F.a);
    for (const auto& [m, W] : L.w_inter) wi[std::to_string(m)] = matrix_json(W);
    j["w_poly"] = wp;
    j["factors"] = fa;
    j["w_inter"] = wi;
    j["w_sin"] = matrix_json(L.w_sin);
    j["bias"] = L.bias;
    layers.push_back(j);
  }
  return {{"version", kVersion}, {"layers", layers}};
}

Network network_from_json(const nlohmann::json& j) {
  Network net;
  for (const auto& lj : j.at("layers")) {
    TaskNeuronLayer L;
    L.in_dim = lj.at("in_dim").get<int>();
    L.out_dim = lj.at("out_dim").get<int>();
    L.rank2 = lj.at("rank2").get<int>();
    if (L.in_dim < 1 || L.out_dim < 1 || L.rank2 < 1) throw ValidationError("network checkpoint: invalid layer dimensions");
    L.activation = parse_activation(lj.at("activation").get<std::string>());
    L.structure = structure_from_json(lj.at("structure"));
    const auto in = static_cast<std::size_t>(L.in_dim), out = static_cast<std::size_t>(L.out_dim);
    for (int k : L.structure.poly)
      L.w_poly[k] = matrix_from_json(lj.at("w_poly").at(std::to_string(k)), out, in, "w_poly");
    for (int m : L.structure.interactions) {
      CpFactors F(m, L.rank2, L.in_dim);
      F.a = matrix_from_json(lj.at("factors").at(std::to_string(m)), static_cast<std::size_t>(m * L.rank2), in, "factors");
      L.factors[m] = std::move(F);
      L.w_inter[m] = matrix_from_json(lj.at("w_inter").at(std::to_string(m)), out, static_cast<std::size_t>(L.rank2), "w_inter");
    }
    if (L.structure.sin) L.w_sin = matrix_from_json(lj.at("w_sin"), out, in, "w_sin");
    L.bias = lj.at("bias").get<std::vector<double>>();
    if (L.bias.size() != out) throw ValidationError("network checkpoint: bias must have out_dim entries");
    if (!net.layers.empty() && net.layers.back().out_dim != L.in_dim)
      throw ValidationError("network checkpoint: layer widths do not chain");
    net.layers.push_back(std::move(L));
  }
  if (net.layers.empty()) throw ValidationError("network checkpoint: no layers");
  return net;
}

} // namespace tdn
