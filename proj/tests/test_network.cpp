#include "doctest.h"

#include <cmath>

#include "tdn/network.hpp"
#include "tdn/synthetic.hpp"

using namespace tdn;

namespace {

double act(Activation a, double v) {
  switch (a) {
  case Activation::ReLU: return v > 0.0 ? v : 0.0;
  case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-v));
  case Activation::Identity: return v;
  }
  return v;
}

// One output unit at a time, one term at a time.
Vec naive_forward(const TaskNeuronLayer& L, const Vec& z) {
  Vec out(static_cast<std::size_t>(L.out_dim));
  for (int o = 0; o < L.out_dim; ++o) {
    const auto uo = static_cast<std::size_t>(o);
    double s = L.bias[uo];
    for (int k : L.structure.poly)
      for (int i = 0; i < L.in_dim; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        s += L.w_poly.at(k)(uo, ui) * std::pow(z[ui], k);
      }
    for (int m : L.structure.interactions) {
      const CpFactors& f = L.factors.at(m);
      for (int r = 0; r < L.rank2; ++r) {
        double prod = 1.0;
        for (int j = 0; j < m; ++j) {
          double p = 0.0;
          for (int i = 0; i < L.in_dim; ++i) p += f.factor(r, j)[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(i)];
          prod *= p;
        }
        s += L.w_inter.at(m)(uo, static_cast<std::size_t>(r)) * prod;
      }
    }
    if (L.structure.sin)
      for (int i = 0; i < L.in_dim; ++i) s += L.w_sin(uo, static_cast<std::size_t>(i)) * std::sin(z[static_cast<std::size_t>(i)]);
    out[uo] = act(L.activation, s);
  }
  return out;
}

Dataset gaussian_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Dataset ds;
  ds.X = Matrix(n, d);
  ds.y.resize(n);
  auto rng = make_rng(seed, Stream::Data);
  fill_normal(ds.X.flat(), 1.0, rng);
  return ds;
}

std::vector<FormulaStructure> structure_grid() {
  return {parse_canonical("P1(x)"),         parse_canonical("P2(x) + P3(x)"), parse_canonical("I2(x)"),
          parse_canonical("I2(x) + I3(x)"), parse_canonical("sin(x)"),        parse_canonical("P1(x) + P2(x) + I2(x) + sin(x)")};
}

} // namespace

TEST_CASE("allocation follows structure") {
  const auto L = init_layer(4, 3, parse_canonical("P1(x)"), 1);
  CHECK(L.w_poly.size() == 1);
  CHECK(L.w_poly.at(1).rows() == 3);
  CHECK(L.w_poly.at(1).cols() == 4);
  CHECK(L.factors.empty());
  CHECK(L.w_inter.empty());
  CHECK(L.w_sin.rows() == 0);
  CHECK(L.bias.size() == 3);
  CHECK(L.parameter_count() == 15);
}

TEST_CASE("parameter count 472 for {P1,P2,I2,sin}, in 10, out 8, rank 8") {
  const auto L = init_layer(10, 8, parse_canonical("P1(x) + P2(x) + I2(x) + sin(x)"), 1, 8);
  CHECK(L.parameter_count() == 472);
  std::size_t alloc = 0;
  for (const auto& b : L.blocks()) alloc += b.size();
  CHECK(alloc == 472);
}

TEST_CASE("init statistics") {
  const auto L = init_layer(50, 40, parse_canonical("P1(x) + P2(x) + I2(x)"), 3, 8);
  auto var = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s / static_cast<double>(v.size());
  };
  CHECK(var(L.w_poly.at(1).flat()) == doctest::Approx(2.0 / 50.0).epsilon(0.1));
  CHECK(std::sqrt(var(L.w_poly.at(2).flat())) == doctest::Approx(1e-3).epsilon(0.1));
  CHECK(std::sqrt(var(L.w_inter.at(2).flat())) == doctest::Approx(1e-3).epsilon(0.2));
  for (double b : L.bias) CHECK(b == 0.0);
  CHECK(init_layer(50, 40, parse_canonical("P1(x) + P2(x) + I2(x)"), 3, 8) == L);
  CHECK_FALSE(init_layer(50, 40, parse_canonical("P1(x) + P2(x) + I2(x)"), 4, 8) == L);
}

TEST_CASE("zero layer with ReLU outputs zero") {
  const auto L = init_layer(5, 4, parse_canonical("P1(x) + P3(x) + I2(x) + sin(x)"), 1, 4, Activation::ReLU).zeros_like();
  const Vec out = layer_forward(L, Vec{1.0, -2.0, 0.5, 3.0, -1.0});
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("I2 with unit factors is the coordinate product") {
  auto L = init_layer(4, 1, parse_canonical("I2(x)"), 1, 1).zeros_like();
  L.w_inter.at(2)(0, 0) = 1.0;
  L.factors.at(2).factor(0, 0)[0] = 1.0;
  L.factors.at(2).factor(0, 1)[1] = 1.0;
  CHECK(layer_forward(L, Vec{2.0, 3.0, 5.0, 7.0})[0] == 6.0);
}

TEST_CASE("layer_forward equals a naive per-unit evaluator") {
  for (const auto& s : structure_grid())
    for (Activation a : {Activation::Identity, Activation::ReLU, Activation::Sigmoid}) {
      auto L = init_layer(6, 5, s, 17, 3, a);
      // move weights off their tiny init scale so every term matters
      auto rng = make_rng(17, Stream::Data);
      for (auto b : L.blocks()) fill_normal(b, 0.5, rng);
      const Dataset ds = gaussian_rows(20, 6, 2);
      const Matrix out = layer_forward(L, ds.X);
      for (std::size_t r = 0; r < 20; ++r) {
        const Vec z(ds.X.row(r).begin(), ds.X.row(r).end());
        const Vec ref = naive_forward(L, z);
        for (std::size_t o = 0; o < 5; ++o) CHECK(out(r, o) == doctest::Approx(ref[o]).epsilon(1e-12));
      }
    }
  const auto L = init_layer(3, 2, parse_canonical("P1(x)"), 1);
  CHECK_THROWS_AS(layer_forward(L, Vec{1.0, 2.0}), ValidationError);
}

TEST_CASE("near-linear at init") {
  // RMS over 1000 standard-normal rows: the nonlinear terms stay below 1% of
  // the input scale. A single extreme row can exceed this for cubic terms.
  const Dataset ds = gaussian_rows(1000, 10, 5);
  for (const auto& s0 : structure_grid()) {
    FormulaStructure s = s0;
    s.poly.insert(1);
    const auto L = init_layer(10, 8, s, 9);
    double dev = 0.0, norm = 0.0;
    for (std::size_t r = 0; r < ds.size(); ++r) {
      const auto z = ds.X.row(r);
      const Vec out = layer_forward(L, z);
      for (std::size_t o = 0; o < 8; ++o) {
        double lin = L.bias[o];
        for (std::size_t i = 0; i < 10; ++i) lin += L.w_poly.at(1)(o, i) * z[i];
        dev += (out[o] - lin) * (out[o] - lin) / 8.0;
      }
      for (double v : z) norm += v * v;
    }
    CAPTURE(s.canonical());
    CHECK(std::sqrt(dev / 1000.0) <= 1e-2 * std::sqrt(norm / 1000.0));
  }
}

TEST_CASE("network gradients match finite differences for every structure") {
  for (const auto& s : structure_grid())
    for (Head head : {Head::Regression, Head::Binary, Head::Multiclass}) {
      NetworkSpec spec;
      spec.structure = s;
      spec.head = head;
      spec.rank2 = 3;
      spec.n_classes = head == Head::Multiclass ? 3 : 0;
      spec.layer_widths = {4, 5, head == Head::Multiclass ? 3 : 1};
      spec.seed = 21;
      Network net = init_network(spec);
      auto rng = make_rng(21, Stream::Data);
      for (auto& L : net.layers)
        for (auto b : L.blocks()) fill_normal(b, 0.4, rng);
      Dataset ds = gaussian_rows(7, 4, 3);
      ds.task = head == Head::Regression ? TaskKind::Regression : TaskKind::Classification;
      for (std::size_t i = 0; i < 7; ++i)
        ds.y[i] = head == Head::Regression ? ds.X(i, 0) * ds.X(i, 1) : static_cast<double>(i % (head == Head::Multiclass ? 3 : 2));
      const auto rep = network_gradcheck(net, ds, head);
      CHECK(rep.max_relative_error < 1e-4);
      CHECK(rep.parameters_checked == net.parameter_count());
    }
}

TEST_CASE("FLOPs for [8,16,1] {P1} are 304") {
  NetworkSpec spec;
  spec.structure = parse_canonical("P1(x)");
  spec.layer_widths = {8, 16, 1};
  const Network net = init_network(spec);
  CHECK(net.flops_per_sample() == 2 * (8 * 16 + 16 * 1) + 16);
  CHECK(net.parameter_count() == 8 * 16 + 16 + 16 + 1);
}

TEST_CASE("FLOPs per term type") {
  // poly P3: n*2 + 2*o*n ; cp m=2: 2*R*m*n + R*(m-1) + 2*o*R ; sin: 15n + 2on ; terms-1 adds per unit
  const auto L = init_layer(3, 2, parse_canonical("P3(x) + I2(x) + sin(x)"), 1, 4);
  const std::uint64_t poly = 3 * 2 + 2 * 2 * 3;
  const std::uint64_t cp = 2 * 4 * 2 * 3 + 4 * 1 + 2 * 2 * 4;
  const std::uint64_t sin = 15 * 3 + 2 * 2 * 3;
  CHECK(layer_flops(L) == poly + cp + sin + 2 * 2);
}

TEST_CASE("linear structure fits exactly-linear data") {
  Dataset train = gaussian_rows(1000, 5, 1), test = gaussian_rows(200, 5, 2), val = gaussian_rows(100, 5, 3);
  const Vec w{0.4, -0.3, 0.2, 0.5, -0.1};
  for (Dataset* ds : {&train, &test, &val})
    for (std::size_t i = 0; i < ds->size(); ++i) ds->y[i] = dot(w, ds->X.row(i));
  NetworkSpec spec;
  spec.structure = parse_canonical("P1(x)");
  spec.layer_widths = {5, 1};
  spec.epochs = 300;
  spec.seed = 4;
  const auto a = train_network(spec, train, val, test);
  CHECK(a.report.test_mse < 1e-3);
  CHECK(a.report.metric_name == "test_mse");
  const auto b = train_network(spec, train, val, test);
  CHECK(a.report.test_mse == b.report.test_mse);
  CHECK(a.net == b.net);
}

TEST_CASE("{P2,I2} network on Hybrid ID 0") {
  SyntheticSpec s;
  s.d = 10;
  s.coeff_seed = s.data_seed = 3;
  const auto data = generate(s);
  std::vector<std::size_t> fit(1800), val(200);
  for (std::size_t i = 0; i < 1800; ++i) fit[i] = i;
  for (std::size_t i = 0; i < 200; ++i) val[i] = 1800 + i;
  NetworkSpec spec;
  spec.structure = parse_canonical("P2(x) + I2(x)");
  spec.layer_widths = {10, 1};
  spec.epochs = 300;
  spec.patience_steps = 500;
  spec.min_steps = 3000;
  spec.seed = 3;
  const auto r = train_network(spec, data.split.train.subset(fit), data.split.train.subset(val), data.split.test);
  CHECK(r.report.test_mse <= 0.10);
  CHECK(r.report.steps_run >= 3000);
}

TEST_CASE("classification heads score accuracy") {
  Dataset train = gaussian_rows(600, 3, 1), test = gaussian_rows(200, 3, 2);
  SUBCASE("binary") {
    for (Dataset* ds : {&train, &test}) {
      ds->task = TaskKind::Classification;
      ds->class_labels = {"0", "1"};
      for (std::size_t i = 0; i < ds->size(); ++i) ds->y[i] = ds->X(i, 0) + ds->X(i, 1) > 0 ? 1.0 : 0.0;
    }
    NetworkSpec spec;
    spec.structure = parse_canonical("P1(x)");
    spec.head = Head::Binary;
    spec.layer_widths = {3, 1};
    spec.epochs = 40;
    spec.learning_rate = 1e-2;
    const auto r = train_network(spec, train, Dataset{}, test);
    CHECK(r.report.metric_name == "accuracy");
    CHECK(r.report.accuracy > 0.95);
    CHECK(r.report.f1 > 0.9);
  }
  SUBCASE("multiclass") {
    for (Dataset* ds : {&train, &test}) {
      ds->task = TaskKind::Classification;
      ds->class_labels = {"a", "b", "c"};
      for (std::size_t i = 0; i < ds->size(); ++i) ds->y[i] = ds->X(i, 0) < -0.5 ? 0.0 : (ds->X(i, 0) < 0.5 ? 1.0 : 2.0);
    }
    NetworkSpec spec;
    spec.structure = parse_canonical("P1(x)");
    spec.head = Head::Multiclass;
    spec.n_classes = 3;
    spec.layer_widths = {3, 8, 3};
    spec.epochs = 60;
    spec.learning_rate = 1e-2;
    const auto r = train_network(spec, train, Dataset{}, test);
    CHECK(r.report.accuracy > 0.85);
  }
}

TEST_CASE("spec checks: head width, JSON strictness, divergence") {
  NetworkSpec spec;
  spec.structure = parse_canonical("P1(x)");
  spec.layer_widths = {3, 2};
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec.layer_widths = {3, 1};
  spec.patience_steps = 20;
  auto j = to_json(spec);
  const auto back = network_spec_from_json(j);
  CHECK(to_json(back) == j);
  j["epoch"] = 3;
  CHECK_THROWS_AS(network_spec_from_json(j), ValidationError);

  Dataset train = gaussian_rows(100, 3, 1);
  train.y[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train_network(spec, train, Dataset{}, train), NumericalError);
}

TEST_CASE("network checkpoint round-trip") {
  NetworkSpec spec;
  spec.structure = parse_canonical("P1(x) + P2(x) + I2(x) + I3(x) + sin(x)");
  spec.layer_widths = {4, 6, 1};
  spec.rank2 = 3;
  const Network net = init_network(spec);
  const Network back = network_from_json(nlohmann::json::parse(network_to_json(net).dump()));
  CHECK(back == net);
  CHECK(net.layers[0].activation == Activation::ReLU);
  CHECK(net.layers[1].activation == Activation::Identity);
}
