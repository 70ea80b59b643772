#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "tdn/bench.hpp"
#include "tdn/gradcheck.hpp"
#include "tdn/network.hpp"
#include "tdn/orbit.hpp"
#include "tdn/search.hpp"
#include "tdn/stability.hpp"
#include "tdn/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace tdn {

namespace {

// ---------------------------------------------------------------- helpers

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: " + path + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& dir, const std::string& name, const std::string& content) {
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + (dir / name).string());
  out << content;
}

void write_json(const fs::path& dir, const std::string& name, const json& j) { write_text(dir, name, j.dump(2) + "\n"); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key())) throw ValidationError((where.empty() ? "" : where + ".") + it.key() + ": unknown key");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(what + ": '" + s + "' is not a number");
  }
}

template <class T>
void apply(const std::optional<T>& flag, T& dst) {
  if (flag) dst = *flag;
}

// Global flags shared by every subcommand.
struct Globals {
  std::optional<std::string> config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

void add_globals(CLI::App* app, Globals& g) {
  app->add_option("--config", g.config, "JSON config file (flags override its keys)");
  app->add_option("--out", g.out, "Output directory")->capture_default_str();
  app->add_option("--seed", g.seed, "Experiment seed (fallback: NSTD_SEED, then 0)");
  app->add_option("--jobs", g.jobs, "Worker threads (default: logical cores)");
}

struct Context {
  json file = json::object();
  std::uint64_t seed = 0;
  int jobs = 1;
  fs::path out;
};

Context make_context(const Globals& g, const std::string& command, const std::set<std::string>& sections) {
  Context c;
  if (g.config) {
    c.file = read_json_file(*g.config);
    std::set<std::string> allowed = sections;
    allowed.insert({"command", "version", "seed", "jobs"});
    check_keys(c.file, allowed, "");
    if (c.file.contains("command") && c.file["command"].get<std::string>() != command)
      throw ValidationError("command: config was written by '" + c.file["command"].get<std::string>() + "', not '" +
                            command + "'");
    if (c.file.contains("version") && c.file["version"].get<std::string>() != kVersion)
      std::cerr << "warning: config was written by version " << c.file["version"].get<std::string>()
                << ", this is " << kVersion << "\n";
  }
  if (g.seed) c.seed = *g.seed;
  else if (c.file.contains("seed")) c.seed = c.file["seed"].get<std::uint64_t>();
  else if (const char* env = std::getenv("NSTD_SEED")) {
    try {
      std::size_t pos = 0;
      c.seed = std::stoull(env, &pos);
      if (pos != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ValidationError(std::string("NSTD_SEED: '") + env + "' is not an unsigned integer");
    }
  }
  if (g.jobs) c.jobs = *g.jobs;
  else if (c.file.contains("jobs")) c.jobs = c.file["jobs"].get<int>();
  else c.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (c.jobs < 1) throw ValidationError("jobs: must be >= 1");
  c.out = g.out;
  fs::create_directories(c.out);
  return c;
}

json resolved_header(const std::string& command, const Context& c) {
  return {{"command", command}, {"version", std::string(kVersion)}, {"seed", c.seed}, {"jobs", c.jobs}};
}

// ---------------------------------------------------------------- data

struct CsvSource {
  std::string path;
  std::string target;
  TaskKind task = TaskKind::Regression;
  std::array<double, 3> fractions{0.8, 0.0, 0.2};
};

struct DataSource {
  bool synthetic = true;
  SyntheticSpec spec;
  CsvSource csv;
};

json to_json(const DataSource& d) {
  if (d.synthetic) return {{"synthetic", to_json(d.spec)}};
  return {{"csv",
           {{"path", d.csv.path},
            {"target", d.csv.target},
            {"task", d.csv.task == TaskKind::Regression ? "regression" : "classification"},
            {"fractions", d.csv.fractions}}}};
}

TaskKind parse_task(const std::string& s) {
  if (s == "regression") return TaskKind::Regression;
  if (s == "classification") return TaskKind::Classification;
  throw ValidationError("data.csv.task: expected 'regression' or 'classification', got '" + s + "'");
}

// Synthetic seeds not given explicitly follow the experiment seed.
DataSource data_from_json(const json& j, std::uint64_t seed) {
  DataSource d;
  check_keys(j, {"synthetic", "csv"}, "data");
  if (j.contains("synthetic") == j.contains("csv")) throw ValidationError("data: give exactly one of 'synthetic' or 'csv'");
  if (j.contains("synthetic")) {
    json s = j["synthetic"];
    if (!s.contains("coeff_seed")) s["coeff_seed"] = seed;
    if (!s.contains("data_seed")) s["data_seed"] = seed;
    d.spec = synthetic_spec_from_json(s);
  } else {
    d.synthetic = false;
    const json& c = j["csv"];
    check_keys(c, {"path", "target", "task", "fractions"}, "data.csv");
    d.csv.path = c.at("path").get<std::string>();
    d.csv.target = c.at("target").get<std::string>();
    if (c.contains("task")) d.csv.task = parse_task(c["task"].get<std::string>());
    if (c.contains("fractions")) {
      const auto f = c["fractions"].get<std::vector<double>>();
      if (f.size() != 3) throw ValidationError("data.csv.fractions: expected [train, val, test]");
      d.csv.fractions = {f[0], f[1], f[2]};
    }
  }
  return d;
}

struct DataFlags {
  std::optional<std::string> csv, target, task, synthetic, weight_scale;
  std::optional<int> dim;
  std::optional<std::size_t> n;
  std::optional<double> noise;
  std::optional<std::uint64_t> data_seed;
};

void add_data_flags(CLI::App* app, DataFlags& f) {
  app->add_option("--csv", f.csv, "CSV file with a header row");
  app->add_option("--target", f.target, "Target column of the CSV");
  app->add_option("--task", f.task, "regression or classification");
  app->add_option("--synthetic", f.synthetic, "Synthetic formula, MODE:ID (pure, interact, hybrid; 0..4)");
  app->add_option("--dim", f.dim, "Synthetic input dimension");
  app->add_option("--n", f.n, "Synthetic sample count");
  app->add_option("--noise", f.noise, "Synthetic label noise std");
  app->add_option("--data-seed", f.data_seed, "Synthetic coefficient and data seed");
  app->add_option("--weight-scale", f.weight_scale, "Interaction weight scale reading: variance or std");
}

DataSource resolve_data(const Context& c, const DataFlags& f, const DataSource& fallback) {
  DataSource d = c.file.contains("data") ? data_from_json(c.file["data"], c.seed) : fallback;
  if (!c.file.contains("data") && d.synthetic) d.spec.coeff_seed = d.spec.data_seed = c.seed;
  if (f.csv && f.synthetic) throw ValidationError("--csv and --synthetic are mutually exclusive");
  if (f.csv) {
    d.synthetic = false;
    d.csv.path = *f.csv;
  }
  if (f.synthetic) {
    d.synthetic = true;
    const auto pos = f.synthetic->find(':');
    if (pos == std::string::npos) throw ValidationError("--synthetic: expected MODE:ID, got '" + *f.synthetic + "'");
    d.spec.mode = parse_mode(f.synthetic->substr(0, pos));
    d.spec.formula_id = static_cast<int>(parse_number(f.synthetic->substr(pos + 1), "--synthetic id"));
  }
  apply(f.target, d.csv.target);
  if (f.task) d.csv.task = parse_task(*f.task);
  apply(f.dim, d.spec.d);
  apply(f.n, d.spec.n);
  apply(f.noise, d.spec.noise_sigma);
  if (f.data_seed) d.spec.coeff_seed = d.spec.data_seed = *f.data_seed;
  if (f.weight_scale) {
    if (*f.weight_scale != "variance" && *f.weight_scale != "std")
      throw ValidationError("--weight-scale: expected variance or std");
    d.spec.weight_scale = *f.weight_scale == "variance" ? WeightScale::Variance : WeightScale::Std;
  }
  if (d.synthetic) d.spec.validate();
  else if (d.csv.path.empty() || d.csv.target.empty())
    throw ValidationError("data.csv: both path and target are required");
  return d;
}

struct LoadedData {
  Dataset train, val, test;
  std::optional<GroundTruth> truth;
};

LoadedData load_data(const DataSource& d, std::uint64_t seed) {
  LoadedData out;
  if (d.synthetic) {
    auto s = generate(d.spec);
    out.train = std::move(s.split.train);
    out.val = std::move(s.split.val);
    out.test = std::move(s.split.test);
    out.truth = std::move(s.truth);
  } else {
    const Dataset raw = load_csv(d.csv.path, d.csv.target, d.csv.task);
    for (const auto& w : raw.warnings) std::cerr << "warning: " << w << "\n";
    auto s = split_and_standardize(raw, d.csv.fractions, seed);
    for (const auto& w : s.train.warnings) std::cerr << "warning: " << w << "\n";
    out.train = std::move(s.train);
    out.val = std::move(s.val);
    out.test = std::move(s.test);
  }
  return out;
}

// ---------------------------------------------------------------- search / model flags

struct SearchFlags {
  std::optional<double> budget, lambda, lr;
  bool no_budget = false;
  std::optional<int> warmup, phase2, batch, snapshot_every;
  std::optional<std::string> init_scheme;
};

void add_search_flags(CLI::App* app, SearchFlags& f) {
  app->add_option("--budget", f.budget, "Search time budget in seconds");
  app->add_flag("--no-budget", f.no_budget, "Run every search step regardless of time");
  app->add_option("--lambda", f.lambda, "L0 penalty weight");
  app->add_option("--lr", f.lr, "Search learning rate (Adam)");
  app->add_option("--warmup", f.warmup, "Warm-up steps");
  app->add_option("--phase2", f.phase2, "Phase-2 steps");
  app->add_option("--batch", f.batch, "Search batch size");
  app->add_option("--snapshot-every", f.snapshot_every, "Record the structure every N steps");
  app->add_option("--init", f.init_scheme, "Search initialization: scaled or uniform");
}

SearchConfig resolve_search(const json& file, const std::string& key, const SearchFlags& f, SearchConfig base) {
  if (file.contains(key)) {
    if (file[key].contains("seed")) throw ValidationError(key + ".seed: use the top-level seed");
    base = search_config_from_json(file[key]);
  }
  if (f.budget) base.time_budget_s = *f.budget > 0.0 ? std::optional<double>(*f.budget) : std::nullopt;
  if (f.no_budget) base.time_budget_s = std::nullopt;
  apply(f.lambda, base.lambda_l0);
  apply(f.lr, base.adam.learning_rate);
  apply(f.warmup, base.warmup_steps);
  apply(f.phase2, base.phase2_steps);
  apply(f.batch, base.batch_size);
  apply(f.snapshot_every, base.snapshot_every);
  if (f.init_scheme) {
    if (*f.init_scheme != "scaled" && *f.init_scheme != "uniform") throw ValidationError("--init: expected scaled or uniform");
    base.init_scheme = *f.init_scheme == "scaled" ? InitScheme::Scaled : InitScheme::Uniform;
  }
  base.validate();
  return base;
}

json search_json(const SearchConfig& c) {
  auto j = to_json(c);
  j.erase("seed");
  return j;
}

struct ModelFlags {
  std::optional<int> k_max, m_max, rank;
  bool no_sin = false;
};

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--k-max", f.k_max, "Highest polynomial order");
  app->add_option("--m-max", f.m_max, "Highest interaction order");
  app->add_option("--rank", f.rank, "CP rank");
  app->add_flag("--no-sin", f.no_sin, "Drop the sine term");
}

ModelConfig resolve_model(const json& file, const ModelFlags& f) {
  ModelConfig m;
  if (file.contains("model")) {
    json j = file["model"];
    if (j.contains("d")) throw ValidationError("model.d: taken from the data");
    j["d"] = 1;
    m = model_config_from_json(j);
  }
  apply(f.k_max, m.k_max);
  apply(f.m_max, m.m_max);
  apply(f.rank, m.rank);
  if (f.no_sin) m.include_sin = false;
  m.validate();
  return m;
}

json model_json(const ModelConfig& m) {
  auto j = to_json(m);
  j.erase("d");
  return j;
}

// ---------------------------------------------------------------- search

struct SearchCmd {
  Globals g;
  DataFlags data;
  SearchFlags search;
  ModelFlags model;
};

int cmd_search(const SearchCmd& a) {
  auto ctx = make_context(a.g, "search", {"data", "search", "model"});
  DataSource fallback;
  const DataSource src = resolve_data(ctx, a.data, fallback);
  SearchConfig sc = resolve_search(ctx.file, "search", a.search, SearchConfig{});
  sc.seed = ctx.seed;
  ModelConfig mc = resolve_model(ctx.file, a.model);

  json resolved = resolved_header("search", ctx);
  resolved["data"] = to_json(src);
  resolved["search"] = search_json(sc);
  resolved["model"] = model_json(mc);
  write_json(ctx.out, "config.resolved.json", resolved);

  const LoadedData data = load_data(src, ctx.seed);
  mc.d = static_cast<int>(data.train.dim());
  if (data.train.task == TaskKind::Classification) {
    if (data.train.n_classes() != 2)
      throw ValidationError("search: classification data must have 2 classes for stage-1 search, found " +
                            std::to_string(data.train.n_classes()));
    sc.loss = LossKind::BCE;
  }
  std::cerr << "search: " << data.train.size() << " rows, d = " << mc.d << "\n";
  const SearchResult res = run_search(data.train, sc, mc);
  if (res.report.stopped_by_budget)
    std::cerr << "warning: time budget reached after " << res.report.steps_run << " steps\n";

  json formula = to_json(res.structure);
  formula["canonical_string"] = res.structure.canonical();
  formula["source"] = {{"command", "search"},
                       {"version", std::string(kVersion)},
                       {"seed", ctx.seed},
                       {"data", to_json(src)},
                       {"final_task_loss", res.report.final_task_loss}};
  if (data.truth) formula["source"]["match"] = to_string(classify_match(res.structure, data.truth->structure()));
  write_json(ctx.out, "formula.json", formula);
  write_json(ctx.out, "train_report.json", to_json(res.report, sc, mc));
  write_text(ctx.out, "gate_trajectory.csv", gate_trajectory_csv(res.report));
  write_json(ctx.out, "model.json", checkpoint_to_json(res.model));
  std::cout << res.structure.canonical() << "\n";
  return 0;
}

// ---------------------------------------------------------------- build

struct BuildCmd {
  Globals g;
  DataFlags data;
  std::optional<std::string> formula, hidden;
  std::optional<int> epochs, batch, patience, eval_every, min_steps, rank2;
  std::optional<double> lr, val_fraction;
};

int cmd_build(const BuildCmd& a) {
  auto ctx = make_context(a.g, "build", {"data", "structure", "network"});
  DataSource fallback;
  const DataSource src = resolve_data(ctx, a.data, fallback);

  FormulaStructure structure;
  bool have_structure = false;
  if (ctx.file.contains("structure")) {
    structure = structure_from_json(ctx.file["structure"]);
    have_structure = true;
  }
  if (a.formula) {
    structure = structure_from_json(read_json_file(*a.formula));
    have_structure = true;
  }
  if (!have_structure) throw ValidationError("build: --formula is required");

  std::vector<int> hidden{16};
  NetworkSpec ns;
  double val_fraction = 0.1;
  if (ctx.file.contains("network")) {
    const json& n = ctx.file["network"];
    check_keys(n, {"hidden", "learning_rate", "epochs", "batch_size", "rank2", "patience_steps", "eval_every",
                   "min_steps", "val_fraction"},
               "network");
    if (n.contains("hidden")) hidden = n["hidden"].get<std::vector<int>>();
    if (n.contains("learning_rate")) ns.learning_rate = n["learning_rate"].get<double>();
    if (n.contains("epochs")) ns.epochs = n["epochs"].get<int>();
    if (n.contains("batch_size")) ns.batch_size = n["batch_size"].get<int>();
    if (n.contains("rank2")) ns.rank2 = n["rank2"].get<int>();
    if (n.contains("patience_steps")) ns.patience_steps = n["patience_steps"].get<int>();
    if (n.contains("eval_every")) ns.eval_every = n["eval_every"].get<int>();
    if (n.contains("min_steps")) ns.min_steps = n["min_steps"].get<int>();
    if (n.contains("val_fraction")) val_fraction = n["val_fraction"].get<double>();
  } else {
    ns.patience_steps = 500;
  }
  if (a.hidden) {
    hidden.clear();
    for (const auto& s : split_list(*a.hidden)) hidden.push_back(static_cast<int>(parse_number(s, "--hidden")));
  }
  apply(a.lr, ns.learning_rate);
  apply(a.epochs, ns.epochs);
  apply(a.batch, ns.batch_size);
  apply(a.rank2, ns.rank2);
  apply(a.patience, ns.patience_steps);
  apply(a.eval_every, ns.eval_every);
  apply(a.min_steps, ns.min_steps);
  apply(a.val_fraction, val_fraction);
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("network.val_fraction: must be in [0, 1)");

  json resolved = resolved_header("build", ctx);
  resolved["data"] = to_json(src);
  resolved["structure"] = to_json(structure);
  resolved["network"] = {{"hidden", hidden},           {"learning_rate", ns.learning_rate},
                         {"epochs", ns.epochs},         {"batch_size", ns.batch_size},
                         {"rank2", ns.rank2},           {"patience_steps", ns.patience_steps},
                         {"eval_every", ns.eval_every}, {"min_steps", ns.min_steps},
                         {"val_fraction", val_fraction}};
  write_json(ctx.out, "config.resolved.json", resolved);

  LoadedData data = load_data(src, ctx.seed);
  if (data.val.size() == 0 && val_fraction > 0.0) {
    const auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(data.train.size()));
    std::vector<std::size_t> fit(data.train.size() - n_val), val(n_val);
    for (std::size_t i = 0; i < fit.size(); ++i) fit[i] = i;
    for (std::size_t i = 0; i < n_val; ++i) val[i] = fit.size() + i;
    data.val = data.train.subset(val);
    data.train = data.train.subset(fit);
  }
  ns.structure = structure;
  ns.seed = ctx.seed;
  ns.layer_widths = {static_cast<int>(data.train.dim())};
  for (int h : hidden) ns.layer_widths.push_back(h);
  if (data.train.task == TaskKind::Regression) {
    ns.head = Head::Regression;
    ns.layer_widths.push_back(1);
  } else if (data.train.n_classes() == 2) {
    ns.head = Head::Binary;
    ns.layer_widths.push_back(1);
  } else {
    ns.head = Head::Multiclass;
    ns.n_classes = static_cast<int>(data.train.n_classes());
    ns.layer_widths.push_back(ns.n_classes);
  }
  const TrainedNetwork tn = train_network(ns, data.train, data.val, data.test);
  write_json(ctx.out, "eval_report.json", to_json(tn.report));
  write_json(ctx.out, "network.json", network_to_json(tn.net));
  std::cout << tn.report.metric_name << " " << format_double(tn.report.metric_value) << "\n";
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchCmd {
  Globals g;
  std::optional<std::string> modes, ids, dims;
  std::optional<int> trials;
  std::optional<std::size_t> n;
  std::optional<double> noise;
  SearchFlags search;
  ModelFlags model;
};

int cmd_bench(const BenchCmd& a) {
  auto ctx = make_context(a.g, "bench", {"bench"});
  BenchConfig bc;
  if (ctx.file.contains("bench")) {
    json b = ctx.file["bench"];
    if (b.contains("seed") || b.contains("jobs")) throw ValidationError("bench.seed/bench.jobs: use the top-level keys");
    bc = bench_config_from_json(b);
  }
  if (a.modes) {
    bc.modes.clear();
    for (const auto& m : split_list(*a.modes)) bc.modes.push_back(parse_mode(m));
  }
  if (a.ids) {
    bc.formula_ids.clear();
    for (const auto& s : split_list(*a.ids)) bc.formula_ids.push_back(static_cast<int>(parse_number(s, "--ids")));
  }
  if (a.dims) {
    bc.dims.clear();
    for (const auto& s : split_list(*a.dims)) bc.dims.push_back(static_cast<int>(parse_number(s, "--dims")));
  }
  apply(a.trials, bc.trials);
  apply(a.n, bc.n);
  apply(a.noise, bc.noise_sigma);
  json none = json::object();
  bc.search = resolve_search(none, "search", a.search, bc.search);
  bc.search.record_steps = false;
  if (a.model.k_max) bc.model.k_max = *a.model.k_max;
  if (a.model.m_max) bc.model.m_max = *a.model.m_max;
  if (a.model.rank) bc.model.rank = *a.model.rank;
  if (a.model.no_sin) bc.model.include_sin = false;
  bc.seed = ctx.seed;
  bc.jobs = ctx.jobs;
  bc.validate();

  json resolved = resolved_header("bench", ctx);
  json bj = to_json(bc);
  bj.erase("seed");
  bj.erase("jobs");
  resolved["bench"] = bj;
  write_json(ctx.out, "config.resolved.json", resolved);

  const BenchResult r = run_bench(bc);
  int budget_hits = 0;
  for (const auto& row : r.rows) budget_hits += row.result.stopped_by_budget ? 1 : 0;
  if (budget_hits) std::cerr << "warning: " << budget_hits << " searches hit the time budget\n";
  write_text(ctx.out, "results.csv", results_csv(r));
  write_json(ctx.out, "aggregate.json", aggregate_json(r));
  for (const auto& cell : aggregate_json(r)["cells"])
    std::cout << cell["mode"].get<std::string>() << " d=" << cell["d"].get<int>()
              << " mean_test_mse=" << format_double(cell["mean_test_mse"].get<double>())
              << " exact=" << cell["exact_matches"].get<int>() << "/" << cell["runs"].get<int>() << "\n";
  return 0;
}

// ---------------------------------------------------------------- stability

struct StabilityCmd {
  Globals g;
  DataFlags data;
  SearchFlags search;
  ModelFlags model;
  std::optional<int> seeds, epochs;
  std::optional<std::string> noise_levels;
  std::optional<double> warmup_fraction;
};

int cmd_stability(const StabilityCmd& a) {
  auto ctx = make_context(a.g, "stability", {"data", "stability", "search", "model"});
  DataSource fallback;
  const DataSource src = resolve_data(ctx, a.data, fallback);
  SearchConfig base;
  base.batch_size = 16;
  SearchConfig sc = resolve_search(ctx.file, "search", a.search, base);
  sc.seed = ctx.seed;
  ModelConfig mc = resolve_model(ctx.file, a.model);

  StabilityConfig st;
  st.seed_base = st.noise_seed = ctx.seed;
  if (ctx.file.contains("stability")) {
    json s = ctx.file["stability"];
    if (!s.contains("seed_base")) s["seed_base"] = ctx.seed;
    if (!s.contains("noise_seed")) s["noise_seed"] = ctx.seed;
    if (s.contains("jobs")) throw ValidationError("stability.jobs: use the top-level key");
    st = stability_config_from_json(s);
  }
  apply(a.seeds, st.n_seeds);
  apply(a.epochs, st.epochs);
  apply(a.warmup_fraction, st.warmup_fraction);
  if (a.noise_levels) {
    st.noise_levels.clear();
    for (const auto& s : split_list(*a.noise_levels)) st.noise_levels.push_back(parse_number(s, "--noise-levels"));
  }
  st.jobs = ctx.jobs;
  st.validate();

  json resolved = resolved_header("stability", ctx);
  resolved["data"] = to_json(src);
  json sj = to_json(st);
  sj.erase("jobs");
  resolved["stability"] = sj;
  resolved["search"] = search_json(sc);
  resolved["model"] = model_json(mc);
  write_json(ctx.out, "config.resolved.json", resolved);

  const LoadedData data = load_data(src, ctx.seed);
  mc.d = static_cast<int>(data.train.dim());
  if (data.train.task == TaskKind::Classification) sc.loss = LossKind::BCE;
  const DiversityReport rep = run_stability(data.train, st, sc, mc);
  for (const auto& lr : rep.levels)
    for (const auto& w : lr.warnings) std::cerr << "warning: noise " << lr.noise << ": " << w << "\n";
  write_text(ctx.out, "epoch_diversity.csv", epoch_diversity_csv(rep));
  write_text(ctx.out, "cumulative_diversity.csv", cumulative_diversity_csv(rep));
  write_json(ctx.out, "diversity.json", to_json(rep));
  for (const auto& lr : rep.levels)
    std::cout << "noise " << format_double(lr.noise) << ": final epoch-wise " << lr.final_unique
              << ", cumulative " << format_double(lr.cumulative.empty() ? 0.0 : lr.cumulative.back()) << "\n";
  return 0;
}

// ---------------------------------------------------------------- orbit

struct OrbitCmd {
  Globals g;
  std::optional<std::string> map, function;
  std::optional<int> K, grid_factor;
  std::optional<double> eps;
  std::optional<long> max_iters;
};

std::function<double(double)> target_function(const std::string& name) {
  if (name == "x") return [](double x) { return x; };
  if (name == "x2") return [](double x) { return x * x; };
  if (name == "sqrt") return [](double x) { return std::sqrt(x); };
  if (name == "sin") return [](double x) { return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * x); };
  if (name.rfind("const:", 0) == 0) {
    const double c = parse_number(name.substr(6), "orbit.function");
    return [c](double) { return c; };
  }
  throw ValidationError("orbit.function: expected x, x2, sqrt, sin or const:C, got '" + name + "'");
}

UnimodalMap orbit_map(const std::string& name) {
  if (name == "tent") return tent_map();
  if (name.rfind("poly:", 0) == 0) {
    Vec c;
    for (const auto& s : split_list(name.substr(5))) c.push_back(parse_number(s, "orbit.map"));
    return unimodalize(c);
  }
  throw ValidationError("orbit.map: expected tent or poly:c0,c1,..., got '" + name + "'");
}

int cmd_orbit(const OrbitCmd& a) {
  auto ctx = make_context(a.g, "orbit", {"orbit"});
  std::string map = "tent", function = "x2";
  int K = 16, grid_factor = 10;
  double eps = 1.0 / 128.0;
  long max_iters = 1000000;
  if (ctx.file.contains("orbit")) {
    const json& o = ctx.file["orbit"];
    check_keys(o, {"map", "function", "K", "eps", "max_iters", "grid_factor"}, "orbit");
    if (o.contains("map")) map = o["map"].get<std::string>();
    if (o.contains("function")) function = o["function"].get<std::string>();
    if (o.contains("K")) K = o["K"].get<int>();
    if (o.contains("eps")) eps = o["eps"].get<double>();
    if (o.contains("max_iters")) max_iters = o["max_iters"].get<long>();
    if (o.contains("grid_factor")) grid_factor = o["grid_factor"].get<int>();
  }
  apply(a.map, map);
  apply(a.function, function);
  apply(a.K, K);
  apply(a.eps, eps);
  apply(a.max_iters, max_iters);
  apply(a.grid_factor, grid_factor);
  const UnimodalMap T = orbit_map(map);
  const auto f = target_function(function);

  json resolved = resolved_header("orbit", ctx);
  resolved["orbit"] = {{"map", map}, {"function", function}, {"K", K}, {"eps", eps}, {"max_iters", max_iters},
                       {"grid_factor", grid_factor}};
  write_json(ctx.out, "config.resolved.json", resolved);

  const ApproximationReport rep = approximate_function(f, K, eps, T, max_iters, grid_factor);
  json j = to_json(rep);
  j["function"] = function;
  write_json(ctx.out, "orbit_report.json", j);
  write_text(ctx.out, "orbit.csv", orbit_csv(rep));
  std::cout << "xi " << to_string(rep.h.xi) << ", sup error " << format_double(rep.sup_error) << "\n";
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckCmd {
  Globals g;
  std::optional<int> configs, batch;
  std::optional<double> step, tolerance;
};

int cmd_gradcheck(const GradcheckCmd& a) {
  auto ctx = make_context(a.g, "gradcheck", {"gradcheck"});
  GradcheckConfig gc;
  if (ctx.file.contains("gradcheck")) {
    const json& o = ctx.file["gradcheck"];
    check_keys(o, {"n_configs", "step", "tolerance", "batch"}, "gradcheck");
    if (o.contains("n_configs")) gc.n_configs = o["n_configs"].get<int>();
    if (o.contains("step")) gc.step = o["step"].get<double>();
    if (o.contains("tolerance")) gc.tolerance = o["tolerance"].get<double>();
    if (o.contains("batch")) gc.batch = o["batch"].get<int>();
  }
  apply(a.configs, gc.n_configs);
  apply(a.step, gc.step);
  apply(a.tolerance, gc.tolerance);
  apply(a.batch, gc.batch);
  gc.seed = ctx.seed;

  json resolved = resolved_header("gradcheck", ctx);
  resolved["gradcheck"] = {{"n_configs", gc.n_configs}, {"step", gc.step}, {"tolerance", gc.tolerance},
                           {"batch", gc.batch}};
  write_json(ctx.out, "config.resolved.json", resolved);

  const GradcheckSummary s = run_gradcheck_suite(gc);
  write_json(ctx.out, "gradcheck.json", to_json(s));
  std::cout << "gradcheck: " << s.cases.size() << " configs, " << s.parameters_checked
            << " parameters, max relative error " << format_double(s.max_relative_error) << " ("
            << (s.passed ? "PASS" : "FAIL") << ", tolerance " << format_double(gc.tolerance) << ")\n";
  return s.passed ? 0 : 2;
}

} // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Task-driven neuron toolkit: formula search, network building, benchmarks"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SearchCmd search;
  auto* s = app.add_subcommand("search", "Discover an aggregation formula -> formula.json, train_report.json");
  add_globals(s, search.g);
  add_data_flags(s, search.data);
  add_search_flags(s, search.search);
  add_model_flags(s, search.model);

  BuildCmd build;
  auto* b = app.add_subcommand("build", "Train a network with a given formula -> eval_report.json");
  add_globals(b, build.g);
  add_data_flags(b, build.data);
  b->add_option("--formula", build.formula, "formula.json from search");
  b->add_option("--hidden", build.hidden, "Hidden widths, comma separated (empty for none)");
  b->add_option("--epochs", build.epochs, "Training epochs");
  b->add_option("--batch", build.batch, "Batch size");
  b->add_option("--lr", build.lr, "Learning rate");
  b->add_option("--patience", build.patience, "Early-stopping patience in steps (0: off)");
  b->add_option("--eval-every", build.eval_every, "Validation interval in steps");
  b->add_option("--min-steps", build.min_steps, "Steps before early stopping may fire");
  b->add_option("--rank2", build.rank2, "Interaction rank of the network layers");
  b->add_option("--val-fraction", build.val_fraction, "Validation share carved from training when none is given");

  BenchCmd bench;
  auto* be = app.add_subcommand("bench", "Synthetic sweep -> results.csv, aggregate.json");
  add_globals(be, bench.g);
  be->add_option("--modes", bench.modes, "Comma list of pure, interact, hybrid");
  be->add_option("--ids", bench.ids, "Comma list of formula ids");
  be->add_option("--dims", bench.dims, "Comma list of dimensions");
  be->add_option("--trials", bench.trials, "Trials per cell");
  be->add_option("--n", bench.n, "Samples per dataset");
  be->add_option("--noise", bench.noise, "Label noise std");
  add_search_flags(be, bench.search);
  add_model_flags(be, bench.model);

  StabilityCmd stab;
  auto* st = app.add_subcommand("stability", "Structure diversity across seeds -> diversity CSVs");
  add_globals(st, stab.g);
  add_data_flags(st, stab.data);
  add_search_flags(st, stab.search);
  add_model_flags(st, stab.model);
  st->add_option("--seeds", stab.seeds, "Seeds per noise level");
  st->add_option("--epochs", stab.epochs, "Epochs per search");
  st->add_option("--noise-levels", stab.noise_levels, "Comma list of label noise levels");
  st->add_option("--warmup-fraction", stab.warmup_fraction, "Share of epochs spent in warm-up");

  OrbitCmd orbit;
  auto* o = app.add_subcommand("orbit", "Approximate a function on one chaotic orbit -> orbit.csv, orbit_report.json");
  o->alias("orbit-demo");
  add_globals(o, orbit.g);
  o->add_option("--map", orbit.map, "tent or poly:c0,c1,... (ascending coefficients)");
  o->add_option("--function", orbit.function, "x, x2, sqrt, sin or const:C");
  o->add_option("--K", orbit.K, "Number of intervals");
  o->add_option("--eps", orbit.eps, "Point-fitting tolerance");
  o->add_option("--max-iters", orbit.max_iters, "Orbit scan budget");
  o->add_option("--grid-factor", orbit.grid_factor, "Evaluation points per interval");

  GradcheckCmd grad;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the search gradients");
  add_globals(gc, grad.g);
  gc->add_option("--configs", grad.configs, "Random configurations");
  gc->add_option("--step", grad.step, "Central-difference step");
  gc->add_option("--tolerance", grad.tolerance, "Pass threshold on the relative error");
  gc->add_option("--batch", grad.batch, "Rows per configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (s->parsed()) return cmd_search(search);
    if (b->parsed()) return cmd_build(build);
    if (be->parsed()) return cmd_bench(bench);
    if (st->parsed()) return cmd_stability(stab);
    if (o->parsed()) return cmd_orbit(orbit);
    if (gc->parsed()) return cmd_gradcheck(grad);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

} // namespace tdn
