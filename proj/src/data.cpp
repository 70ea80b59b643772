#include "tdn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace tdn {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  for (auto& s : cells) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
  }
  return cells;
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "?" || s == "null";
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e && std::isfinite(out);
}

} // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.X = Matrix(rows.size(), dim());
  out.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = X.row(rows[i]);
    std::copy(src.begin(), src.end(), out.X.row(i).begin());
    out.y[i] = y[rows[i]];
  }
  out.feature_names = feature_names;
  out.target_name = target_name;
  out.task = task;
  out.class_labels = class_labels;
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column, TaskKind task) {
  std::ifstream in(path);
  if (!in) throw ValidationError("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("load_csv: " + path.string() + " has no header row");
  const auto header = split_csv_line(line);
  const auto tit = std::find(header.begin(), header.end(), target_column);
  if (tit == header.end()) throw ValidationError("load_csv: target column '" + target_column + "' not found");
  const auto target_idx = static_cast<std::size_t>(tit - header.begin());

  Dataset ds;
  ds.task = task;
  ds.target_name = target_column;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != target_idx) ds.feature_names.push_back(header[c]);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_targets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError("load_csv: row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
    if (std::any_of(cells.begin(), cells.end(), is_missing)) {
      ++ds.dropped_rows;
      continue;
    }
    std::vector<double> feats;
    feats.reserve(header.size() - 1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == target_idx) continue;
      double v = 0.0;
      if (!parse_double(cells[c], v))
        throw ValidationError("load_csv: non-numeric value '" + cells[c] + "' at row " + std::to_string(line_no) +
                              ", column '" + header[c] + "'");
      feats.push_back(v);
    }
    rows.push_back(std::move(feats));
    raw_targets.push_back(cells[target_idx]);
  }

  ds.X = Matrix(rows.size(), ds.feature_names.size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), ds.X.row(r).begin());
  ds.y.resize(rows.size());

  if (task == TaskKind::Regression) {
    for (std::size_t r = 0; r < raw_targets.size(); ++r)
      if (!parse_double(raw_targets[r], ds.y[r]))
        throw ValidationError("load_csv: non-numeric regression target '" + raw_targets[r] + "'");
  } else {
    // Numeric labels sort by value, anything else lexicographically.
    std::vector<std::string> labels = raw_targets;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    const bool numeric = std::all_of(labels.begin(), labels.end(), [](const std::string& s) {
      double v;
      return parse_double(s, v);
    });
    if (numeric)
      std::sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
        double x = 0, y = 0;
        parse_double(a, x);
        parse_double(b, y);
        return x < y;
      });
    std::map<std::string, double> index;
    for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = static_cast<double>(i);
    for (std::size_t r = 0; r < raw_targets.size(); ++r) ds.y[r] = index.at(raw_targets[r]);
    ds.class_labels = labels;
  }
  if (ds.dropped_rows > 0)
    ds.warnings.push_back("dropped " + std::to_string(ds.dropped_rows) + " rows with missing values");
  return ds;
}

Standardization fit_standardization(const Dataset& train) {
  if (train.size() == 0) throw ValidationError("standardization: empty training split");
  Standardization st;
  const std::size_t n = train.size();
  const std::size_t d = train.dim();
  Vec mean(d, 0.0), sd(d, 0.0);
  Vec col(n);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < n; ++r) col[r] = train.X(r, c);
    mean[c] = pairwise_sum(col) / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = (col[r] - mean[c]) * (col[r] - mean[c]);
    sd[c] = std::sqrt(pairwise_sum(col) / static_cast<double>(n));
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (sd[c] > 0.0) {
      st.kept_features.push_back(c);
      st.feature_mean.push_back(mean[c]);
      st.feature_std.push_back(sd[c]);
    }
  }
  if (train.task == TaskKind::Regression) {
    st.target_standardized = true;
    st.target_mean = pairwise_sum(train.y) / static_cast<double>(n);
    Vec dev(n);
    for (std::size_t r = 0; r < n; ++r) dev[r] = (train.y[r] - st.target_mean) * (train.y[r] - st.target_mean);
    st.target_std = std::sqrt(pairwise_sum(dev) / static_cast<double>(n));
    if (!(st.target_std > 0.0)) st.target_std = 1.0;
  }
  return st;
}

Dataset apply_standardization(const Dataset& ds, const Standardization& st) {
  Dataset out;
  out.task = ds.task;
  out.target_name = ds.target_name;
  out.class_labels = ds.class_labels;
  out.dropped_rows = ds.dropped_rows;
  out.warnings = ds.warnings;
  for (std::size_t c : st.kept_features)
    out.feature_names.push_back(c < ds.feature_names.size() ? ds.feature_names[c] : "x" + std::to_string(c));
  out.X = Matrix(ds.size(), st.kept_features.size());
  for (std::size_t r = 0; r < ds.size(); ++r)
    for (std::size_t k = 0; k < st.kept_features.size(); ++k)
      out.X(r, k) = (ds.X(r, st.kept_features[k]) - st.feature_mean[k]) / st.feature_std[k];
  out.y = ds.y;
  if (st.target_standardized)
    for (double& v : out.y) v = (v - st.target_mean) / st.target_std;
  return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> fractions) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9 || std::any_of(fractions.begin(), fractions.end(), [](double f) { return f < 0; }))
    throw ValidationError("split: fractions must be non-negative and sum to 1");
  std::array<std::size_t, 3> sizes{};
  for (int i = 1; i < 3; ++i)
    sizes[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::llround(fractions[static_cast<std::size_t>(i)] * static_cast<double>(n)));
  if (sizes[1] + sizes[2] > n) throw ValidationError("split: dataset too small for the requested fractions");
  sizes[0] = n - sizes[1] - sizes[2];
  for (std::size_t i = 0; i < 3; ++i)
    if (fractions[i] > 0.0 && sizes[i] == 0)
      throw ValidationError("split: split " + std::to_string(i) + " would hold no samples");
  return sizes;
}

DataSplit split_and_standardize(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(ds.size(), fractions);
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, Stream::Split);
  std::shuffle(perm.begin(), perm.end(), rng);

  DataSplit out;
  out.train_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  out.val_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                      perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  out.test_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), perm.end());

  const Dataset train_raw = ds.subset(out.train_rows);
  out.stats = fit_standardization(train_raw);
  out.train = apply_standardization(train_raw, out.stats);
  out.val = apply_standardization(ds.subset(out.val_rows), out.stats);
  out.test = apply_standardization(ds.subset(out.test_rows), out.stats);
  for (std::size_t c = 0; c < ds.dim(); ++c)
    if (std::find(out.stats.kept_features.begin(), out.stats.kept_features.end(), c) == out.stats.kept_features.end())
      out.train.warnings.push_back("dropped constant feature " +
                                   (c < ds.feature_names.size() ? ds.feature_names[c] : std::to_string(c)));
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["n"] = ds.size();
  meta["d"] = ds.dim();
  meta["feature_names"] = ds.feature_names;
  meta["target_name"] = ds.target_name;
  meta["task"] = ds.task == TaskKind::Regression ? "regression" : "classification";
  meta["class_labels"] = ds.class_labels;
  meta["dropped_rows"] = ds.dropped_rows;
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

  std::ofstream xs(dir / "X.csv");
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < ds.dim(); ++c) xs << (c ? "," : "") << format_double(ds.X(r, c));
    xs << "\n";
  }
  std::ofstream ys(dir / "y.csv");
  for (double v : ds.y) ys << format_double(v) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw ValidationError("load_dataset: missing " + (dir / "meta.json").string());
  const auto meta = nlohmann::json::parse(mf);
  Dataset ds;
  const auto n = meta.at("n").get<std::size_t>();
  const auto d = meta.at("d").get<std::size_t>();
  ds.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
  ds.target_name = meta.at("target_name").get<std::string>();
  ds.task = meta.at("task").get<std::string>() == "regression" ? TaskKind::Regression : TaskKind::Classification;
  ds.class_labels = meta.at("class_labels").get<std::vector<std::string>>();
  ds.dropped_rows = meta.at("dropped_rows").get<std::size_t>();
  ds.X = Matrix(n, d);
  ds.y.resize(n);

  std::ifstream xs(dir / "X.csv");
  std::string line;
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::getline(xs, line)) throw ValidationError("load_dataset: X.csv is short");
    const auto cells = split_csv_line(line);
    if (cells.size() != d) throw ValidationError("load_dataset: X.csv row " + std::to_string(r) + " has wrong width");
    for (std::size_t c = 0; c < d; ++c)
      if (!parse_double(cells[c], ds.X(r, c))) throw ValidationError("load_dataset: bad number in X.csv");
  }
  std::ifstream ys(dir / "y.csv");
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::getline(ys, line) || !parse_double(line, ds.y[r]))
      throw ValidationError("load_dataset: bad or missing value in y.csv");
  }
  return ds;
}

} // namespace tdn
