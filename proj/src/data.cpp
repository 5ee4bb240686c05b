#include "sqlearn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sqlearn {
namespace {

using Eigen::Index;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// RFC-4180 field splitting: quoted fields may contain commas, newlines, and
// doubled quotes. CRLF and LF both end records.
std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  std::size_t i = 0;
  const std::size_t len = text.size();
  const auto end_field = [&]() {
    row.push_back(field);
    field.clear();
  };
  const auto end_row = [&]() {
    end_field();
    rows.push_back(row);
    row.clear();
  };
  while (i < len) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < len && text[i + 1] == '"') {
          field += '"';
          i += 2;
        } else {
          in_quotes = false;
          ++i;
        }
      } else {
        field += c;
        ++i;
      }
    } else if (c == '"') {
      in_quotes = true;
      ++i;
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\r') {
      end_row();
      i += (i + 1 < len && text[i + 1] == '\n') ? 2 : 1;
    } else if (c == '\n') {
      end_row();
      ++i;
    } else {
      field += c;
      ++i;
    }
  }
  if (in_quotes) throw DataError("unterminated quoted field in " + path);
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

bool parse_double(const std::string& s, double& out) {
  const char* start = s.c_str();
  char* end = nullptr;
  out = std::strtod(start, &end);
  if (end == start) return false;
  while (*end == ' ' || *end == '\t') ++end;
  if (*end != '\0') return false;
  return std::isfinite(out);
}

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos;
}

std::string quoted(const std::string& s) {
  if (!needs_quoting(s)) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

Dataset take_rows(const Dataset& data, const std::vector<Index>& rows) {
  Dataset out;
  out.feature_names = data.feature_names;
  out.task = data.task;
  out.has_intercept = data.has_intercept;
  out.features.resize(static_cast<Index>(rows.size()), data.cols());
  out.targets.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = data.features.row(rows[i]);
    out.targets[static_cast<Index>(i)] = data.targets[rows[i]];
  }
  return out;
}

// ascending row indices per class; requires a classification task with both
// labels present
std::pair<std::vector<Index>, std::vector<Index>> class_indices(
    const Dataset& data, const char* op) {
  if (data.task != Task::binary_classification)
    throw std::invalid_argument(std::string(op) +
                                " requires a classification task");
  std::pair<std::vector<Index>, std::vector<Index>> idx;
  for (Index i = 0; i < data.rows(); ++i)
    (data.targets[i] == 1.0 ? idx.second : idx.first).push_back(i);
  if (idx.first.empty() || idx.second.empty())
    throw std::invalid_argument(std::string(op) + " needs both classes");
  return idx;
}

std::vector<Index> sample_without_replacement(std::vector<Index> pool,
                                              Index count, Rng& rng) {
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

}  // namespace

CsvSchema load_schema(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("schema " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("target") || !j["target"].is_string())
    throw DataError("schema " + path + " needs a string \"target\" field");
  CsvSchema schema;
  schema.target = j["target"].get<std::string>();
  const std::string task = j.value("task", std::string("regression"));
  if (task == "regression")
    schema.task = Task::regression;
  else if (task == "binary_classification")
    schema.task = Task::binary_classification;
  else
    throw DataError("schema " + path + ": unknown task \"" + task + "\"");
  if (j.contains("categorical")) {
    if (!j["categorical"].is_array())
      throw DataError("schema " + path + ": \"categorical\" must be an array");
    for (const auto& c : j["categorical"]) {
      if (!c.is_string())
        throw DataError("schema " + path +
                        ": \"categorical\" entries must be strings");
      schema.categorical.push_back(c.get<std::string>());
    }
  }
  return schema;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  const auto rows = parse_csv(read_file(path), path);
  if (rows.empty()) throw DataError("empty csv: " + path);
  const std::vector<std::string>& header = rows.front();
  {
    std::set<std::string> seen;
    for (const auto& name : header)
      if (!seen.insert(name).second)
        throw DataError("duplicate column \"" + name + "\" in " + path);
  }
  const auto col_of = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError("column \"" + name + "\" not found in " + path);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t target_col = col_of(schema.target);
  std::set<std::size_t> categorical_cols;
  for (const auto& name : schema.categorical) {
    const std::size_t c = col_of(name);
    if (c == target_col)
      throw DataError("target column \"" + name + "\" cannot be categorical");
    categorical_cols.insert(c);
  }

  const std::size_t n = rows.size() - 1;
  if (n == 0) throw DataError("no data rows in " + path);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size())
      throw DataError("row " + std::to_string(r) + " of " + path + " has " +
                      std::to_string(rows[r].size()) + " fields, expected " +
                      std::to_string(header.size()));
  }

  // collect bad cells across the whole file so the error names every
  // offending row at once
  std::vector<std::string> bad;
  const auto flag = [&](std::size_t col, std::size_t data_row) {
    if (bad.size() < 12)
      bad.push_back("column \"" + header[col] + "\" row " +
                    std::to_string(data_row));
  };

  // categorical levels, lexicographic
  std::map<std::size_t, std::vector<std::string>> levels;
  for (const std::size_t c : categorical_cols) {
    std::set<std::string> uniq;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const std::string& cell = rows[r][c];
      if (cell.empty()) {
        flag(c, r);
        continue;
      }
      uniq.insert(cell);
    }
    levels[c] = std::vector<std::string>(uniq.begin(), uniq.end());
  }

  std::vector<std::string> names;
  std::vector<std::pair<std::size_t, Index>> numeric_cols;  // csv col -> out col
  Index total = 0;
  std::map<std::size_t, Index> level_base;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target_col) continue;
    if (categorical_cols.count(c)) {
      level_base[c] = total;
      for (const auto& lev : levels[c]) {
        names.push_back(header[c] + "=" + lev);
        ++total;
      }
    } else {
      numeric_cols.emplace_back(c, total);
      names.push_back(header[c]);
      ++total;
    }
  }

  Dataset out;
  out.task = schema.task;
  out.feature_names = names;
  out.features = Eigen::MatrixXd::Zero(static_cast<Index>(n), total);
  out.targets.resize(static_cast<Index>(n));

  std::vector<double> raw_targets(n);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const Index i = static_cast<Index>(r - 1);
    for (const auto& [c, j] : numeric_cols) {
      double v;
      if (!parse_double(rows[r][c], v)) {
        flag(c, r);
        continue;
      }
      out.features(i, j) = v;
    }
    for (const std::size_t c : categorical_cols) {
      const std::string& cell = rows[r][c];
      if (cell.empty()) continue;  // already flagged
      const auto& lv = levels[c];
      const auto it = std::lower_bound(lv.begin(), lv.end(), cell);
      out.features(i, level_base[c] + static_cast<Index>(it - lv.begin())) =
          1.0;
    }
    if (!parse_double(rows[r][target_col], raw_targets[r - 1]))
      flag(target_col, r);
  }
  if (!bad.empty()) {
    std::string msg = "missing or invalid values in " + path + ": ";
    for (std::size_t i = 0; i < bad.size(); ++i) {
      if (i) msg += ", ";
      msg += bad[i];
    }
    throw DataError(msg);
  }

  if (schema.task == Task::binary_classification) {
    std::set<double> observed(raw_targets.begin(), raw_targets.end());
    const bool zero_one = std::all_of(
        observed.begin(), observed.end(),
        [](double v) { return v == 0.0 || v == 1.0; });
    const bool pm_one = std::all_of(
        observed.begin(), observed.end(),
        [](double v) { return v == -1.0 || v == 1.0; });
    if (!zero_one && !pm_one)
      throw DataError("non-binary classification target in " + path +
                      " (need values in {0,1} or {-1,+1})");
    for (std::size_t i = 0; i < n; ++i)
      out.targets[static_cast<Index>(i)] =
          zero_one ? raw_targets[i] : (raw_targets[i] == 1.0 ? 1.0 : 0.0);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      out.targets[static_cast<Index>(i)] = raw_targets[i];
  }
  validate(out);
  return out;
}

void save_csv(const std::string& path, const Dataset& data) {
  validate(data);
  std::ofstream outf(path, std::ios::binary);
  if (!outf) throw DataError("cannot write file: " + path);
  std::ostringstream os;
  os << std::setprecision(17);
  for (Index j = 0; j < data.cols(); ++j) {
    const std::string name = j < static_cast<Index>(data.feature_names.size())
                                 ? data.feature_names[static_cast<std::size_t>(j)]
                                 : "x" + std::to_string(j);
    os << quoted(name) << ",";
  }
  os << "target\n";
  for (Index i = 0; i < data.rows(); ++i) {
    for (Index j = 0; j < data.cols(); ++j) os << data.features(i, j) << ",";
    if (data.task == Task::binary_classification)
      os << static_cast<int>(data.targets[i]) << "\n";
    else
      os << data.targets[i] << "\n";
  }
  outf << os.str();
  if (!outf) throw DataError("write failed: " + path);
}

void save_schema(const std::string& path, const Dataset& data) {
  nlohmann::json j;
  j["target"] = "target";
  j["task"] = data.task == Task::binary_classification
                  ? "binary_classification"
                  : "regression";
  j["categorical"] = nlohmann::json::array();
  std::ofstream outf(path, std::ios::binary);
  if (!outf) throw DataError("cannot write file: " + path);
  outf << j.dump(2) << "\n";
}

std::pair<Dataset, Scaler> standardize(const Dataset& data) {
  validate(data);
  const Index d = data.cols();
  const Index n = data.rows();
  const Index active = data.has_intercept ? d - 1 : d;
  Scaler scaler;
  scaler.mean = Eigen::VectorXd::Zero(d);
  scaler.scale = Eigen::VectorXd::Ones(d);
  for (Index j = 0; j < active; ++j) {
    const double m = data.features.col(j).mean();
    const double var =
        (data.features.col(j).array() - m).square().sum() /
        static_cast<double>(n);
    scaler.mean[j] = m;
    const double s = std::sqrt(var);
    if (s > 0.0) scaler.scale[j] = s;
  }
  return {apply_scaler(scaler, data), scaler};
}

Dataset apply_scaler(const Scaler& scaler, const Dataset& data) {
  if (scaler.mean.size() != data.cols())
    throw std::invalid_argument("scaler dimension mismatch");
  Dataset out = data;
  for (Index j = 0; j < data.cols(); ++j)
    out.features.col(j) =
        (data.features.col(j).array() - scaler.mean[j]) / scaler.scale[j];
  return out;
}

SplitResult train_test_split(const Dataset& data, double train_fraction,
                             std::uint64_t seed) {
  validate(data);
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train fraction must lie in (0, 1)");
  const Index n = data.rows();
  Rng rng(seed);
  const std::vector<Index> perm = rng.permutation(n);
  Index n_train = static_cast<Index>(
      std::ceil(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<Index>(n_train, 1, n);
  const std::vector<Index> train_rows(perm.begin(), perm.begin() + n_train);
  const std::vector<Index> test_rows(perm.begin() + n_train, perm.end());
  return {take_rows(data, train_rows), take_rows(data, test_rows)};
}

Dataset downsample_majority(const Dataset& data, double ratio,
                            std::uint64_t seed) {
  validate(data);
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("downsample ratio must lie in (0, 1]");
  auto [zeros, ones] = class_indices(data, "downsample_majority");
  const bool majority_is_one = ones.size() >= zeros.size();
  std::vector<Index>& majority = majority_is_one ? ones : zeros;
  std::vector<Index>& minority = majority_is_one ? zeros : ones;
  const Index keep = static_cast<Index>(
      std::ceil(ratio * static_cast<double>(minority.size())));
  Rng rng(seed);
  std::vector<Index> survivors =
      sample_without_replacement(majority, keep, rng);
  survivors.insert(survivors.end(), minority.begin(), minority.end());
  std::sort(survivors.begin(), survivors.end());
  return take_rows(data, survivors);
}

Dataset rebalance(const Dataset& data, double alpha, std::uint64_t seed) {
  validate(data);
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("rebalance alpha must lie in (0, 1)");
  auto [zeros, ones] = class_indices(data, "rebalance");
  const bool majority_is_one = ones.size() >= zeros.size();
  std::vector<Index>& majority = majority_is_one ? ones : zeros;
  std::vector<Index>& minority = majority_is_one ? zeros : ones;
  const double n_min = static_cast<double>(minority.size());
  const Index want_maj = static_cast<Index>(std::ceil(alpha * n_min));
  const Index want_min = static_cast<Index>(std::ceil((1.0 - alpha) * n_min));
  if (want_maj > static_cast<Index>(majority.size()) ||
      want_min > static_cast<Index>(minority.size()))
    throw std::invalid_argument("rebalance request exceeds class size");
  Rng rng(seed);
  std::vector<Index> survivors =
      sample_without_replacement(majority, want_maj, rng);
  const std::vector<Index> keep_min =
      sample_without_replacement(minority, want_min, rng);
  survivors.insert(survivors.end(), keep_min.begin(), keep_min.end());
  std::sort(survivors.begin(), survivors.end());
  return take_rows(data, survivors);
}

double synth_regression_noise(Rng& rng) {
  return rng.bernoulli(0.8) ? rng.normal() : rng.laplace(10.0, 1.0);
}

Dataset synth_regression(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("need n >= 1 and d >= 1");
  Rng rng(seed);
  const Index r = std::max<Index>(
      1, static_cast<Index>(std::llround(0.75 * static_cast<double>(d))));
  Eigen::MatrixXd left(n, r), right(r, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < r; ++j) left(i, j) = rng.normal();
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < d; ++j) right(i, j) = rng.normal();
  Dataset out;
  out.task = Task::regression;
  out.features = (left / std::sqrt(static_cast<double>(r))) * right;
  Eigen::VectorXd wbar(d);
  for (Index j = 0; j < d; ++j)
    wbar[j] = rng.normal() / std::sqrt(static_cast<double>(d));
  out.targets = out.features * wbar;
  for (Index i = 0; i < n; ++i) out.targets[i] += synth_regression_noise(rng);
  out.feature_names.reserve(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j)
    out.feature_names.push_back("x" + std::to_string(j));
  return out;
}

Dataset synth_classification(Eigen::Index n, Eigen::Index d, double class_sep,
                             double positive_fraction, std::uint64_t seed) {
  if (n < 2 || d < 1) throw std::invalid_argument("need n >= 2 and d >= 1");
  if (!(class_sep >= 0.0))
    throw std::invalid_argument("class_sep must be non-negative");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
    throw std::invalid_argument("positive_fraction must lie in (0, 1)");
  Rng rng(seed);
  const Index n_pos = std::clamp<Index>(
      static_cast<Index>(
          std::llround(positive_fraction * static_cast<double>(n))),
      1, n - 1);
  std::vector<double> labels(static_cast<std::size_t>(n), 0.0);
  for (Index i = 0; i < n_pos; ++i) labels[static_cast<std::size_t>(i)] = 1.0;
  rng.shuffle(labels);
  const double offset = 0.5 * class_sep / std::sqrt(static_cast<double>(d));
  Dataset out;
  out.task = Task::binary_classification;
  out.features.resize(n, d);
  out.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double y = labels[static_cast<std::size_t>(i)];
    const double center = y == 1.0 ? offset : -offset;
    for (Index j = 0; j < d; ++j) out.features(i, j) = center + rng.normal();
    out.targets[i] = y;
  }
  out.feature_names.reserve(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j)
    out.feature_names.push_back("x" + std::to_string(j));
  return out;
}

}  // namespace sqlearn
