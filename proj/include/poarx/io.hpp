#pragma once

// File plumbing: CSV datasets, JSON configuration documents and atomic
// output writes.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "poarx/errors.hpp"
#include "poarx/model.hpp"

namespace poarx::io {

using json = nlohmann::ordered_json;

// --------------------------------------------------------------------------
// Number formatting

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";  // also folds -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// --------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// --------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

/// RFC 4180 reader: quoted fields may hold commas, doubled quotes and line
/// breaks. Blank lines are skipped. A UTF-8 byte order mark is ignored.
inline CsvTable parse_csv(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false, field_quoted = false;
  std::size_t line = 1, record_line = 1;

  auto end_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    const bool blank = record.size() == 1 && record[0].empty() && !field_quoted;
    if (!blank) {
      if (table.header.empty()) {
        table.header = std::move(record);
      } else {
        if (record.size() != table.header.size()) {
          throw DataError("line " + std::to_string(record_line) + ": expected " +
                          std::to_string(table.header.size()) + " fields, found " +
                          std::to_string(record.size()));
        }
        table.rows.push_back(std::move(record));
        table.line_numbers.push_back(record_line);
      }
    }
    record.clear();
    field_quoted = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) throw DataError("line " + std::to_string(line) + ": stray quote inside field");
        in_quotes = field_quoted = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        record_line = line;
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) throw DataError("line " + std::to_string(record_line) + ": unterminated quoted field");
  if (!field.empty() || !record.empty() || field_quoted) end_record();
  if (table.header.empty()) throw DataError("CSV file has no header row");
  return table;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  out += '\n';
  return out;
}

// --------------------------------------------------------------------------
// Datasets

/// Column bindings: one count column per series and each series' covariate
/// columns, in model order. Series may share covariate columns.
struct DataSchema {
  std::optional<std::string> time_column;
  std::vector<std::string> count_columns;
  std::vector<std::vector<std::string>> covariate_columns;

  std::size_t dim() const noexcept { return count_columns.size(); }
};

struct Dataset {
  SeriesData data;
  /// Covariates of trailing rows whose counts are all empty; they feed the
  /// intensities beyond the last observation.
  std::vector<CovariateMatrix> future_x;
  std::vector<std::int64_t> future_time;
};

/// Maps CSV text onto the schema. Row t of each covariate column feeds the
/// intensity of row t unchanged.
inline Dataset parse_dataset(std::string_view text, const DataSchema& schema) {
  const CsvTable table = parse_csv(text);
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (!index.emplace(table.header[c], c).second) throw DataError("duplicate column '" + table.header[c] + "'");
  }
  auto column = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("missing column '" + name + "'");
    return it->second;
  };
  const std::size_t dim = schema.dim();
  if (schema.covariate_columns.size() != dim) throw ConfigError("schema needs covariate bindings per series");
  std::vector<std::size_t> count_col(dim);
  std::vector<std::vector<std::size_t>> cov_col(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    count_col[j] = column(schema.count_columns[j]);
    for (const auto& name : schema.covariate_columns[j]) cov_col[j].push_back(column(name));
  }
  const std::optional<std::size_t> time_col =
      schema.time_column ? std::optional<std::size_t>(column(*schema.time_column)) : std::nullopt;

  // Observed rows come first; rows with every count empty may only trail.
  std::size_t n_obs = 0;
  while (n_obs < table.rows.size()) {
    const auto& row = table.rows[n_obs];
    bool all_empty = true;
    for (std::size_t j = 0; j < dim; ++j) all_empty = all_empty && row[count_col[j]].empty();
    if (all_empty) break;
    ++n_obs;
  }
  const std::size_t n_rows = table.rows.size();

  Dataset out;
  out.data.y.assign(dim, std::vector<Count>(n_obs));
  std::vector<CovariateMatrix> x_all(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    x_all[j] = CovariateMatrix(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(cov_col[j].size()));
  }
  std::vector<std::int64_t> time_all;
  for (std::size_t t = 0; t < n_rows; ++t) {
    const auto& row = table.rows[t];
    const std::string where = "line " + std::to_string(table.line_numbers[t]);
    for (std::size_t j = 0; j < dim; ++j) {
      const std::string& cell = row[count_col[j]];
      if (t >= n_obs) {
        if (!cell.empty()) {
          throw DataError(where + ": count in column '" + schema.count_columns[j] +
                          "' after rows with missing counts");
        }
        continue;
      }
      const auto v = parse_int(cell);
      if (!v) {
        throw DataError(where + ": column '" + schema.count_columns[j] + "' is not an integer count: '" + cell + "'");
      }
      if (*v < 0) throw DataError(where + ": negative count in column '" + schema.count_columns[j] + "'");
      out.data.y[j][t] = *v;
    }
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t k = 0; k < cov_col[j].size(); ++k) {
        const std::string& cell = row[cov_col[j][k]];
        const auto v = parse_double(cell);
        if (!v) {
          throw DataError(where + ": column '" + schema.covariate_columns[j][k] + "' is not a number: '" + cell + "'");
        }
        if (*v < 0.0) {
          throw DataError(where + ": negative covariate in column '" + schema.covariate_columns[j][k] + "'");
        }
        x_all[j](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = *v;
      }
    }
    if (time_col) {
      const auto v = parse_int(row[*time_col]);
      if (!v) throw DataError(where + ": time column is not an integer");
      if (!time_all.empty() && *v <= time_all.back()) {
        throw DataError(where + ": time index is not strictly increasing");
      }
      time_all.push_back(*v);
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    const auto cols = x_all[j].cols();
    out.data.x.push_back(x_all[j].topRows(static_cast<Eigen::Index>(n_obs)));
    out.future_x.emplace_back(x_all[j].bottomRows(static_cast<Eigen::Index>(n_rows - n_obs)));
    if (cols == 0) out.future_x.back().resize(static_cast<Eigen::Index>(n_rows - n_obs), 0);
  }
  if (time_col) {
    out.data.time.assign(time_all.begin(), time_all.begin() + static_cast<std::ptrdiff_t>(n_obs));
    out.future_time.assign(time_all.begin() + static_cast<std::ptrdiff_t>(n_obs), time_all.end());
  }
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& path, const DataSchema& schema) {
  return parse_dataset(read_file(path), schema);
}

/// CSV text for a dataset. Columns: time (if bound and present), counts,
/// then each distinct covariate column once. A covariate column shared by
/// several series is written from the first series that uses it.
inline std::string format_dataset(const SeriesData& data, const DataSchema& schema) {
  if (data.dim() != schema.dim()) throw DataError("dataset and schema disagree on the number of series");
  std::vector<std::string> header;
  const bool with_time = schema.time_column && !data.time.empty();
  if (with_time) header.push_back(*schema.time_column);
  for (const auto& c : schema.count_columns) header.push_back(c);
  std::vector<std::pair<std::size_t, std::size_t>> cov_source;  // (series, column)
  std::set<std::string> seen(header.begin(), header.end());
  for (std::size_t j = 0; j < schema.dim(); ++j) {
    for (std::size_t k = 0; k < schema.covariate_columns[j].size(); ++k) {
      if (seen.insert(schema.covariate_columns[j][k]).second) {
        header.push_back(schema.covariate_columns[j][k]);
        cov_source.emplace_back(j, k);
      }
    }
  }
  std::string out = csv_line(header);
  std::vector<std::string> row;
  for (std::size_t t = 0; t < data.length(); ++t) {
    row.clear();
    if (with_time) row.push_back(std::to_string(data.time[t]));
    for (std::size_t j = 0; j < data.dim(); ++j) row.push_back(std::to_string(data.y[j][t]));
    for (const auto& [j, k] : cov_source) {
      row.push_back(format_double(data.x[j](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k))));
    }
    out += csv_line(row);
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const SeriesData& data, const DataSchema& schema) {
  write_file_atomic(path, format_dataset(data, schema));
}

// --------------------------------------------------------------------------
// Configuration

struct SeriesConfig {
  std::string name;
  std::string column;
  MarginSpec margin;
  std::vector<std::string> covariates;
  std::optional<MarginParams> theta;
};

struct EstimationConfig {
  InitPolicy init = InitPolicy::sample_mean();
  double tolerance = 1e-8;
  int max_iterations = 500;
  bool sandwich = false;
};

struct ForecastConfig {
  std::size_t horizon = 1;
  std::size_t replicates = 1000;
  double level = 0.95;
};

struct SimulateConfig {
  std::size_t n = 1000;
  std::size_t burn_in = 500;
};

struct EvaluateConfig {
  std::optional<std::size_t> train;  // rows used for fitting; the rest is holdout
  std::size_t folds = 0;             // 0 disables cross-validation
  std::size_t fold_length = 0;       // 0: half the training rows
  bool menu = false;                 // compare the four-model menu
};

struct Config {
  std::optional<std::string> time_column;
  std::vector<SeriesConfig> series;
  Dependence::Kind dependence = Dependence::Kind::independence;
  std::optional<double> rho;
  EstimationConfig estimation;
  ForecastConfig forecast;
  SimulateConfig simulate;
  EvaluateConfig evaluate;
  std::uint64_t seed = 0;

  ModelSpec model_spec() const {
    ModelSpec spec;
    for (const auto& s : series) spec.margins.push_back(s.margin);
    spec.dependence = dependence;
    spec.normalize();
    return spec;
  }

  DataSchema schema() const {
    DataSchema schema;
    schema.time_column = time_column;
    for (const auto& s : series) {
      schema.count_columns.push_back(s.column);
      schema.covariate_columns.push_back(s.covariates);
    }
    return schema;
  }

  /// Parameters given in the configuration, if every series has them.
  std::optional<ThetaFull> theta() const {
    ThetaFull t;
    for (const auto& s : series) {
      if (!s.theta) return std::nullopt;
      t.margins.push_back(*s.theta);
    }
    if (dependence == Dependence::Kind::frank) {
      if (!rho) return std::nullopt;
      t.rho = rho;
    }
    return t;
  }
};

namespace detail {

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  try {
    return it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline MarginParams parse_theta(const json& t, const MarginSpec& m) {
  if (!t.is_object()) throw ConfigError("theta must be an object");
  MarginParams p;
  p.omega = get_or<double>(t, "omega", 0.0);
  p.alpha = get_or<std::vector<double>>(t, "alpha", {});
  p.beta = get_or<std::vector<double>>(t, "beta", {});
  p.eta = get_or<std::vector<double>>(t, "eta", {});
  try {
    p.validate(m);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("theta: ") + e.what());
  }
  return p;
}

inline json theta_json(const MarginParams& p) {
  return json{{"omega", p.omega}, {"alpha", p.alpha}, {"beta", p.beta}, {"eta", p.eta}};
}

}  // namespace detail

inline Config parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  Config cfg;
  if (doc.contains("time_column") && !doc["time_column"].is_null()) {
    cfg.time_column = detail::get_or<std::string>(doc, "time_column", "");
  }
  const auto series = doc.find("series");
  if (series == doc.end() || !series->is_array() || series->empty()) {
    throw ConfigError("config needs a non-empty 'series' array");
  }
  for (const auto& s : *series) {
    if (!s.is_object()) throw ConfigError("each series entry must be an object");
    SeriesConfig sc;
    sc.name = detail::get_or<std::string>(s, "name", "");
    sc.column = detail::get_or<std::string>(s, "column", sc.name);
    if (sc.name.empty()) sc.name = sc.column;
    if (sc.column.empty()) throw ConfigError("series entry needs a 'name' or 'column'");
    sc.margin.obs_lags = detail::get_or<std::vector<int>>(s, "obs_lags", {1});
    sc.margin.mean_lags = detail::get_or<std::vector<int>>(s, "mean_lags", {1});
    sc.margin.intercept = detail::get_or<bool>(s, "intercept", true);
    sc.covariates = detail::get_or<std::vector<std::string>>(s, "covariates", {});
    sc.margin.n_covariates = sc.covariates.size();
    sc.margin.normalize();
    if (s.contains("theta") && !s["theta"].is_null()) sc.theta = detail::parse_theta(s["theta"], sc.margin);
    cfg.series.push_back(std::move(sc));
  }
  const auto dep = detail::get_or<std::string>(doc, "dependence", "independence");
  if (dep == "frank") cfg.dependence = Dependence::Kind::frank;
  else if (dep != "independence") throw ConfigError("dependence must be 'independence' or 'frank'");
  if (doc.contains("rho") && !doc["rho"].is_null()) cfg.rho = detail::get_or<double>(doc, "rho", 0.0);
  cfg.seed = detail::get_or<std::uint64_t>(doc, "seed", 0);

  if (const auto e = doc.find("estimation"); e != doc.end()) {
    cfg.estimation.init = InitPolicy::parse(detail::get_or<std::string>(*e, "init", "sample_mean"),
                                            detail::get_or<double>(*e, "init_value", 1.0));
    cfg.estimation.tolerance = detail::get_or<double>(*e, "tolerance", cfg.estimation.tolerance);
    cfg.estimation.max_iterations = detail::get_or<int>(*e, "max_iterations", cfg.estimation.max_iterations);
    cfg.estimation.sandwich = detail::get_or<bool>(*e, "sandwich", false);
  }
  if (const auto f = doc.find("forecast"); f != doc.end()) {
    cfg.forecast.horizon = detail::get_or<std::size_t>(*f, "horizon", cfg.forecast.horizon);
    cfg.forecast.replicates = detail::get_or<std::size_t>(*f, "replicates", cfg.forecast.replicates);
    cfg.forecast.level = detail::get_or<double>(*f, "level", cfg.forecast.level);
  }
  if (const auto s = doc.find("simulate"); s != doc.end()) {
    cfg.simulate.n = detail::get_or<std::size_t>(*s, "n", cfg.simulate.n);
    cfg.simulate.burn_in = detail::get_or<std::size_t>(*s, "burn_in", cfg.simulate.burn_in);
  }
  if (const auto v = doc.find("evaluate"); v != doc.end()) {
    if (v->contains("train") && !(*v)["train"].is_null()) {
      cfg.evaluate.train = detail::get_or<std::size_t>(*v, "train", 0);
    }
    cfg.evaluate.folds = detail::get_or<std::size_t>(*v, "folds", 0);
    cfg.evaluate.fold_length = detail::get_or<std::size_t>(*v, "fold_length", 0);
    cfg.evaluate.menu = detail::get_or<bool>(*v, "menu", false);
  }
  if (cfg.dependence == Dependence::Kind::frank && cfg.series.size() < 2) {
    throw ConfigError("Frank dependence needs at least two series");
  }
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

/// Fully resolved configuration, embedded in every report.
inline json config_json(const Config& cfg) {
  json doc;
  doc["time_column"] = cfg.time_column ? json(*cfg.time_column) : json(nullptr);
  json series = json::array();
  for (const auto& s : cfg.series) {
    json e{{"name", s.name},
           {"column", s.column},
           {"obs_lags", s.margin.obs_lags},
           {"mean_lags", s.margin.mean_lags},
           {"intercept", s.margin.intercept},
           {"covariates", s.covariates}};
    if (s.theta) e["theta"] = detail::theta_json(*s.theta);
    series.push_back(std::move(e));
  }
  doc["series"] = std::move(series);
  doc["dependence"] = cfg.dependence == Dependence::Kind::frank ? "frank" : "independence";
  if (cfg.rho) doc["rho"] = *cfg.rho;
  doc["seed"] = cfg.seed;
  json est{{"init", cfg.estimation.init.name()},
           {"tolerance", cfg.estimation.tolerance},
           {"max_iterations", cfg.estimation.max_iterations},
           {"sandwich", cfg.estimation.sandwich}};
  if (cfg.estimation.init.kind == InitPolicy::Kind::fixed) est["init_value"] = cfg.estimation.init.y_value;
  doc["estimation"] = std::move(est);
  doc["forecast"] = {{"horizon", cfg.forecast.horizon},
                     {"replicates", cfg.forecast.replicates},
                     {"level", cfg.forecast.level}};
  doc["simulate"] = {{"n", cfg.simulate.n}, {"burn_in", cfg.simulate.burn_in}};
  doc["evaluate"] = {{"train", cfg.evaluate.train ? json(*cfg.evaluate.train) : json(nullptr)},
                     {"folds", cfg.evaluate.folds},
                     {"fold_length", cfg.evaluate.fold_length},
                     {"menu", cfg.evaluate.menu}};
  return doc;
}

/// Reports end with a newline so golden files diff cleanly.
inline std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

}  // namespace poarx::io
