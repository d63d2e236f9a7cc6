#include "congestion/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "congestion/csv.hpp"
#include "congestion/errors.hpp"
#include "congestion/hashing.hpp"

namespace congestion {

int VariableSpec::state_index(const std::string& state) const {
  auto it = std::find(states.begin(), states.end(), state);
  return it == states.end() ? -1 : static_cast<int>(it - states.begin());
}

int CategoricalTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const VariableSpec& CategoricalTable::variable(const std::string& name) const {
  const int idx = column_index(name);
  if (idx < 0) throw DataError("table has no column '" + name + "'");
  return variables[static_cast<std::size_t>(idx)];
}

CategoricalTable CategoricalTable::select_rows(const std::vector<std::size_t>& rows) const {
  CategoricalTable out;
  out.variables = variables;
  out.row_ids.reserve(rows.size());
  out.codes.reserve(rows.size() * cols());
  for (std::size_t r : rows) {
    out.row_ids.push_back(row_ids.at(r));
    for (std::size_t c = 0; c < cols(); ++c) out.codes.push_back(at(r, c));
  }
  return out;
}

}  // namespace congestion

namespace congestion::ingest {

namespace {

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end && std::isfinite(out);
}

bool parse_bool(const std::string& text, bool& out) {
  static const std::set<std::string> kTrue = {"True", "true", "TRUE", "Yes", "yes", "Y", "1"};
  static const std::set<std::string> kFalse = {"False", "false", "FALSE", "No", "no", "N", "0"};
  if (kTrue.count(text)) {
    out = true;
    return true;
  }
  if (kFalse.count(text)) {
    out = false;
    return true;
  }
  return false;
}

int parse_int(std::string_view text) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw DataError("bad integer '" + std::string(text) + "'");
  }
  return value;
}

const char* yes_no(bool b) { return b ? "Yes" : "No"; }

std::string field_text(const FieldValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return csv::format_double(std::get<double>(v));
}

double numeric_value(const Schema& schema, const AccidentRecord& r, const std::string& name) {
  FieldValue v = field(schema, r, name);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  double out = 0.0;
  if (!parse_double(std::get<std::string>(v), out)) {
    throw DataError("column '" + name + "' declared numeric contains non-numeric value '" +
                    std::get<std::string>(v) + "' (record " + r.id + ")");
  }
  return out;
}

}  // namespace

LocalTime LocalTime::parse(const std::string& text) {
  // YYYY-MM-DD[ T]HH:MM[:SS[.fff]]
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' || (text[10] != ' ' && text[10] != 'T') ||
      text[13] != ':') {
    throw DataError("bad timestamp '" + text + "'");
  }
  LocalTime t;
  t.year = parse_int(std::string_view(text).substr(0, 4));
  t.month = parse_int(std::string_view(text).substr(5, 2));
  t.day = parse_int(std::string_view(text).substr(8, 2));
  t.hour = parse_int(std::string_view(text).substr(11, 2));
  t.minute = parse_int(std::string_view(text).substr(14, 2));
  if (t.month < 1 || t.month > 12 || t.day < 1 || t.day > 31 || t.hour < 0 || t.hour > 23 ||
      t.minute < 0 || t.minute > 59) {
    throw DataError("timestamp out of range '" + text + "'");
  }
  return t;
}

std::string LocalTime::to_string() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d %02d:%02d", year, month, day, hour, minute);
  return buf;
}

std::vector<std::string> Schema::declared_columns() const {
  std::vector<std::string> cols = {id,       severity,      start_time,     duration,
                                   junction, crossing,      traffic_signal, precipitation,
                                   severe_weather};
  for (const auto& e : extras) cols.push_back(e.column);
  return cols;
}

Schema Schema::from_json(const nlohmann::json& j) {
  Schema s;
  auto opt = [&](const char* key, std::string& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::string>();
  };
  opt("id", s.id);
  opt("severity", s.severity);
  opt("start_time", s.start_time);
  opt("duration", s.duration);
  opt("junction", s.junction);
  opt("crossing", s.crossing);
  opt("traffic_signal", s.traffic_signal);
  opt("precipitation", s.precipitation);
  opt("severe_weather", s.severe_weather);
  if (j.contains("severity_states")) {
    s.severity_states = j.at("severity_states").get<std::vector<std::string>>();
  }
  if (s.severity_states.size() < 2) throw ConfigError("severity_states needs at least 2 states");
  if (j.contains("extras")) {
    for (const auto& e : j.at("extras")) {
      ExtraColumn col;
      col.column = e.at("column").get<std::string>();
      const std::string kind = e.value("kind", "categorical");
      if (kind == "numeric") {
        col.kind = ExtraKind::kNumeric;
      } else if (kind == "categorical") {
        col.kind = ExtraKind::kCategorical;
      } else {
        throw ConfigError("unknown extra column kind '" + kind + "'");
      }
      s.extras.push_back(col);
    }
  }
  return s;
}

nlohmann::json Schema::to_json() const {
  nlohmann::json j = {{"id", id},
                      {"severity", severity},
                      {"severity_states", severity_states},
                      {"start_time", start_time},
                      {"duration", duration},
                      {"junction", junction},
                      {"crossing", crossing},
                      {"traffic_signal", traffic_signal},
                      {"precipitation", precipitation},
                      {"severe_weather", severe_weather}};
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : extras) {
    ex.push_back({{"column", e.column},
                  {"kind", e.kind == ExtraKind::kNumeric ? "numeric" : "categorical"}});
  }
  j["extras"] = ex;
  return j;
}

std::string peak_hours_state(int hour) {
  if (hour >= 6 && hour < 9) return "AM Peak";
  if (hour >= 14 && hour < 18) return "PM Peak";
  return "OFF Peak";
}

FieldValue field(const Schema& s, const AccidentRecord& r, const std::string& name) {
  if (name == s.id) return r.id;
  if (name == s.severity) return r.severity;
  if (name == s.start_time) return r.start_time.to_string();
  if (name == s.duration) return r.duration_min;
  if (name == s.junction) return std::string(yes_no(r.junction));
  if (name == s.crossing) return std::string(yes_no(r.crossing));
  if (name == s.traffic_signal) return std::string(yes_no(r.traffic_signal));
  if (name == s.precipitation) return r.precipitation_mm;
  if (name == s.severe_weather) return std::string(yes_no(r.severe_weather));
  if (name == kHourField) return static_cast<double>(r.start_time.hour);
  if (name == kPeakHoursField) return peak_hours_state(r.start_time.hour);
  if (auto it = r.numeric.find(name); it != r.numeric.end()) return it->second;
  if (auto it = r.categorical.find(name); it != r.categorical.end()) return it->second;
  throw DataError("record " + r.id + " has no field '" + name + "'");
}

bool has_field(const Schema& s, const std::string& name) {
  if (name == kHourField || name == kPeakHoursField) return true;
  const auto cols = s.declared_columns();
  return std::find(cols.begin(), cols.end(), name) != cols.end();
}

bool is_numeric_field(const Schema& s, const std::string& name) {
  if (name == s.duration || name == s.precipitation || name == kHourField) return true;
  for (const auto& e : s.extras) {
    if (e.column == name) return e.kind == ExtraKind::kNumeric;
  }
  return false;
}

std::vector<std::string> ordered_states(const Schema& s, const std::string& name) {
  if (name == s.junction || name == s.crossing || name == s.traffic_signal ||
      name == s.severe_weather) {
    return kBooleanStates;
  }
  if (name == s.severity) return s.severity_states;
  if (name == kPeakHoursField) return kPeakHourStates;
  return {};
}

LoadResult load_records(std::istream& in, const Schema& schema, const LoadOptions& options) {
  const csv::Table table = csv::read(in);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < table.header.size(); ++i) index[table.header[i]] = i;
  std::vector<std::string> missing;
  for (const auto& col : schema.declared_columns()) {
    if (!index.count(col)) missing.push_back(col);
  }
  if (!missing.empty()) {
    std::string msg = "header mismatch; missing declared columns:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  std::set<std::string> declared;
  for (const auto& col : schema.declared_columns()) declared.insert(col);

  LoadResult result;
  result.records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto reject = [&](const std::string& why) {
      ++result.rejected;
      result.reject_reasons.push_back("line " + std::to_string(table.lines[r]) + ": " + why);
    };
    if (row.size() != table.header.size()) {
      reject("expected " + std::to_string(table.header.size()) + " fields, got " +
             std::to_string(row.size()));
      continue;
    }
    auto cell = [&](const std::string& col) -> const std::string& { return row[index.at(col)]; };
    AccidentRecord rec;
    rec.id = cell(schema.id);
    if (rec.id.empty()) {
      reject("empty id");
      continue;
    }
    const std::string& sev = cell(schema.severity);
    if (std::find(schema.severity_states.begin(), schema.severity_states.end(), sev) !=
        schema.severity_states.end()) {
      rec.severity = sev;
    } else {
      // Numeric severity codes 1..N map onto the declared states.
      double code = 0.0;
      if (parse_double(sev, code) && code == std::floor(code) && code >= 1 &&
          code <= static_cast<double>(schema.severity_states.size())) {
        rec.severity = schema.severity_states[static_cast<std::size_t>(code) - 1];
      } else {
        reject("unknown severity '" + sev + "'");
        continue;
      }
    }
    try {
      rec.start_time = LocalTime::parse(cell(schema.start_time));
    } catch (const DataError& e) {
      reject(e.what());
      continue;
    }
    if (!parse_double(cell(schema.duration), rec.duration_min) || rec.duration_min < 0) {
      reject("bad duration '" + cell(schema.duration) + "'");
      continue;
    }
    if (!parse_double(cell(schema.precipitation), rec.precipitation_mm) || rec.precipitation_mm < 0) {
      reject("bad precipitation '" + cell(schema.precipitation) + "'");
      continue;
    }
    bool ok = parse_bool(cell(schema.junction), rec.junction) &&
              parse_bool(cell(schema.crossing), rec.crossing) &&
              parse_bool(cell(schema.traffic_signal), rec.traffic_signal) &&
              parse_bool(cell(schema.severe_weather), rec.severe_weather);
    if (!ok) {
      reject("bad boolean field");
      continue;
    }
    for (const auto& e : schema.extras) {
      const std::string& text = cell(e.column);
      if (e.kind == ExtraKind::kNumeric) {
        double v = 0.0;
        if (!parse_double(text, v)) {
          ok = false;
          reject("bad numeric '" + text + "' in " + e.column);
          break;
        }
        rec.numeric[e.column] = v;
      } else {
        rec.categorical[e.column] = text;
      }
    }
    if (!ok) continue;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
      if (!declared.count(table.header[i])) rec.categorical[table.header[i]] = row[i];
    }
    result.records.push_back(std::move(rec));
  }
  const std::size_t total = table.rows.size();
  if (total > 0 &&
      static_cast<double>(result.rejected) > options.max_reject_fraction * static_cast<double>(total)) {
    throw DataError(std::to_string(result.rejected) + " of " + std::to_string(total) +
                    " rows malformed, above threshold; first: " + result.reject_reasons.front());
  }
  return result;
}

LoadResult load_records(const std::filesystem::path& path, const Schema& schema,
                        const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  return load_records(in, schema, options);
}

std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t n) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total == 0) throw PreconditionError("cannot apportion over empty strata");
  std::vector<std::size_t> seats(sizes.size());
  std::vector<std::size_t> remainder(sizes.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    // Exact integer arithmetic: quota = n * size / total.
    if (sizes[i] != 0 && n > std::numeric_limits<std::size_t>::max() / sizes[i])
      throw PreconditionError("apportion sizes too large");
    const std::size_t prod = n * sizes[i];
    seats[i] = static_cast<std::size_t>(prod / total);
    remainder[i] = static_cast<std::size_t>(prod % total);
    assigned += seats[i];
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k) {
    ++seats[order[k % order.size()]];
    ++assigned;
  }
  return seats;
}

std::vector<AccidentRecord> stratified_sample(const std::vector<AccidentRecord>& records,
                                              std::size_t n,
                                              const std::vector<std::string>& strata_keys,
                                              std::uint64_t seed, const Schema& schema) {
  if (n == 0) throw PreconditionError("sample size must be positive");
  if (records.empty()) throw PreconditionError("empty stratum set: no records to sample");
  if (n > records.size()) {
    throw PreconditionError("sample size " + std::to_string(n) + " exceeds record count " +
                            std::to_string(records.size()));
  }
  for (const auto& key : strata_keys) {
    if (!records.empty() && !has_field(schema, key) &&
        !records.front().categorical.count(key)) {
      throw PreconditionError("unknown stratum key '" + key + "'");
    }
  }
  std::vector<std::string> stratum_names;
  std::unordered_map<std::string, std::size_t> stratum_of;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::string key;
    for (const auto& k : strata_keys) {
      key += field_text(field(schema, records[i], k));
      key.push_back('\x1f');
    }
    auto [it, inserted] = stratum_of.emplace(key, members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(i);
  }
  std::vector<std::size_t> sizes;
  for (const auto& m : members) sizes.push_back(m.size());
  const auto seats = apportion(sizes, n);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t s = 0; s < members.size(); ++s) {
    auto idx = members[s];
    // Partial Fisher-Yates: the first seats[s] slots are a uniform subset.
    for (std::size_t i = 0; i < seats[s]; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(seats[s]));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<AccidentRecord> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(records[i]);
  return out;
}

PreprocessConfig PreprocessConfig::from_json(const nlohmann::json& j) {
  PreprocessConfig c;
  if (j.contains("numeric")) c.numeric = j.at("numeric").get<std::vector<std::string>>();
  if (j.contains("categorical")) c.categorical = j.at("categorical").get<std::vector<std::string>>();
  if (j.contains("passthrough")) c.passthrough = j.at("passthrough").get<std::vector<std::string>>();
  if (j.contains("discretize")) {
    for (const auto& d : j.at("discretize")) {
      DiscretizeSpec spec;
      spec.column = d.at("column").get<std::string>();
      spec.output = d.value("output", spec.column);
      spec.bins = d.value("bins", 4);
      if (d.contains("labels")) spec.labels = d.at("labels").get<std::vector<std::string>>();
      if (d.contains("edges")) spec.edges = d.at("edges").get<std::vector<double>>();
      c.discretize.push_back(spec);
    }
  }
  return c;
}

nlohmann::json PreprocessConfig::to_json() const {
  nlohmann::json d = nlohmann::json::array();
  for (const auto& s : discretize) {
    nlohmann::json e = {{"column", s.column}, {"output", s.output}, {"bins", s.bins},
                        {"labels", s.labels}};
    if (!s.edges.empty()) e["edges"] = s.edges;
    d.push_back(e);
  }
  return {{"numeric", numeric},
          {"categorical", categorical},
          {"passthrough", passthrough},
          {"discretize", d}};
}

PreprocessConfig PreprocessConfig::defaults() {
  PreprocessConfig c;
  c.numeric = {"Duration_Min", "Precipitation_mm", "Hour"};
  c.categorical = {"Severity", "Junction", "Crossing", "Traffic_Signal", "Severe_Weather",
                   kPeakHoursField};
  c.passthrough = {"Severity", "Junction", "Crossing", "Traffic_Signal", "Severe_Weather",
                   kPeakHoursField};
  c.discretize = {
      {"Duration_Min", "Accident_Duration", 4, {"very short", "short", "moderate", "long"}, {}},
      {"Precipitation_mm", "Precipitation", 3, {"none", "light", "heavy"}, {}},
  };
  return c;
}

std::size_t Discretizer::bin(double value) const {
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), value) -
                                  edges.begin());
}

std::vector<double> quantile_edges(std::vector<double> values, int bins) {
  if (bins < 2) throw ConfigError("discretization needs at least 2 bins");
  if (values.empty()) throw PreconditionError("cannot fit bin edges on no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::vector<double> edges;
  for (int k = 1; k < bins; ++k) {
    const std::size_t num = static_cast<std::size_t>(k) * n;
    const std::size_t pos = num / static_cast<std::size_t>(bins);
    double edge;
    if (num % static_cast<std::size_t>(bins) == 0) {
      edge = pos == 0 ? values.front() : 0.5 * (values[pos - 1] + values[std::min(pos, n - 1)]);
    } else {
      edge = values[std::min(pos, n - 1)];
    }
    // Edges at or below the minimum would leave the first bin empty.
    if (edge > values.front() && (edges.empty() || edge > edges.back())) edges.push_back(edge);
  }
  return edges;
}

Preprocessor fit_preprocessor(const std::vector<AccidentRecord>& records, const Schema& schema,
                              const PreprocessConfig& config) {
  if (records.size() < 2) throw PreconditionError("fit_preprocessor needs at least 2 records");
  Preprocessor pre;
  pre.schema = schema;
  const double n = static_cast<double>(records.size());
  for (const auto& col : config.numeric) {
    double sum = 0.0;
    std::vector<double> vals;
    vals.reserve(records.size());
    for (const auto& r : records) vals.push_back(numeric_value(schema, r, col));
    for (double v : vals) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) sd = 1.0;
    pre.numeric.push_back({col, mean, sd});
  }
  auto first_seen = [&](const std::string& col) {
    CategoryDictionary dict{col, {}};
    std::set<std::string> seen;
    for (const auto& r : records) {
      std::string s = field_text(field(schema, r, col));
      if (seen.insert(s).second) dict.states.push_back(s);
    }
    return dict;
  };
  for (const auto& col : config.categorical) pre.categorical.push_back(first_seen(col));
  for (const auto& col : config.passthrough) {
    auto fixed = ordered_states(schema, col);
    if (fixed.empty()) {
      pre.passthrough.push_back(first_seen(col));
    } else {
      pre.passthrough.push_back({col, fixed});
    }
  }
  for (const auto& spec : config.discretize) {
    Discretizer d;
    d.column = spec.column;
    d.output = spec.output.empty() ? spec.column : spec.output;
    std::vector<double> vals;
    vals.reserve(records.size());
    for (const auto& r : records) vals.push_back(numeric_value(schema, r, spec.column));
    d.fit_min = *std::min_element(vals.begin(), vals.end());
    d.fit_max = *std::max_element(vals.begin(), vals.end());
    if (!spec.edges.empty()) {
      d.edges = spec.edges;
      for (std::size_t i = 1; i < d.edges.size(); ++i) {
        if (!(d.edges[i] > d.edges[i - 1])) {
          throw ConfigError("bin edges for " + spec.column + " must be strictly increasing");
        }
      }
    } else {
      d.edges = quantile_edges(vals, spec.bins);
    }
    const std::size_t nbins = d.edges.size() + 1;
    if (spec.labels.empty()) {
      for (std::size_t b = 0; b < nbins; ++b) d.labels.push_back("bin" + std::to_string(b));
    } else if (spec.labels.size() >= nbins) {
      // Collapsed quantile edges keep the leading labels.
      d.labels.assign(spec.labels.begin(), spec.labels.begin() + static_cast<std::ptrdiff_t>(nbins));
    } else {
      throw ConfigError("discretizer for " + spec.column + " has " +
                        std::to_string(spec.labels.size()) + " labels for " +
                        std::to_string(nbins) + " bins");
    }
    pre.discretizers.push_back(std::move(d));
  }
  return pre;
}

nlohmann::json Preprocessor::to_json() const {
  nlohmann::json j;
  j["format"] = "congestion-preprocessor";
  j["version"] = 1;
  j["schema"] = schema.to_json();
  for (const auto& s : numeric) j["numeric"].push_back({{"column", s.column}, {"mean", s.mean}, {"sd", s.sd}});
  for (const auto& c : categorical) j["categorical"].push_back({{"column", c.column}, {"states", c.states}});
  for (const auto& c : passthrough) j["passthrough"].push_back({{"column", c.column}, {"states", c.states}});
  for (const auto& d : discretizers) {
    j["discretize"].push_back({{"column", d.column},
                               {"output", d.output},
                               {"edges", d.edges},
                               {"labels", d.labels},
                               {"min", d.fit_min},
                               {"max", d.fit_max}});
  }
  for (const char* key : {"numeric", "categorical", "passthrough", "discretize"}) {
    if (!j.contains(key)) j[key] = nlohmann::json::array();
  }
  return j;
}

Preprocessor Preprocessor::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "congestion-preprocessor") {
    throw DataError("not a preprocessor file");
  }
  if (j.value("version", 0) != 1) throw DataError("unsupported preprocessor version");
  Preprocessor p;
  p.schema = Schema::from_json(j.at("schema"));
  for (const auto& s : j.at("numeric")) {
    p.numeric.push_back({s.at("column"), s.at("mean"), s.at("sd")});
  }
  for (const auto& c : j.at("categorical")) p.categorical.push_back({c.at("column"), c.at("states")});
  for (const auto& c : j.at("passthrough")) p.passthrough.push_back({c.at("column"), c.at("states")});
  for (const auto& d : j.at("discretize")) {
    Discretizer disc;
    disc.column = d.at("column");
    disc.output = d.at("output");
    disc.edges = d.at("edges").get<std::vector<double>>();
    disc.labels = d.at("labels").get<std::vector<std::string>>();
    disc.fit_min = d.at("min");
    disc.fit_max = d.at("max");
    p.discretizers.push_back(std::move(disc));
  }
  return p;
}

std::string Preprocessor::fingerprint() const { return hex64(fnv1a64(to_json().dump())); }

FeatureMatrix transform(const Preprocessor& pre, const std::vector<AccidentRecord>& records) {
  FeatureMatrix fm;
  for (const auto& s : pre.numeric) {
    fm.groups.push_back({s.column, fm.column_names.size(), 1, FeatureKind::kScaledNumeric});
    fm.column_names.push_back(s.column);
    fm.column_kinds.push_back(FeatureKind::kScaledNumeric);
  }
  for (const auto& c : pre.categorical) {
    fm.groups.push_back({c.column, fm.column_names.size(), c.states.size(), FeatureKind::kOneHot});
    for (const auto& st : c.states) {
      fm.column_names.push_back(c.column + "=" + st);
      fm.column_kinds.push_back(FeatureKind::kOneHot);
    }
  }
  const std::size_t d = fm.column_names.size();
  fm.values = Matrix::Zero(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(d));
  fm.row_ids.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    fm.row_ids.push_back(r.id);
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::Index col = 0;
    for (const auto& s : pre.numeric) {
      fm.values(row, col++) = (numeric_value(pre.schema, r, s.column) - s.mean) / s.sd;
    }
    for (const auto& c : pre.categorical) {
      const std::string v = field_text(field(pre.schema, r, c.column));
      auto it = std::find(c.states.begin(), c.states.end(), v);
      if (it == c.states.end()) {
        ++fm.unseen_states;
      } else {
        fm.values(row, col + (it - c.states.begin())) = 1.0;
      }
      col += static_cast<Eigen::Index>(c.states.size());
    }
  }
  return fm;
}

Matrix inverse_numeric(const Preprocessor& pre, const FeatureMatrix& features) {
  Matrix out = features.values;
  for (std::size_t j = 0; j < pre.numeric.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    out.col(c) = out.col(c).array() * pre.numeric[j].sd + pre.numeric[j].mean;
  }
  return out;
}

DiscretizeResult discretize(const Preprocessor& pre, const std::vector<AccidentRecord>& records) {
  DiscretizeResult res;
  auto& t = res.table;
  for (const auto& d : pre.discretizers) t.variables.push_back({d.output, d.labels});
  for (const auto& c : pre.passthrough) t.variables.push_back({c.column, c.states});
  t.codes.reserve(records.size() * t.variables.size());
  for (const auto& r : records) {
    t.row_ids.push_back(r.id);
    for (const auto& d : pre.discretizers) {
      const double v = numeric_value(pre.schema, r, d.column);
      if (v < d.fit_min || v > d.fit_max) ++res.clamped;
      t.codes.push_back(static_cast<int>(d.bin(v)));
    }
    for (const auto& c : pre.passthrough) {
      const std::string v = field_text(field(pre.schema, r, c.column));
      auto it = std::find(c.states.begin(), c.states.end(), v);
      t.codes.push_back(it == c.states.end() ? -1 : static_cast<int>(it - c.states.begin()));
    }
  }
  return res;
}

std::array<std::size_t, 24> hourly_histogram(const std::vector<AccidentRecord>& records) {
  std::array<std::size_t, 24> counts{};
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.start_time.hour)];
  return counts;
}

void write_feature_csv(std::ostream& out, const FeatureMatrix& fm) {
  csv::Row header = {"row_id"};
  header.insert(header.end(), fm.column_names.begin(), fm.column_names.end());
  csv::write_row(out, header);
  for (Eigen::Index i = 0; i < fm.values.rows(); ++i) {
    csv::Row row = {fm.row_ids[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < fm.values.cols(); ++j) {
      row.push_back(csv::format_double(fm.values(i, j)));
    }
    csv::write_row(out, row);
  }
}

void write_histogram_csv(std::ostream& out, const std::array<std::size_t, 24>& counts) {
  out << "hour,count\n";
  for (std::size_t h = 0; h < counts.size(); ++h) out << h << ',' << counts[h] << '\n';
}

void write_table_csv(std::ostream& out, const CategoricalTable& t) {
  csv::Row header = {"row_id"};
  for (const auto& v : t.variables) header.push_back(v.name);
  csv::write_row(out, header);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    csv::Row row = {t.row_ids[r]};
    for (std::size_t c = 0; c < t.cols(); ++c) {
      const int code = t.at(r, c);
      row.push_back(code < 0 ? "" : t.variables[c].states[static_cast<std::size_t>(code)]);
    }
    csv::write_row(out, row);
  }
}

CategoricalTable read_table_csv(const std::filesystem::path& path,
                                const std::vector<VariableSpec>& variables) {
  const csv::Table raw = csv::read(path);
  if (raw.header.empty() || raw.header.front() != "row_id") {
    throw DataError(path.string() + ": first column must be row_id");
  }
  CategoricalTable t;
  std::vector<std::size_t> source;
  for (const auto& v : variables) {
    auto it = std::find(raw.header.begin(), raw.header.end(), v.name);
    if (it == raw.header.end()) throw DataError(path.string() + ": missing column " + v.name);
    source.push_back(static_cast<std::size_t>(it - raw.header.begin()));
    t.variables.push_back(v);
  }
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    if (row.size() != raw.header.size()) {
      throw DataError(path.string() + ": malformed line " + std::to_string(raw.lines[r]));
    }
    t.row_ids.push_back(row[0]);
    for (std::size_t c = 0; c < variables.size(); ++c) {
      const std::string& cell = row[source[c]];
      if (cell.empty()) {
        t.codes.push_back(-1);
        continue;
      }
      const int code = variables[c].state_index(cell);
      if (code < 0) {
        throw DataError(path.string() + ": unknown state '" + cell + "' for " + variables[c].name);
      }
      t.codes.push_back(code);
    }
  }
  return t;
}

void write_records_csv(std::ostream& out, const Schema& schema,
                       const std::vector<AccidentRecord>& records) {
  csv::Row header = schema.declared_columns();
  std::set<std::string> declared(header.begin(), header.end());
  std::set<std::string> others;
  for (const auto& r : records) {
    for (const auto& [k, v] : r.categorical) {
      if (!declared.count(k)) others.insert(k);
    }
  }
  header.insert(header.end(), others.begin(), others.end());
  csv::write_row(out, header);
  auto tf = [](bool b) { return std::string(b ? "True" : "False"); };
  for (const auto& r : records) {
    csv::Row row = {r.id,
                    r.severity,
                    r.start_time.to_string(),
                    csv::format_double(r.duration_min),
                    tf(r.junction),
                    tf(r.crossing),
                    tf(r.traffic_signal),
                    csv::format_double(r.precipitation_mm),
                    tf(r.severe_weather)};
    for (const auto& e : schema.extras) {
      if (e.kind == ExtraKind::kNumeric) {
        row.push_back(csv::format_double(r.numeric.at(e.column)));
      } else {
        row.push_back(r.categorical.at(e.column));
      }
    }
    for (const auto& k : others) {
      auto it = r.categorical.find(k);
      row.push_back(it == r.categorical.end() ? "" : it->second);
    }
    csv::write_row(out, row);
  }
}

}  // namespace congestion::ingest
