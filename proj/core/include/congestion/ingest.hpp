#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "congestion/categorical_table.hpp"
#include "congestion/linalg.hpp"
#include "json.hpp"

namespace congestion::ingest {

struct LocalTime {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;

  // Accepts "YYYY-MM-DD HH:MM[:SS[.frac]]" and the ISO 'T' separator.
  static LocalTime parse(const std::string& text);
  std::string to_string() const;
};

struct AccidentRecord {
  std::string id;
  std::string severity;
  LocalTime start_time;
  double duration_min = 0.0;
  bool junction = false;
  bool crossing = false;
  bool traffic_signal = false;
  double precipitation_mm = 0.0;
  bool severe_weather = false;
  // Declared numeric extras.
  std::map<std::string, double> numeric;
  // Declared categorical extras and every undeclared column, verbatim.
  std::map<std::string, std::string> categorical;
};

enum class ExtraKind { kNumeric, kCategorical };

struct ExtraColumn {
  std::string column;
  ExtraKind kind = ExtraKind::kCategorical;
};

// Maps the built-in record roles onto CSV column names.
struct Schema {
  std::string id = "ID";
  std::string severity = "Severity";
  std::vector<std::string> severity_states = {"Minor", "Moderate", "Severe", "Fatal"};
  std::string start_time = "Start_Time";
  std::string duration = "Duration_Min";
  std::string junction = "Junction";
  std::string crossing = "Crossing";
  std::string traffic_signal = "Traffic_Signal";
  std::string precipitation = "Precipitation_mm";
  std::string severe_weather = "Severe_Weather";
  std::vector<ExtraColumn> extras;

  std::vector<std::string> declared_columns() const;
  static Schema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Derived pseudo-columns available to every field lookup.
inline constexpr const char* kHourField = "Hour";
inline constexpr const char* kPeakHoursField = "Peak_Hours";
inline const std::vector<std::string> kPeakHourStates = {"AM Peak", "PM Peak", "OFF Peak"};
inline const std::vector<std::string> kBooleanStates = {"No", "Yes"};

std::string peak_hours_state(int hour);

using FieldValue = std::variant<double, std::string>;

// Field lookup by CSV column name or derived field name. Booleans read as "Yes"/"No".
FieldValue field(const Schema& schema, const AccidentRecord& record, const std::string& name);
bool has_field(const Schema& schema, const std::string& name);
bool is_numeric_field(const Schema& schema, const std::string& name);

// Fixed state order for fields with a natural ordering (booleans, severity,
// peak hours); empty for free categorical fields.
std::vector<std::string> ordered_states(const Schema& schema, const std::string& name);

struct LoadOptions {
  double max_reject_fraction = 0.05;
};

struct LoadResult {
  std::vector<AccidentRecord> records;
  std::size_t rejected = 0;
  std::vector<std::string> reject_reasons;
};

LoadResult load_records(const std::filesystem::path& path, const Schema& schema,
                        const LoadOptions& options = {});
LoadResult load_records(std::istream& in, const Schema& schema, const LoadOptions& options = {});

// Largest-remainder apportionment of n seats over stratum sizes. Remainder ties
// go to the earlier stratum.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& stratum_sizes, std::size_t n);

// Proportional stratified sample without replacement. Output keeps input order.
std::vector<AccidentRecord> stratified_sample(const std::vector<AccidentRecord>& records,
                                              std::size_t n,
                                              const std::vector<std::string>& strata_keys,
                                              std::uint64_t seed, const Schema& schema);

struct DiscretizeSpec {
  std::string column;
  std::string output;  // BN variable name; defaults to column
  int bins = 4;
  std::vector<std::string> labels;
  std::vector<double> edges;  // fixed cut points; quantile edges when empty
};

struct PreprocessConfig {
  std::vector<std::string> numeric;
  std::vector<std::string> categorical;
  std::vector<DiscretizeSpec> discretize;
  // Categorical fields copied into the BN table unchanged.
  std::vector<std::string> passthrough;

  static PreprocessConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // Named accident characteristics plus the derived hour fields.
  static PreprocessConfig defaults();
};

struct NumericScaler {
  std::string column;
  double mean = 0.0;
  double sd = 1.0;
};

struct CategoryDictionary {
  std::string column;
  std::vector<std::string> states;
};

struct Discretizer {
  std::string column;
  std::string output;
  std::vector<double> edges;  // strictly increasing
  std::vector<std::string> labels;
  double fit_min = 0.0;
  double fit_max = 0.0;

  // A value on an edge belongs to the higher bin.
  std::size_t bin(double value) const;
};

struct Preprocessor {
  Schema schema;
  std::vector<NumericScaler> numeric;
  std::vector<CategoryDictionary> categorical;
  std::vector<Discretizer> discretizers;
  std::vector<CategoryDictionary> passthrough;

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);
  std::string fingerprint() const;
};

Preprocessor fit_preprocessor(const std::vector<AccidentRecord>& records, const Schema& schema,
                              const PreprocessConfig& config);

// Equal-frequency cut points; duplicates collapse so edges stay strictly increasing.
std::vector<double> quantile_edges(std::vector<double> values, int bins);

enum class FeatureKind { kScaledNumeric, kOneHot };

// One Shapley player: a scaled numeric column or a whole one-hot group.
struct FeatureGroup {
  std::string name;
  std::size_t first_column = 0;
  std::size_t width = 1;
  FeatureKind kind = FeatureKind::kScaledNumeric;
};

struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> column_names;
  std::vector<FeatureKind> column_kinds;
  std::vector<FeatureGroup> groups;
  std::vector<std::string> row_ids;
  std::size_t unseen_states = 0;
};

FeatureMatrix transform(const Preprocessor& pre, const std::vector<AccidentRecord>& records);

// Undo z-scoring on the scaled-numeric columns; one-hot columns pass through.
Matrix inverse_numeric(const Preprocessor& pre, const FeatureMatrix& features);

struct DiscretizeResult {
  CategoricalTable table;
  std::size_t clamped = 0;
};

DiscretizeResult discretize(const Preprocessor& pre, const std::vector<AccidentRecord>& records);

std::array<std::size_t, 24> hourly_histogram(const std::vector<AccidentRecord>& records);

void write_feature_csv(std::ostream& out, const FeatureMatrix& features);
void write_histogram_csv(std::ostream& out, const std::array<std::size_t, 24>& counts);
void write_table_csv(std::ostream& out, const CategoricalTable& table);
CategoricalTable read_table_csv(const std::filesystem::path& path,
                                const std::vector<VariableSpec>& variables);
void write_records_csv(std::ostream& out, const Schema& schema,
                       const std::vector<AccidentRecord>& records);

}  // namespace congestion::ingest
