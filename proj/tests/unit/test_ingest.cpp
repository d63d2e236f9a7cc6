#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "congestion/csv.hpp"
#include "congestion/errors.hpp"
#include "congestion/hashing.hpp"
#include "congestion/ingest.hpp"
#include "congestion/synth.hpp"

using namespace congestion;
using namespace congestion::ingest;

namespace {

const char* kHeader = "ID,Severity,Start_Time,Duration_Min,Junction,Crossing,Traffic_Signal,Precipitation_mm,Severe_Weather\n";

std::string row(const std::string& id, const std::string& sev, const std::string& time, const std::string& dur,
                const std::string& precip = "0") {
  return id + "," + sev + "," + time + "," + dur + ",True,False,False," + precip + ",False\n";
}

LoadResult load_text(const std::string& text, double max_reject = 0.05) {
  std::istringstream in(text);
  return load_records(in, Schema{}, {max_reject});
}

AccidentRecord rec(const std::string& id, const std::string& sev, double dur, int hour = 8) {
  AccidentRecord r;
  r.id = id;
  r.severity = sev;
  r.start_time = {2022, 3, 1, hour, 15};
  r.duration_min = dur;
  return r;
}

}  // namespace

TEST(Csv, QuotedFieldsAndCrlf) {
  const auto r = csv::parse_line("a,\"b,c\",\"say \"\"hi\"\"\"\r");
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[1], "b,c");
  EXPECT_EQ(r[2], "say \"hi\"");
  EXPECT_EQ(csv::escape("x,y"), "\"x,y\"");
}

TEST(Csv, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    EXPECT_EQ(std::stod(csv::format_double(v)), v);
  }
  EXPECT_EQ(csv::format_double(0.1), "0.1");
}

TEST(Hashing, StableDigestsAndNamedSeeds) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
  EXPECT_EQ(derive_seed(7, "automl/trial/1"), derive_seed(7, "automl/trial/1"));
  EXPECT_NE(derive_seed(7, "automl/trial/1"), derive_seed(7, "automl/trial/2"));
  EXPECT_NE(derive_seed(7, "x"), derive_seed(8, "x"));
}

TEST(LoadRecords, WellFormedRows) {
  const auto r = load_text(std::string(kHeader) + row("a", "Minor", "2022-01-01 07:15", "10") +
                           row("b", "Fatal", "2022-01-01 08:00", "20") + row("c", "Severe", "2022-01-02 17:45", "30"));
  EXPECT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.rejected, 0u);
  EXPECT_EQ(r.records[2].start_time.hour, 17);
  EXPECT_TRUE(r.records[0].junction);
}

TEST(LoadRecords, MalformedDurationIsRejectedAndLogged) {
  const auto r = load_text(std::string(kHeader) + row("a", "Minor", "2022-01-01 07:15", "10") +
                               row("b", "Minor", "2022-01-01 07:15", "abc") + row("c", "Minor", "2022-01-01 07:15", "5"),
                           0.5);
  EXPECT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.rejected, 1u);
  ASSERT_EQ(r.reject_reasons.size(), 1u);
  EXPECT_NE(r.reject_reasons[0].find("abc"), std::string::npos);
}

TEST(LoadRecords, RejectShareAboveThresholdIsDataError) {
  EXPECT_THROW(load_text(std::string(kHeader) + row("a", "Minor", "2022-01-01 07:15", "x") +
                         row("b", "Minor", "2022-01-01 07:15", "1")),
               DataError);
}

TEST(LoadRecords, MissingDeclaredColumnIsDataError) {
  EXPECT_THROW(load_text("ID,Severity\na,Minor\n"), DataError);
  EXPECT_THROW(load_records("/nonexistent/file.csv", Schema{}), DataError);
}

TEST(Apportion, ExactProportions) {
  EXPECT_EQ(apportion({80, 20}, 10), (std::vector<std::size_t>{8, 2}));
  EXPECT_EQ(apportion({1000, 600, 300, 100}, 1000), (std::vector<std::size_t>{500, 300, 150, 50}));
  EXPECT_THROW(apportion({0, 0}, 3), PreconditionError);
}

// Independent largest-remainder oracle using long double quotas; ties go to
// the lower index.
TEST(Apportion, MatchesLargestRemainderOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 6);
    std::vector<std::size_t> sizes;
    std::size_t total = 0;
    for (int i = 0; i < k; ++i) {
      sizes.push_back(1 + rng() % 500);
      total += sizes.back();
    }
    const std::size_t n = 1 + rng() % total;
    std::vector<std::size_t> expect(k);
    std::vector<std::pair<std::size_t, int>> rem;  // remainder numerator, index
    std::size_t given = 0;
    for (int i = 0; i < k; ++i) {
      expect[i] = n * sizes[i] / total;
      given += expect[i];
      rem.push_back({n * sizes[i] % total, i});
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t j = 0; given < n; ++j, ++given) ++expect[rem[j].second];
    EXPECT_EQ(apportion(sizes, n), expect);
  }
}

TEST(StratifiedSample, ProportionalAndDeterministic) {
  std::vector<AccidentRecord> pop;
  for (int i = 0; i < 80; ++i) pop.push_back(rec("m" + std::to_string(i), "Minor", 10));
  for (int i = 0; i < 20; ++i) pop.push_back(rec("f" + std::to_string(i), "Fatal", 10));
  const auto a = stratified_sample(pop, 10, {"Severity"}, 42, Schema{});
  const auto b = stratified_sample(pop, 10, {"Severity"}, 42, Schema{});
  std::map<std::string, int> counts;
  for (const auto& r : a) ++counts[r.severity];
  EXPECT_EQ(counts["Minor"], 8);
  EXPECT_EQ(counts["Fatal"], 2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, b[i].id);
}

TEST(StratifiedSample, ProportionsWithinOneOverN) {
  const auto data = synth::generate_accidents({3000, 0.4, 5});
  const auto schema = synth::synthetic_schema();
  for (std::size_t n : {37u, 250u, 999u}) {
    const auto s = stratified_sample(data.records, n, {"Severity"}, 9, schema);
    std::map<std::string, double> pop, got;
    for (const auto& r : data.records) pop[r.severity] += 1.0 / data.records.size();
    for (const auto& r : s) got[r.severity] += 1.0 / n;
    for (const auto& [k, p] : pop) EXPECT_LE(std::abs(got[k] - p), 1.0 / n + 1e-12) << k;
  }
}

TEST(StratifiedSample, Preconditions) {
  std::vector<AccidentRecord> pop = {rec("a", "Minor", 1), rec("b", "Minor", 2)};
  EXPECT_THROW(stratified_sample(pop, 3, {"Severity"}, 1, Schema{}), PreconditionError);
  EXPECT_THROW(stratified_sample({}, 1, {"Severity"}, 1, Schema{}), PreconditionError);
  EXPECT_THROW(stratified_sample(pop, 1, {"Nope"}, 1, Schema{}), PreconditionError);
}

TEST(Preprocessor, ScalerAndDictionary) {
  Schema schema;
  schema.extras = {{"Weather", ExtraKind::kCategorical}};
  std::vector<AccidentRecord> rs = {rec("a", "Minor", 1), rec("b", "Minor", 2), rec("c", "Minor", 3)};
  rs[0].categorical["Weather"] = "A";
  rs[1].categorical["Weather"] = "B";
  rs[2].categorical["Weather"] = "A";
  PreprocessConfig cfg;
  cfg.numeric = {"Duration_Min"};
  cfg.categorical = {"Weather"};
  const auto pre = fit_preprocessor(rs, schema, cfg);
  ASSERT_EQ(pre.numeric.size(), 1u);
  EXPECT_DOUBLE_EQ(pre.numeric[0].mean, 2.0);
  EXPECT_NEAR(pre.numeric[0].sd, std::sqrt(2.0 / 3.0), 1e-12);
  ASSERT_EQ(pre.categorical.size(), 1u);
  EXPECT_EQ(pre.categorical[0].states, (std::vector<std::string>{"A", "B"}));

  const auto fm = transform(pre, rs);
  ASSERT_EQ(fm.values.cols(), 3);
  EXPECT_NEAR(fm.values(1, 0), 0.0, 1e-15);  // record at the mean
  EXPECT_EQ(fm.values(0, 1), 1.0);
  EXPECT_EQ(fm.values(0, 2), 0.0);
}

TEST(Preprocessor, ConstantColumnKeepsUnitScale) {
  std::vector<AccidentRecord> rs = {rec("a", "Minor", 5), rec("b", "Minor", 5), rec("c", "Minor", 5)};
  PreprocessConfig cfg;
  cfg.numeric = {"Duration_Min"};
  const auto pre = fit_preprocessor(rs, Schema{}, cfg);
  EXPECT_EQ(pre.numeric[0].mean, 5.0);
  EXPECT_EQ(pre.numeric[0].sd, 1.0);
}

TEST(Preprocessor, UnseenStateMapsToZeros) {
  Schema schema;
  schema.extras = {{"Weather", ExtraKind::kCategorical}};
  std::vector<AccidentRecord> rs = {rec("a", "Minor", 1), rec("b", "Minor", 2)};
  rs[0].categorical["Weather"] = "A";
  rs[1].categorical["Weather"] = "B";
  PreprocessConfig cfg;
  cfg.categorical = {"Weather"};
  const auto pre = fit_preprocessor(rs, schema, cfg);
  auto odd = rs[0];
  odd.categorical["Weather"] = "Z";
  const auto fm = transform(pre, {odd});
  EXPECT_EQ(fm.values.row(0).sum(), 0.0);
  EXPECT_EQ(fm.unseen_states, 1u);
}

TEST(Preprocessor, InverseScalingRoundTrip) {
  const auto data = synth::generate_accidents({400, 0.4, 8});
  const auto schema = synth::synthetic_schema();
  PreprocessConfig cfg = PreprocessConfig::defaults();
  cfg.numeric.push_back("Temperature_F");
  const auto pre = fit_preprocessor(data.records, schema, cfg);
  const auto fm = transform(pre, data.records);
  const Matrix back = inverse_numeric(pre, fm);
  ASSERT_EQ(back.cols(), fm.values.cols());
  const auto col = [&](const std::string& name) {
    const auto it = std::find(fm.column_names.begin(), fm.column_names.end(), name);
    EXPECT_NE(it, fm.column_names.end()) << name;
    return static_cast<Eigen::Index>(it - fm.column_names.begin());
  };
  const auto dur = col("Duration_Min");
  const auto temp = col("Temperature_F");
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(back(r, dur), data.records[i].duration_min, 1e-9);
    EXPECT_NEAR(back(r, temp), data.records[i].numeric.at("Temperature_F"), 1e-9);
  }
  for (Eigen::Index c = 0; c < fm.values.cols(); ++c) {
    if (fm.column_kinds[c] == FeatureKind::kOneHot) EXPECT_TRUE((back.col(c).array() == fm.values.col(c).array()).all());
  }
}

TEST(Preprocessor, OneHotGroupsPartitionEachColumn) {
  const auto data = synth::generate_accidents({300, 0.4, 4});
  const auto pre = fit_preprocessor(data.records, synth::synthetic_schema(), PreprocessConfig::defaults());
  const auto fm = transform(pre, data.records);
  for (const auto& g : fm.groups) {
    if (g.kind != FeatureKind::kOneHot) continue;
    for (Eigen::Index r = 0; r < fm.values.rows(); ++r) {
      EXPECT_EQ(fm.values.row(r).segment(static_cast<Eigen::Index>(g.first_column), static_cast<Eigen::Index>(g.width)).sum(),
                1.0);
    }
  }
  // Pure: identical records give identical rows.
  const auto again = transform(pre, data.records);
  EXPECT_TRUE((again.values.array() == fm.values.array()).all());
}

TEST(Preprocessor, JsonRoundTripKeepsFingerprint) {
  const auto data = synth::generate_accidents({200, 0.4, 4});
  const auto pre = fit_preprocessor(data.records, synth::synthetic_schema(), PreprocessConfig::defaults());
  const auto back = Preprocessor::from_json(pre.to_json());
  EXPECT_EQ(back.fingerprint(), pre.fingerprint());
  EXPECT_TRUE((transform(back, data.records).values.array() == transform(pre, data.records).values.array()).all());
}

TEST(Discretize, QuantileEdgesOnOneToHundred) {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  const auto e = quantile_edges(v, 4);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_DOUBLE_EQ(e[0], 25.5);
  EXPECT_DOUBLE_EQ(e[1], 50.5);
  EXPECT_DOUBLE_EQ(e[2], 75.5);
}

TEST(Discretize, EdgeValueGoesToHigherBin) {
  Discretizer d;
  d.edges = {25.5, 50.5, 75.5};
  d.labels = {"a", "b", "c", "d"};
  EXPECT_EQ(d.bin(25.5), 1u);
  EXPECT_EQ(d.bin(25.49), 0u);
  EXPECT_EQ(d.bin(75.5), 3u);
}

TEST(Discretize, DurationStatesBecomeEvidenceStates) {
  const auto data = synth::generate_accidents({500, 0.4, 6});
  const auto pre = fit_preprocessor(data.records, synth::synthetic_schema(), PreprocessConfig::defaults());
  const auto res = discretize(pre, data.records);
  const auto& v = res.table.variable("Accident_Duration");
  EXPECT_GE(v.state_index("moderate"), 0);
  EXPECT_GE(res.table.variable("Peak_Hours").state_index("AM Peak"), 0);
  EXPECT_EQ(res.table.rows(), data.records.size());
  EXPECT_EQ(res.clamped, 0u);
}

TEST(Discretize, OutOfRangeValuesAreClamped) {
  std::vector<AccidentRecord> rs;
  for (int i = 1; i <= 20; ++i) rs.push_back(rec("r" + std::to_string(i), "Minor", i));
  PreprocessConfig cfg;
  cfg.discretize = {{"Duration_Min", "Accident_Duration", 2, {"short", "long"}, {}}};
  const auto pre = fit_preprocessor(rs, Schema{}, cfg);
  const auto res = discretize(pre, {rec("x", "Minor", 500), rec("y", "Minor", -3)});
  EXPECT_EQ(res.clamped, 2u);
  EXPECT_EQ(res.table.at(0, 0), 1);
  EXPECT_EQ(res.table.at(1, 0), 0);
}

TEST(HourlyHistogram, SingleRecordAndUniform) {
  auto h = hourly_histogram({rec("a", "Minor", 1, 7)});
  for (int i = 0; i < 24; ++i) EXPECT_EQ(h[i], i == 7 ? 1u : 0u);

  std::vector<AccidentRecord> rs;
  for (int i = 0; i < 2400; ++i) rs.push_back(rec(std::to_string(i), "Minor", 1, i % 24));
  h = hourly_histogram(rs);
  std::size_t sum = 0;
  for (auto c : h) {
    EXPECT_EQ(c, 100u);
    sum += c;
  }
  EXPECT_EQ(sum, rs.size());
}

TEST(PeakHours, Windows) {
  EXPECT_EQ(peak_hours_state(7), "AM Peak");
  EXPECT_EQ(peak_hours_state(17), "PM Peak");
  EXPECT_EQ(peak_hours_state(12), "OFF Peak");
  EXPECT_EQ(peak_hours_state(2), "OFF Peak");
}

TEST(RecordsCsv, WriteThenLoadIsLossless) {
  const auto data = synth::generate_accidents({150, 0.4, 12});
  const auto schema = synth::synthetic_schema();
  std::ostringstream out;
  write_records_csv(out, schema, data.records);
  std::istringstream in(out.str());
  const auto back = load_records(in, schema, {0.0});
  ASSERT_EQ(back.records.size(), data.records.size());
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    EXPECT_EQ(back.records[i].id, data.records[i].id);
    EXPECT_EQ(back.records[i].duration_min, data.records[i].duration_min);
    EXPECT_EQ(back.records[i].numeric, data.records[i].numeric);
    EXPECT_EQ(back.records[i].start_time.to_string(), data.records[i].start_time.to_string());
  }
}
