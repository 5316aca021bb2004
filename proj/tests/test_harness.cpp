#include "doctest.h"

#include <fstream>
#include <sstream>

#include "evoprobe/harness.hpp"
#include "evoprobe/stub_server.hpp"

using namespace evoprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("evoprobe_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Halfspace impersonation on a 10x10 grid from the origin. Start at
// distance 2, optimum at distance 1.
ExperimentConfig halfspace_config(const fs::path& out) {
  ExperimentConfig c;
  c.name = "halfspace";
  c.oracle.type = "halfspace";
  c.oracle.shape = GridShape{10, 10, 1};
  c.oracle.params = json{{"normal", {{"kind", "basis"}, {"index", 0}}}, {"offset", 1.0}};
  c.criterion = "impersonate-binary";
  c.original.kind = "fill";
  c.original.value = 0.0;
  c.init.mode = "given";
  VectorSource start;
  start.kind = "basis";
  start.scale = 2.0;
  c.init.point = start;
  c.evo.search_shape = GridShape{5, 5, 1};
  c.evo.k = 5;
  c.budgets = {100, 500};
  c.seeds = {1, 2, 3};
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("config round trip") {
  ExperimentConfig c = halfspace_config("/tmp/x");
  c.methods = {Method::Evolutionary, Method::Boundary, Method::UnbiasedEs};
  c.m_sweep = {GridShape{2, 2, 1}, GridShape{10, 10, 1}};
  c.evo.scs_weighting = ScsWeighting::Uniform;
  c.true_label = 3;
  c.workers = 2;
  c.oracle.bounds = Bounds{-1.0, 2.0};

  const json first = c;
  const ExperimentConfig parsed = first.get<ExperimentConfig>();
  const json second = parsed;
  CHECK(first == second);
  CHECK(second.get<ExperimentConfig>().m_sweep == c.m_sweep);
  CHECK(parsed.init.point->scale == 2.0);

  ExperimentConfig remote;
  remote.oracle.type = "remote";
  remote.oracle.dimension = 4;
  remote.oracle.params = json{{"endpoint_url", "http://127.0.0.1:1/score"}, {"threshold", 80}};
  const json r1 = json(remote).get<ExperimentConfig>();
  CHECK(json(r1.get<ExperimentConfig>()) == r1);
  CHECK(r1.at("/oracle/params/max_retries"_json_pointer) == 3);
}

TEST_CASE("config parsing rejects unknown keys and missing schema") {
  json j = halfspace_config("/tmp/x");
  j["evo"]["c_covv"] = 0.1;
  CHECK_THROWS_AS(j.get<ExperimentConfig>(), ConfigError);

  json k = halfspace_config("/tmp/x");
  k.erase("schema_version");
  CHECK_THROWS_AS(k.get<ExperimentConfig>(), ConfigError);
}

TEST_CASE("validation lists every problem") {
  ExperimentConfig c = halfspace_config("/tmp/x");
  CHECK(c.problems().empty());
  c.budgets = {500, 100};
  c.seeds.clear();
  c.criterion = "dodge";
  c.schema_version = 7;
  c.evo.c_c = 2.0;
  const auto issues = c.problems();
  CHECK(issues.size() == 5);
  CHECK_THROWS_AS(c.validate(), ConfigError);

  ExperimentConfig d = halfspace_config("/tmp/x");
  d.m_sweep = {GridShape{4, 4, 3}};
  CHECK(d.problems().size() == 1);
  d.m_sweep.clear();
  d.oracle.params.erase("offset");
  CHECK(d.problems().size() == 1);
}

TEST_CASE("overrides") {
  json j = halfspace_config("/tmp/x");
  apply_override(j, "evo.c_cov", "0.01");
  apply_override(j, "/budgets", "[10,20,30]");
  apply_override(j, "output_dir", "elsewhere");
  apply_override(j, "init.point.scale", "3");
  const auto c = j.get<ExperimentConfig>();
  CHECK(c.evo.c_cov == 0.01);
  CHECK(c.budgets == std::vector<std::uint64_t>{10, 20, 30});
  CHECK(c.output_dir == "elsewhere");
  CHECK(c.init.point->scale == 3.0);
}

TEST_CASE("vector sources") {
  VectorSource v;
  v.kind = "blocks";
  v.count = 2;
  v.value = 0.1;
  v.rest = 1.0;
  CHECK(v.materialize(4, std::nullopt) == std::vector<double>{0.1, 0.1, 1.0, 1.0});

  v = VectorSource{};
  v.kind = "uniform";
  v.seed = 4;
  v.low = 0.25;
  v.high = 0.75;
  const auto a = v.materialize(50, std::nullopt);
  CHECK(a == v.materialize(50, std::nullopt));
  for (double x : a) CHECK((x >= 0.25 && x < 0.75));

  v = VectorSource{};
  v.kind = "smooth";
  v.grid = GridShape{2, 2, 3};
  v.seed = 1;
  const auto s = v.materialize(48, GridShape{4, 4, 3});
  CHECK(s.size() == 48);
  CHECK_THROWS_AS(v.materialize(48, std::nullopt), ConfigError);

  v = VectorSource{};
  v.kind = "inline";
  v.values = {1, 2};
  CHECK_THROWS_AS(v.materialize(3, std::nullopt), ConfigError);
  CHECK(json(v).get<VectorSource>().values == v.values);
  CHECK(json::parse("[1,2,3]").get<VectorSource>().kind == "inline");
}

TEST_CASE("halfspace margin places the boundary at that distance") {
  ExperimentConfig c;
  c.oracle.type = "halfspace";
  c.oracle.dimension = 30;
  c.oracle.params = json{{"normal", {{"kind", "normal"}, {"seed", 3}}}, {"margin", 0.4}};
  c.original.kind = "uniform";
  c.original.seed = 5;
  const Point x = c.original_point();
  const auto oracle = build_oracle(c.oracle, x);
  const auto d = analytic_min_distortion(*oracle, x, DodgeBinary{});
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("trace CSV is exact") {
  AttackTrace t;
  t.initial_l2 = 2.0;
  t.initial_mse = 0.04;
  t.records = {{1, 2.0, 0.04, false, 0.02, 0.1}, {2, 1.0 / 3.0, 1.0 / 900.0, true, 0.02, 0.0818}};
  const std::string csv = trace_to_csv(t);
  CHECK(csv.rfind("query_index,l2,mse,accepted,sigma,mu\n0,2,0.04,0,0,0\n", 0) == 0);
  CHECK(parse_trace_csv(csv) == t);

  CHECK_THROWS_AS(parse_trace_csv("l2,mse\n"), CorruptTrace);
  CHECK_THROWS_AS(parse_trace_csv(std::string(kTraceHeader) + "\n0,1,1,0,0,0\n2,1,1,0,0,0\n1,1,1,0,0,0\n"),
                  CorruptTrace);
  CHECK_THROWS_AS(parse_trace_csv(std::string(kTraceHeader) + "\n0,1,x,0,0,0\n"), CorruptTrace);
}

TEST_CASE("checkpoint reading") {
  AttackTrace t;
  t.initial_mse = 1.0;
  t.records = {{1, 0, 1.0, false, 0, 0}, {2, 0, 0.5, true, 0, 0}, {3, 0, 0.5, false, 0, 0}, {4, 0, 0.2, true, 0, 0}};
  CHECK(mse_at(t, 0) == 1.0);
  CHECK(mse_at(t, 1) == 1.0);
  CHECK(mse_at(t, 2) == 0.5);
  CHECK(mse_at(t, 3) == 0.5);
  CHECK(mse_at(t, 100) == 0.2);
}

TEST_CASE("step curves") {
  AttackTrace t;
  t.initial_mse = 0.9;
  for (std::uint64_t q = 1; q <= 12; ++q) {
    const bool acc = q == 3 || q == 10;
    const double mse = q < 3 ? 0.9 : (q < 10 ? 0.5 : 0.2);
    t.records.push_back({q, 0, mse, acc, 0, 0});
  }
  const StepCurve c = step_curve(t);
  CHECK(c == StepCurve{{0, 0.9}, {3, 0.5}, {10, 0.2}});
  CHECK(evaluate_step(c, 2) == 0.9);
  CHECK(evaluate_step(c, 3) == 0.5);
  CHECK(evaluate_step(c, 9) == 0.5);
  CHECK(evaluate_step(c, 10) == 0.2);
  CHECK(evaluate_step(c, 1000) == 0.2);

  AttackTrace flat;
  flat.initial_mse = 0.3;
  flat.records = {{1, 0, 0.3, false, 0, 0}};
  CHECK(step_curve(flat) == StepCurve{{0, 0.3}});

  CHECK(mean_curve({c, c}) == c);
  const StepCurve m = mean_curve({c, step_curve(flat)});
  CHECK(m == StepCurve{{0, 0.6}, {3, 0.4}, {10, 0.25}});
}

TEST_CASE("matrix bookkeeping") {
  const fs::path out = scratch_dir("matrix");
  ExperimentConfig c = halfspace_config(out);
  const MatrixResult r = run_matrix(c);
  CHECK(r.all_completed());
  CHECK(r.all_invariants_ok());
  REQUIRE(r.runs.size() == 3);
  for (std::uint64_t s : c.seeds) CHECK(fs::exists(out / "traces" / ("evolutionary_seed" + std::to_string(s) + ".csv")));
  CHECK(fs::exists(out / "runs.csv"));
  CHECK(fs::exists(out / "config.json"));
  CHECK(load_config(out / "config.json").seeds == c.seeds);
  REQUIRE(r.summary.size() == 2);
  CHECK(r.summary[0].budget == 100);
  CHECK(r.summary[1].budget == 500);
  CHECK(r.summary[0].runs == 3);

  // checkpoint distortions never grow with budget
  for (const auto& run : r.runs) CHECK(mse_at(run.trace, 500) <= mse_at(run.trace, 100));
  CHECK(r.summary[1].median_mse <= r.summary[0].median_mse);

  // the summary is recomputable from the trace files alone
  std::vector<RunOutcome> reread;
  for (std::uint64_t s : c.seeds) {
    RunOutcome o;
    o.completed = true;
    o.seed = s;
    o.trace = read_trace_csv(out / "traces" / ("evolutionary_seed" + std::to_string(s) + ".csv"));
    reread.push_back(o);
  }
  CHECK(summary_to_csv(summarize("halfspace", c.methods, c.budgets, reread)) == slurp(out / "summary.csv"));

  // byte-identical on rerun, also with several workers
  const std::string first = slurp(out / "summary.csv");
  const std::string trace = slurp(out / "traces" / "evolutionary_seed2.csv");
  c.workers = 3;
  run_matrix(c);
  CHECK(slurp(out / "summary.csv") == first);
  CHECK(slurp(out / "traces" / "evolutionary_seed2.csv") == trace);
  fs::remove_all(out);
}

TEST_CASE("all three methods in one matrix") {
  const fs::path out = scratch_dir("methods");
  ExperimentConfig c = halfspace_config(out);
  c.methods = {Method::Evolutionary, Method::Boundary, Method::UnbiasedEs};
  c.seeds = {0};
  const MatrixResult r = run_matrix(c);
  CHECK(r.all_completed());
  CHECK(r.all_invariants_ok());
  CHECK(r.summary.size() == 6);
  fs::remove_all(out);
}

TEST_CASE("disabling CMA keeps the step ratio fixed") {
  const fs::path out = scratch_dir("nocma");
  ExperimentConfig c = halfspace_config(out);
  c.evo.cma_enabled = false;
  c.seeds = {4};
  const MatrixResult r = run_matrix(c);
  const AttackTrace t = read_trace_csv(out / "traces" / "evolutionary_seed4.csv");
  double prev = t.initial_l2;
  for (const auto& rec : t.records) {
    CHECK(rec.sigma / prev == doctest::Approx(0.01).epsilon(1e-12));
    prev = rec.l2;
  }
  CHECK(r.runs[0].invariants_ok);
  fs::remove_all(out);
}

TEST_CASE("failed cells do not stop the matrix") {
  const fs::path out = scratch_dir("failures");
  ExperimentConfig c;
  c.oracle.type = "halfspace";
  c.oracle.shape = GridShape{2, 2, 1};
  c.oracle.bounds = Bounds{};
  c.oracle.params = json{{"normal", {{"kind", "basis"}, {"index", 0}}}, {"offset", 0.5}};
  c.criterion = "dodge-binary";
  c.original.value = 0.9;
  c.init.max_attempts = 1;  // half of the seeds find no start
  c.budgets = {50};
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  c.output_dir = out;
  const MatrixResult r = run_matrix(c);
  std::size_t failed = 0;
  for (const auto& run : r.runs) failed += !run.completed;
  CHECK(failed > 0);
  CHECK(failed < 10);
  CHECK_FALSE(r.all_completed());
  CHECK(r.summary[0].failed == failed);
  CHECK(r.summary[0].runs == 10 - failed);
  const std::string runs_csv = slurp(out / "runs.csv");
  CHECK(runs_csv.find("failed") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("remote failure aborts the run but keeps its trace") {
  StubOptions o;
  o.score = [](const std::vector<double>& x) { return x[0] >= 1.0 ? 95.0 : 10.0; };
  o.fail_after = 20;
  StubServer stub(o);

  const fs::path out = scratch_dir("remote");
  ExperimentConfig c = halfspace_config(out);
  c.oracle.params = json{{"endpoint_url", stub.url()}, {"rate_limit", 1000}, {"max_retries", 1}, {"backoff_base_ms", 1}};
  c.oracle.type = "remote";
  c.seeds = {0};
  const MatrixResult r = run_matrix(c);
  REQUIRE(r.runs.size() == 1);
  CHECK_FALSE(r.runs[0].completed);
  CHECK(r.runs[0].error.find("failed after 2 attempts") != std::string::npos);
  const AttackTrace t = read_trace_csv(out / "traces" / "evolutionary_seed0.csv");
  CHECK(t.records.size() == 19);  // one init query, then 19 attack queries
  CHECK(r.runs[0].trace.records == t.records);
  CHECK(r.runs[0].trace.initial_l2 == t.initial_l2);
  fs::remove_all(out);
}

TEST_CASE("ablation report") {
  const fs::path out = scratch_dir("ablation");
  ExperimentConfig c = halfspace_config(out);
  c.budgets = {300};
  c.seeds = {0, 1};
  c.m_sweep = {GridShape{2, 2, 1}, GridShape{10, 10, 1}};
  const AblationReport rep = ablation_report(c);
  CHECK(rep.low_confidence);
  CHECK(rep.all_completed);
  REQUIRE(rep.settings.size() == 4);
  CHECK(rep.settings[0].setting == kSettingNoCmaNoScs);
  CHECK(rep.settings[2].setting == kSettingCmaScsCovariance);
  REQUIRE(rep.m_sweep.size() == 2);
  CHECK(rep.m_sweep[1].search_shape == "10x10x1");
  for (const auto& p : rep.pairs) CHECK(p.seeds == 2);
  CHECK(fs::exists(out / "ablation.csv"));
  CHECK(fs::exists(out / "ablation" / kSettingCmaScsUniform / "summary.csv"));

  ExperimentConfig single = c;
  single.seeds = {0};
  single.m_sweep.clear();
  const AblationReport one = ablation_report(single);
  CHECK(one.low_confidence);
  CHECK(ablation_to_csv(one).find(",low\n") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("curve export") {
  const fs::path out = scratch_dir("curves");
  ExperimentConfig c = halfspace_config(out);
  c.methods = {Method::Evolutionary, Method::UnbiasedEs};
  c.seeds = {0, 1};
  run_matrix(c);
  const auto files = curve_export(out, out / "curves");
  REQUIRE(files.size() == 2);
  const std::string text = slurp(out / "curves" / "curve_evolutionary.csv");
  CHECK(text.rfind("series,query_index,mse\nseed0,0,", 0) == 0);
  CHECK(text.find("\nmean,0,") != std::string::npos);

  CHECK_THROWS_AS(curve_export(out / "nowhere", out / "c2"), CorruptTrace);
  std::ofstream(out / "traces" / "evolutionary_seed9.csv") << "garbage\n";
  CHECK_THROWS_AS(curve_export(out, out / "c3"), CorruptTrace);
  fs::remove_all(out);
}
