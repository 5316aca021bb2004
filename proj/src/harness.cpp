#include "evoprobe/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "evoprobe/baselines.hpp"

namespace evoprobe {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(std::string_view s, const std::string& what) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw CorruptTrace("bad " + what + " '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out + "\"";
}

void write_row(std::ostream& out, const TraceRecord& r) {
  out << r.query_index << ',' << fmt(r.l2) << ',' << fmt(r.mse) << ',' << (r.accepted ? 1 : 0) << ','
      << fmt(r.sigma) << ',' << fmt(r.mu) << '\n';
}

class TeeSink final : public TraceSink {
 public:
  TeeSink(AttackTrace& trace, TraceSink* next) : trace_(trace), next_(next) {}
  void on_start(const AttackTrace& header) override {
    trace_ = header;
    if (next_) next_->on_start(header);
  }
  void on_record(const TraceRecord& record) override {
    trace_.records.push_back(record);
    if (next_) next_->on_record(record);
  }

 private:
  AttackTrace& trace_;
  TraceSink* next_;
};

double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string check_invariants(const RunOutcome& run, const Oracle& oracle, const AdversarialCriterion& criterion,
                             const Point& final_point, const Point& original, bool verify_final) {
  const AttackTrace& t = run.trace;
  double last = t.initial_l2;
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    const TraceRecord& r = t.records[i];
    if (r.query_index != i + 1) return "trace query indices are not consecutive";
    if (r.accepted ? r.l2 > last : r.l2 != last) return "trace distance not monotone at query " + std::to_string(i + 1);
    last = r.l2;
  }
  if (oracle.calls() != run.init_queries + run.attack_queries) return "oracle calls differ from counted queries";
  if (run.attack_queries != t.records.size()) return "trace length differs from attack queries";
  const double d = l2_distance(final_point, original);
  if (std::abs(d - run.final_l2) > 1e-9 * std::max(1.0, d)) return "final distance disagrees with the trace";
  if (verify_final) {
    QueryLedger audit(1);
    if (!is_adversarial(criterion, oracle.query(final_point, audit))) return "final point is not adversarial";
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------

CsvTraceWriter::CsvTraceWriter(std::ostream& out) : out_(out) {}

void CsvTraceWriter::on_start(const AttackTrace& header) {
  out_ << kTraceHeader << '\n';
  write_row(out_, TraceRecord{0, header.initial_l2, header.initial_mse, false, 0.0, 0.0});
}

void CsvTraceWriter::on_record(const TraceRecord& record) { write_row(out_, record); }

std::string trace_to_csv(const AttackTrace& trace) {
  std::ostringstream out;
  CsvTraceWriter w(out);
  w.on_start(trace);
  for (const auto& r : trace.records) w.on_record(r);
  return out.str();
}

AttackTrace parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw CorruptTrace("missing trace header");
  AttackTrace trace;
  bool have_initial = false;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw CorruptTrace("line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields");
    TraceRecord r;
    r.query_index = parse_number<std::uint64_t>(f[0], "query_index");
    r.l2 = parse_number<double>(f[1], "l2");
    r.mse = parse_number<double>(f[2], "mse");
    if (f[3] != "0" && f[3] != "1") throw CorruptTrace("bad accepted flag on line " + std::to_string(line_no));
    r.accepted = f[3] == "1";
    r.sigma = parse_number<double>(f[4], "sigma");
    r.mu = parse_number<double>(f[5], "mu");
    if (!have_initial) {
      if (r.query_index != 0) throw CorruptTrace("first trace row must have query_index 0");
      trace.initial_l2 = r.l2;
      trace.initial_mse = r.mse;
      have_initial = true;
      continue;
    }
    const std::uint64_t prev = trace.records.empty() ? 0 : trace.records.back().query_index;
    if (r.query_index <= prev) throw CorruptTrace("query_index not increasing on line " + std::to_string(line_no));
    trace.records.push_back(r);
  }
  if (!have_initial) throw CorruptTrace("trace has no initial row");
  return trace;
}

AttackTrace read_trace_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptTrace("cannot open trace " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_trace_csv(buf.str());
  } catch (const CorruptTrace& e) {
    throw CorruptTrace(path.string() + ": " + e.what());
  }
}

double mse_at(const AttackTrace& trace, std::uint64_t budget) {
  const auto it = std::upper_bound(trace.records.begin(), trace.records.end(), budget,
                                   [](std::uint64_t b, const TraceRecord& r) { return b < r.query_index; });
  return it == trace.records.begin() ? trace.initial_mse : std::prev(it)->mse;
}

// ---------------------------------------------------------------------------

bool MatrixResult::all_completed() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return r.completed; });
}

bool MatrixResult::all_invariants_ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return r.invariants_ok; });
}

std::vector<SummaryRow> summarize(const std::string& oracle, const std::vector<Method>& methods,
                                  const std::vector<std::uint64_t>& budgets, const std::vector<RunOutcome>& runs) {
  std::vector<SummaryRow> rows;
  for (Method m : methods) {
    for (std::uint64_t b : budgets) {
      SummaryRow row;
      row.method = to_string(m);
      row.oracle = oracle;
      row.budget = b;
      std::vector<double> values;
      for (const auto& r : runs) {
        if (r.method != m) continue;
        if (!r.completed) {
          ++row.failed;
          continue;
        }
        values.push_back(mse_at(r.trace, b));
      }
      row.runs = values.size();
      row.mean_mse = mean_of(values);
      row.median_mse = median_of(values);
      row.max_mse = values.empty() ? std::nan("") : *std::max_element(values.begin(), values.end());
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean_mse) * (v - row.mean_mse);
      row.std_mse = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1))
                                      : (values.empty() ? std::nan("") : 0.0);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "method,oracle,budget,runs,failed,mean_mse,median_mse,std_mse,max_mse\n";
  for (const auto& r : rows) {
    out << r.method << ',' << csv_escape(r.oracle) << ',' << r.budget << ',' << r.runs << ',' << r.failed << ','
        << fmt(r.mean_mse) << ',' << fmt(r.median_mse) << ',' << fmt(r.std_mse) << ',' << fmt(r.max_mse) << '\n';
  }
  return out.str();
}

RunOutcome run_cell(const ExperimentConfig& config, Method method, std::uint64_t seed, const fs::path& trace_path) {
  RunOutcome out;
  out.method = method;
  out.seed = seed;
  out.trace_path = trace_path;
  const auto start = std::chrono::steady_clock::now();

  std::ofstream file;
  std::optional<CsvTraceWriter> writer;
  if (!trace_path.empty()) {
    file.open(trace_path, std::ios::binary | std::ios::trunc);
    if (!file) {
      out.error = "cannot write " + trace_path.string();
      return out;
    }
    writer.emplace(file);
  }
  TeeSink sink(out.trace, writer ? &*writer : nullptr);

  try {
    const Point original = config.original_point();
    const auto oracle = build_oracle(config.oracle, original);
    const AdversarialCriterion criterion = config.parsed_criterion();
    const InitMode init = config.init_mode(original);
    Rng rng(seed);
    AttackResult result;
    switch (method) {
      case Method::Evolutionary:
        result = run_evolutionary(*oracle, criterion, original, config.evo_params(), init, rng, &sink);
        break;
      case Method::Boundary:
        result = run_boundary(*oracle, criterion, original, config.boundary, config.max_budget(), init, rng, &sink);
        break;
      case Method::UnbiasedEs:
        result = run_unbiased_es(*oracle, criterion, original, config.max_budget(), init, rng, &sink,
                                 config.evo.sigma_factor);
        break;
    }
    out.completed = true;
    out.trace = result.trace;
    out.init_queries = result.init_queries;
    out.attack_queries = result.attack_queries;
    out.final_l2 = result.final_l2();
    out.final_mse = result.final_mse();
    out.error = check_invariants(out, *oracle, criterion, result.final_point, original, config.oracle.type != "remote");
    out.invariants_ok = out.error.empty();
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

MatrixResult run_matrix(const ExperimentConfig& config, const ProgressFn& progress) {
  config.validate();
  MatrixResult result;
  result.directory = config.output_dir;
  fs::create_directories(config.output_dir / "traces");
  save_config(config.output_dir / "config.json", config);

  std::vector<std::pair<Method, std::uint64_t>> cells;
  for (Method m : config.methods) {
    for (std::uint64_t s : config.seeds) cells.emplace_back(m, s);
  }
  result.runs.resize(cells.size());

  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto [method, seed] = cells[i];
      const fs::path trace = config.output_dir / "traces" / (to_string(method) + "_seed" + std::to_string(seed) + ".csv");
      result.runs[i] = run_cell(config, method, seed, trace);
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(result.runs[i]);
      }
    }
  };
  const unsigned threads = std::min<std::size_t>(config.workers, cells.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  result.summary = summarize(config.oracle.label(), config.methods, config.budgets, result.runs);
  std::ofstream(config.output_dir / "summary.csv", std::ios::binary) << summary_to_csv(result.summary);

  std::ofstream runs(config.output_dir / "runs.csv", std::ios::binary);
  runs << "method,seed,status,invariants_ok,init_queries,attack_queries,final_l2,final_mse,wall_seconds,error\n";
  for (const auto& r : result.runs) {
    runs << to_string(r.method) << ',' << r.seed << ',' << (r.completed ? "completed" : "failed") << ','
         << (r.invariants_ok ? "true" : "false") << ',' << r.init_queries << ',' << r.attack_queries << ','
         << fmt(r.final_l2) << ',' << fmt(r.final_mse) << ',' << fmt(r.wall_seconds) << ',' << csv_escape(r.error)
         << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------

AblationReport ablation_report(const ExperimentConfig& base, const ProgressFn& progress) {
  base.validate();
  AblationReport report;
  report.low_confidence = base.seeds.size() < kConfidentSeeds;
  const std::uint64_t budget = base.max_budget();

  auto run_setting = [&](const std::string& setting, const EvoHyperParams& evo) {
    ExperimentConfig c = base;
    c.methods = {Method::Evolutionary};
    c.evo = evo;
    c.output_dir = base.output_dir / "ablation" / setting;
    const MatrixResult m = run_matrix(c, progress);
    std::map<std::uint64_t, double> finals;
    for (const auto& r : m.runs) {
      if (r.completed && r.invariants_ok) finals[r.seed] = mse_at(r.trace, budget);
      else report.all_completed = false;
    }
    std::vector<double> values;
    for (const auto& [_, v] : finals) values.push_back(v);
    AblationRow row{setting, evo.search_shape ? to_string(*evo.search_shape) : "full", values.size(),
                    median_of(values), mean_of(values)};
    return std::make_pair(row, finals);
  };

  std::map<std::string, std::map<std::uint64_t, double>> per_seed;
  auto add = [&](const char* setting, bool cma, bool scs, ScsWeighting w) {
    EvoHyperParams p = base.evo;
    p.cma_enabled = cma;
    p.scs_enabled = scs;
    p.scs_weighting = w;
    auto [row, finals] = run_setting(setting, p);
    report.settings.push_back(row);
    per_seed[setting] = std::move(finals);
  };
  add(kSettingNoCmaNoScs, false, false, ScsWeighting::Covariance);
  add(kSettingCmaNoScs, true, false, ScsWeighting::Covariance);
  add(kSettingCmaScsCovariance, true, true, ScsWeighting::Covariance);
  add(kSettingCmaScsUniform, true, true, ScsWeighting::Uniform);

  for (const GridShape& s : base.m_sweep) {
    EvoHyperParams p = base.evo;
    p.search_shape = s;
    p.k.reset();
    const std::string label = "m-" + to_string(s);
    report.m_sweep.push_back(run_setting(label, p).first);
  }

  auto compare = [&](const char* better, const char* worse) {
    PairedComparison pc{better, worse, 0, 0};
    for (const auto& [seed, v] : per_seed[better]) {
      const auto it = per_seed[worse].find(seed);
      if (it == per_seed[worse].end()) continue;
      ++pc.seeds;
      if (v < it->second) ++pc.wins;
    }
    report.pairs.push_back(pc);
  };
  compare(kSettingCmaScsCovariance, kSettingNoCmaNoScs);
  compare(kSettingCmaScsCovariance, kSettingCmaScsUniform);
  compare(kSettingCmaScsCovariance, kSettingCmaNoScs);
  compare(kSettingCmaNoScs, kSettingNoCmaNoScs);

  std::ofstream(base.output_dir / "ablation.csv", std::ios::binary) << ablation_to_csv(report);
  return report;
}

std::string ablation_to_csv(const AblationReport& report) {
  std::ostringstream out;
  const char* confidence = report.low_confidence ? "low" : "normal";
  out << "kind,setting,search_shape,runs,median_mse,mean_mse,confidence\n";
  for (const auto& r : report.settings) {
    out << "setting," << r.setting << ',' << r.search_shape << ',' << r.runs << ',' << fmt(r.median_mse) << ','
        << fmt(r.mean_mse) << ',' << confidence << '\n';
  }
  for (const auto& r : report.m_sweep) {
    out << "m_sweep," << r.setting << ',' << r.search_shape << ',' << r.runs << ',' << fmt(r.median_mse) << ','
        << fmt(r.mean_mse) << ',' << confidence << '\n';
  }
  out << "\nbetter,worse,wins,seeds\n";
  for (const auto& p : report.pairs) out << p.better << ',' << p.worse << ',' << p.wins << ',' << p.seeds << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

StepCurve step_curve(const AttackTrace& trace) {
  StepCurve curve{{0, trace.initial_mse}};
  for (const auto& r : trace.records) {
    if (r.accepted) curve.emplace_back(r.query_index, r.mse);
  }
  return curve;
}

double evaluate_step(const StepCurve& curve, std::uint64_t query) {
  if (curve.empty()) throw std::invalid_argument("empty curve");
  const auto it = std::upper_bound(curve.begin(), curve.end(), query,
                                   [](std::uint64_t q, const auto& p) { return q < p.first; });
  return it == curve.begin() ? curve.front().second : std::prev(it)->second;
}

StepCurve mean_curve(const std::vector<StepCurve>& curves) {
  if (curves.empty()) return {};
  std::set<std::uint64_t> grid;
  for (const auto& c : curves) {
    for (const auto& [q, _] : c) grid.insert(q);
  }
  StepCurve out;
  for (std::uint64_t q : grid) {
    double s = 0.0;
    for (const auto& c : curves) s += evaluate_step(c, q);
    out.emplace_back(q, s / static_cast<double>(curves.size()));
  }
  return out;
}

std::vector<fs::path> curve_export(const fs::path& run_dir, const fs::path& out_dir) {
  const fs::path traces = run_dir / "traces";
  if (!fs::is_directory(traces)) throw CorruptTrace("no traces directory in " + run_dir.string());
  static const std::regex name_re(R"(^(.+)_seed(\d+)\.csv$)");
  std::map<std::string, std::map<std::uint64_t, StepCurve>> by_method;
  for (const auto& entry : fs::directory_iterator(traces)) {
    const std::string fname = entry.path().filename().string();
    std::smatch m;
    if (!entry.is_regular_file() || !std::regex_match(fname, m, name_re)) continue;
    by_method[m[1].str()][std::stoull(m[2].str())] = step_curve(read_trace_csv(entry.path()));
  }
  if (by_method.empty()) throw CorruptTrace("no trace files in " + traces.string());

  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& [method, runs] : by_method) {
    const fs::path path = out_dir / ("curve_" + method + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "series,query_index,mse\n";
    std::vector<StepCurve> curves;
    for (const auto& [seed, curve] : runs) {
      for (const auto& [q, v] : curve) out << "seed" << seed << ',' << q << ',' << fmt(v) << '\n';
      curves.push_back(curve);
    }
    for (const auto& [q, v] : mean_curve(curves)) out << "mean," << q << ',' << fmt(v) << '\n';
    written.push_back(path);
  }
  return written;
}

}  // namespace evoprobe
