#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "evoprobe/config.hpp"
#include "evoprobe/evo_attack.hpp"

namespace evoprobe {

class CorruptTrace : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceHeader = "query_index,l2,mse,accepted,sigma,mu";

/// Streams records to a CSV as they arrive, so an aborted run still leaves
/// its partial trace. Row 0 holds the initial point.
class CsvTraceWriter final : public TraceSink {
 public:
  explicit CsvTraceWriter(std::ostream& out);
  void on_start(const AttackTrace& header) override;
  void on_record(const TraceRecord& record) override;

 private:
  std::ostream& out_;
};

std::string trace_to_csv(const AttackTrace& trace);
AttackTrace parse_trace_csv(const std::string& text);
AttackTrace read_trace_csv(const std::filesystem::path& path);

/// MSE of the current point after `budget` attack queries: the last record
/// at or before the checkpoint, or the initial MSE.
double mse_at(const AttackTrace& trace, std::uint64_t budget);

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

struct RunOutcome {
  Method method = Method::Evolutionary;
  std::uint64_t seed = 0;
  bool completed = false;
  bool invariants_ok = false;
  std::string error;
  std::filesystem::path trace_path;
  AttackTrace trace;
  std::uint64_t init_queries = 0;
  std::uint64_t attack_queries = 0;
  double final_l2 = 0.0;
  double final_mse = 0.0;
  double wall_seconds = 0.0;
};

struct SummaryRow {
  std::string method;
  std::string oracle;
  std::uint64_t budget = 0;
  std::size_t runs = 0;  // completed runs
  std::size_t failed = 0;
  double mean_mse = 0.0;
  double median_mse = 0.0;
  double std_mse = 0.0;  // sample standard deviation; 0 for a single run
  double max_mse = 0.0;
};

struct MatrixResult {
  std::filesystem::path directory;
  std::vector<RunOutcome> runs;  // method-major, then seed, as configured
  std::vector<SummaryRow> summary;

  bool all_completed() const;
  bool all_invariants_ok() const;
};

/// Summary rows per (method, budget), computed from traces alone.
std::vector<SummaryRow> summarize(const std::string& oracle, const std::vector<Method>& methods,
                                  const std::vector<std::uint64_t>& budgets, const std::vector<RunOutcome>& runs);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

/// One attack. Streams the trace to `trace_path` when nonempty.
RunOutcome run_cell(const ExperimentConfig& config, Method method, std::uint64_t seed,
                    const std::filesystem::path& trace_path = {});

using ProgressFn = std::function<void(const RunOutcome&)>;

/// Writes traces/<method>_seed<seed>.csv, summary.csv, runs.csv and
/// config.json into config.output_dir.
MatrixResult run_matrix(const ExperimentConfig& config, const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string setting;
  std::string search_shape;  // "full" when m = n
  std::size_t runs = 0;
  double median_mse = 0.0;
  double mean_mse = 0.0;
};

struct PairedComparison {
  std::string better;  // claimed winner
  std::string worse;
  std::size_t wins = 0;  // seeds where `better` has strictly lower final MSE
  std::size_t seeds = 0;
};

struct AblationReport {
  std::vector<AblationRow> settings;
  std::vector<AblationRow> m_sweep;
  std::vector<PairedComparison> pairs;
  bool low_confidence = false;  // fewer than kConfidentSeeds seeds
  bool all_completed = true;  // false if any run failed or broke an invariant
};

inline constexpr std::size_t kConfidentSeeds = 5;

inline constexpr const char* kSettingNoCmaNoScs = "no-cma-no-scs";
inline constexpr const char* kSettingCmaNoScs = "cma-no-scs";
inline constexpr const char* kSettingCmaScsCovariance = "cma-scs-covariance";
inline constexpr const char* kSettingCmaScsUniform = "cma-scs-uniform";

/// Runs the four CMA/SCS settings and the m sweep of `base` with the
/// evolutionary method. Traces go under base.output_dir/ablation/.
AblationReport ablation_report(const ExperimentConfig& base, const ProgressFn& progress = {});
std::string ablation_to_csv(const AblationReport& report);

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

/// (query_index, mse) change points of the step function, starting at 0.
using StepCurve = std::vector<std::pair<std::uint64_t, double>>;

StepCurve step_curve(const AttackTrace& trace);
double evaluate_step(const StepCurve& curve, std::uint64_t query);
/// Mean over curves on the union of their change points.
StepCurve mean_curve(const std::vector<StepCurve>& curves);

/// Reads <run_dir>/traces and writes <out_dir>/curve_<method>.csv with
/// columns series,query_index,mse; series is "seed<k>" or "mean". Returns the
/// files written.
std::vector<std::filesystem::path> curve_export(const std::filesystem::path& run_dir,
                                                const std::filesystem::path& out_dir);

}  // namespace evoprobe
