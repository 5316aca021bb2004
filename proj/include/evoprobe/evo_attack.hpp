#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "evoprobe/core.hpp"

namespace evoprobe {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ScsWeighting { Covariance, Uniform };

std::string to_string(ScsWeighting w);
ScsWeighting parse_scs_weighting(const std::string& s);

struct EvoHyperParams {
  /// Search grid (h', w', c). Absent: search in the full input space (m = n).
  std::optional<GridShape> search_shape;
  /// Coordinates perturbed per step. Absent: max(1, m / 20).
  std::optional<std::size_t> k;
  double c_c = 0.01;
  double c_cov = 0.001;
  double sigma_factor = 0.01;
  double mu_init = 0.1;
  std::size_t success_window = 10;
  std::uint64_t budget = 10000;
  bool clamp_to_bounds = true;

  bool cma_enabled = true;
  bool scs_enabled = true;
  ScsWeighting scs_weighting = ScsWeighting::Covariance;
  /// 1/5th success rule on mu. Disabled only by the unbiased baseline.
  bool adapt_mu = true;

  /// Search dimension m for an input of dimension n.
  std::size_t search_dim(std::size_t n) const { return search_shape ? search_shape->size() : n; }
  std::size_t coordinates(std::size_t n) const;

  /// Returns every violated constraint; empty when valid.
  std::vector<std::string> problems(const Oracle& oracle, bool allow_zero_budget = false) const;
  void validate(const Oracle& oracle, bool allow_zero_budget = false) const;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Dodging start: uniform samples until one is adversarial. Uses the
/// oracle's bounds when it declares them, `box` otherwise.
struct RandomUniform {
  std::uint64_t max_attempts = 100;
  Bounds box{0.0, 1.0};
};

/// Impersonation start (or any known adversarial point).
struct GivenPoint {
  Point point;
};

using InitMode = std::variant<RandomUniform, GivenPoint>;

class InitializationFailed : public std::runtime_error {
 public:
  InitializationFailed(const std::string& what, std::uint64_t queries)
      : std::runtime_error(what), queries_(queries) {}
  std::uint64_t queries() const noexcept { return queries_; }

 private:
  std::uint64_t queries_;
};

struct InitResult {
  std::vector<double> point;
  std::uint64_t queries = 0;
};

/// Finds an adversarial starting point. Every attempt is one query, charged
/// to a private ledger of size max_attempts (1 for GivenPoint).
InitResult find_initial_point(const Oracle& oracle, const AdversarialCriterion& criterion,
                              const Point& original, const InitMode& init, Rng& rng);

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

struct TraceRecord {
  std::uint64_t query_index = 0;  // 1-based index of the attack query
  double l2 = 0.0;                // distance of the current point after this query
  double mse = 0.0;
  bool accepted = false;
  double sigma = 0.0;  // step scale used for this query
  double mu = 0.0;     // bias strength used for this query

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct AttackTrace {
  double initial_l2 = 0.0;
  double initial_mse = 0.0;
  std::uint64_t init_queries = 0;
  std::vector<TraceRecord> records;

  friend bool operator==(const AttackTrace&, const AttackTrace&) = default;
};

/// Receives trace records as they are produced.
class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void on_start(const AttackTrace& header) = 0;
  virtual void on_record(const TraceRecord& record) = 0;
};

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// Fixed-capacity window of recent trial outcomes.
class SuccessHistory {
 public:
  explicit SuccessHistory(std::size_t capacity);

  void push(bool success);
  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return slots_.size(); }
  /// Fraction of successes among stored entries; 0 when empty.
  double rate() const noexcept;

 private:
  std::vector<bool> slots_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  std::size_t successes_ = 0;
};

struct EvoState {
  std::vector<double> current;  // always adversarial
  Point original;
  double current_l2 = 0.0;
  std::vector<double> c_diag;
  std::vector<double> p_c;
  double mu = 0.1;
  SuccessHistory history{10};
  QueryLedger ledger{1};
  std::uint64_t init_queries = 0;
  AttackTrace trace;
};

EvoState initialize(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                    const InitMode& init, const EvoHyperParams& params, Rng& rng);

// ---------------------------------------------------------------------------
// Algorithm steps
// ---------------------------------------------------------------------------

/// z_i ~ Normal(0, sigma^2 c_ii), independently.
std::vector<double> sample_raw_step(std::span<const double> c_diag, double sigma, Rng& rng);

/// k distinct indices drawn without replacement, sequentially with
/// probability proportional to `weights` (renormalized after each draw).
/// Sorted ascending.
std::vector<std::size_t> select_coordinates(std::span<const double> weights, std::size_t k, Rng& rng);

std::vector<double> mask(std::span<const double> z, std::span<const std::size_t> selected);

/// Per-channel bilinear interpolation with align-corners mapping.
std::vector<double> upscale_bilinear(std::span<const double> z, const GridShape& from, const GridShape& to);

/// z_up + mu * (original - current).
std::vector<double> add_bias(std::span<const double> z_up, double mu, std::span<const double> original,
                             std::span<const double> current);

/// Queries current + step (clamped when requested); replaces the current
/// point iff the candidate is adversarial and strictly closer. Records the
/// outcome in the success history and trace.
bool try_candidate(EvoState& state, std::span<const double> step, const Oracle& oracle,
                   const AdversarialCriterion& criterion, const EvoHyperParams& params, double sigma,
                   TraceSink* sink = nullptr);

/// (1 - c_c) p_c + sqrt(c_c (2 - c_c)) z / sigma.
std::vector<double> update_evolution_path(std::span<const double> p_c, std::span<const double> z, double sigma,
                                          double c_c);

/// c_ii <- (1 - c_cov) c_ii + c_cov (p_c)_i^2.
std::vector<double> update_covariance(std::span<const double> c_diag, std::span<const double> p_c, double c_cov);

/// mu * exp(P_success - 1/5).
double update_mu(double mu, const SuccessHistory& history);

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct AttackResult {
  Point final_point;
  AttackTrace trace;
  std::vector<double> c_diag;
  double mu = 0.0;
  std::uint64_t init_queries = 0;
  std::uint64_t attack_queries = 0;

  std::uint64_t total_queries() const noexcept { return init_queries + attack_queries; }
  double final_l2() const;
  double final_mse() const;
};

/// Runs the evolutionary attack until the budget is spent or sigma drops
/// below 1e-12.
AttackResult run_evolutionary(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                              const EvoHyperParams& params, const InitMode& init, Rng& rng,
                              TraceSink* sink = nullptr);

/// Continues from an initialized state; shared by the baselines.
AttackResult run_from_state(EvoState state, const Oracle& oracle, const AdversarialCriterion& criterion,
                            const EvoHyperParams& params, Rng& rng, TraceSink* sink = nullptr);

inline constexpr double kSigmaFloor = 1e-12;

/// Keeps shape, and bounds only when every value respects them.
Point point_like(const Point& reference, std::vector<double> values);

}  // namespace evoprobe
