#pragma once

#include <atomic>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace evoprobe {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Raised when an oracle query is attempted on a ledger with no budget left.
class BudgetExhausted : public std::runtime_error {
 public:
  explicit BudgetExhausted(std::uint64_t budget);
  std::uint64_t budget() const noexcept { return budget_; }

 private:
  std::uint64_t budget_;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  DimensionMismatch(std::size_t expected, std::size_t actual);
};

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

/// Height x width x channels layout of a flat vector. Values are stored
/// row-major with channels innermost: index = (row * width + col) * channels + ch.
struct GridShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  std::size_t size() const noexcept { return height * width * channels; }
  std::size_t index(std::size_t row, std::size_t col, std::size_t ch) const noexcept {
    return (row * width + col) * channels + ch;
  }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Closed interval applied to every coordinate.
struct Bounds {
  double lower = 0.0;
  double upper = 1.0;

  bool contains(double v) const noexcept { return v >= lower && v <= upper; }
  double clamp(double v) const noexcept { return v < lower ? lower : (v > upper ? upper : v); }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

/// An element of the search space: finite values, optional grid shape and
/// optional coordinate bounds. Construction validates all invariants.
class Point {
 public:
  Point() = default;
  explicit Point(std::vector<double> values, std::optional<GridShape> shape = std::nullopt,
                 std::optional<Bounds> bounds = std::nullopt);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }
  const std::optional<GridShape>& shape() const noexcept { return shape_; }
  const std::optional<Bounds>& bounds() const noexcept { return bounds_; }

  /// Same metadata, new values (validated).
  Point with_values(std::vector<double> values) const;

  friend bool operator==(const Point& a, const Point& b) { return a.values_ == b.values_; }

 private:
  std::vector<double> values_;
  std::optional<GridShape> shape_;
  std::optional<Bounds> bounds_;
};

double l2_distance(std::span<const double> a, std::span<const double> b);
inline double l2_distance(const Point& a, const Point& b) { return l2_distance(a.values(), b.values()); }

/// Mean squared error, l2^2 / n. Reporting only; the attack objective is l2.
double mse(std::span<const double> a, std::span<const double> b);
inline double mse(const Point& a, const Point& b) { return mse(a.values(), b.values()); }

// ---------------------------------------------------------------------------
// Labels and criteria
// ---------------------------------------------------------------------------

struct Label {
  std::uint32_t value = 0;
  friend auto operator<=>(const Label&, const Label&) = default;
};

struct DodgeBinary {
  friend bool operator==(const DodgeBinary&, const DodgeBinary&) = default;
};
struct DodgeMulticlass {
  Label true_label;
  friend bool operator==(const DodgeMulticlass&, const DodgeMulticlass&) = default;
};
struct ImpersonateBinary {
  friend bool operator==(const ImpersonateBinary&, const ImpersonateBinary&) = default;
};
struct ImpersonateMulticlass {
  Label target_label;
  friend bool operator==(const ImpersonateMulticlass&, const ImpersonateMulticlass&) = default;
};

using AdversarialCriterion =
    std::variant<DodgeBinary, DodgeMulticlass, ImpersonateBinary, ImpersonateMulticlass>;

bool is_adversarial(const AdversarialCriterion& criterion, Label label);

std::string criterion_name(const AdversarialCriterion& criterion);

// ---------------------------------------------------------------------------
// Query accounting
// ---------------------------------------------------------------------------

/// Counts oracle evaluations against a fixed budget. Owned by one attack run.
class QueryLedger {
 public:
  explicit QueryLedger(std::uint64_t budget);

  std::uint64_t count() const noexcept { return count_; }
  std::uint64_t budget() const noexcept { return budget_; }
  std::uint64_t remaining() const noexcept { return budget_ - count_; }
  bool exhausted() const noexcept { return count_ >= budget_; }

  /// Throws BudgetExhausted if no query may be issued.
  void require_remaining() const;
  /// Charges one query. Throws BudgetExhausted (without charging) at budget.
  void charge();

 private:
  std::uint64_t count_ = 0;
  std::uint64_t budget_;
};

// ---------------------------------------------------------------------------
// Oracle interface
// ---------------------------------------------------------------------------

/// Outcome of one oracle evaluation. `billable` is false only for
/// evaluations that must not be charged (e.g. uncounted cache hits).
struct Evaluation {
  Label label;
  bool billable = true;
};

/// Hard-label target model. Exposes only labels; concrete oracles implement
/// `evaluate`. Implementations must be safe for concurrent queries.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual std::size_t dimension() const = 0;
  /// Number of distinct labels; labels are 0 .. num_labels()-1.
  virtual std::uint32_t num_labels() const { return 2; }
  virtual std::optional<GridShape> shape() const { return std::nullopt; }
  virtual std::optional<Bounds> bounds() const { return std::nullopt; }
  virtual std::string name() const = 0;

  /// Queries the oracle, charging `ledger` once per billable evaluation.
  Label query(std::span<const double> x, QueryLedger& ledger) const;
  Label query(const Point& x, QueryLedger& ledger) const { return query(x.values(), ledger); }

  /// Total billable evaluations served by this instance.
  std::uint64_t calls() const noexcept { return calls_.load(); }

 protected:
  virtual Evaluation evaluate(std::span<const double> x) const = 0;

 private:
  mutable std::atomic<std::uint64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Extended real used for the attack objective: finite value or +inf.
class Loss {
 public:
  static Loss finite(double v) { return Loss(v, false); }
  static Loss infinite() { return Loss(0.0, true); }

  bool is_finite() const noexcept { return !infinite_; }
  bool is_infinite() const noexcept { return infinite_; }
  /// Finite value; throws std::logic_error when infinite.
  double value() const;

  friend bool operator==(const Loss& a, const Loss& b) noexcept {
    return a.infinite_ == b.infinite_ && (a.infinite_ || a.value_ == b.value_);
  }
  friend std::partial_ordering operator<=>(const Loss& a, const Loss& b) noexcept {
    if (a.infinite_ || b.infinite_) return a.infinite_ <=> b.infinite_;
    return a.value_ <=> b.value_;
  }

 private:
  Loss(double v, bool inf) : value_(v), infinite_(inf) {}
  double value_;
  bool infinite_;
};

/// Distance to `original` if the queried label satisfies the criterion,
/// +inf otherwise. Issues exactly one query.
Loss loss(const Point& candidate, const Point& original, const Oracle& oracle,
          const AdversarialCriterion& criterion, QueryLedger& ledger);

}  // namespace evoprobe
