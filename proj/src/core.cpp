#include "evoprobe/core.hpp"

#include <cmath>
#include <sstream>

namespace evoprobe {

BudgetExhausted::BudgetExhausted(std::uint64_t budget)
    : std::runtime_error("query budget exhausted (" + std::to_string(budget) + " queries)"),
      budget_(budget) {}

DimensionMismatch::DimensionMismatch(std::size_t expected, std::size_t actual)
    : std::invalid_argument("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                            std::to_string(actual)) {}

Point::Point(std::vector<double> values, std::optional<GridShape> shape, std::optional<Bounds> bounds)
    : values_(std::move(values)), shape_(shape), bounds_(bounds) {
  if (shape_ && shape_->size() != values_.size()) {
    throw DimensionMismatch(shape_->size(), values_.size());
  }
  if (bounds_ && !(bounds_->lower <= bounds_->upper)) {
    throw std::invalid_argument("point bounds: lower exceeds upper");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double v = values_[i];
    if (!std::isfinite(v)) {
      throw std::invalid_argument("point value " + std::to_string(i) + " is not finite");
    }
    if (bounds_ && !bounds_->contains(v)) {
      std::ostringstream msg;
      msg << "point value " << i << " = " << v << " outside [" << bounds_->lower << ", "
          << bounds_->upper << "]";
      throw std::invalid_argument(msg.str());
    }
  }
}

Point Point::with_values(std::vector<double> values) const {
  return Point(std::move(values), shape_, bounds_);
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch(a.size(), b.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch(a.size(), b.size());
  if (a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

bool is_adversarial(const AdversarialCriterion& criterion, Label label) {
  return std::visit(overloaded{
                        [&](const DodgeBinary&) { return label.value == 0; },
                        [&](const DodgeMulticlass& c) { return label != c.true_label; },
                        [&](const ImpersonateBinary&) { return label.value == 1; },
                        [&](const ImpersonateMulticlass& c) { return label == c.target_label; },
                    },
                    criterion);
}

std::string criterion_name(const AdversarialCriterion& criterion) {
  return std::visit(overloaded{
                        [](const DodgeBinary&) { return std::string("dodge_binary"); },
                        [](const DodgeMulticlass& c) {
                          return "dodge_multiclass(" + std::to_string(c.true_label.value) + ")";
                        },
                        [](const ImpersonateBinary&) { return std::string("impersonate_binary"); },
                        [](const ImpersonateMulticlass& c) {
                          return "impersonate_multiclass(" + std::to_string(c.target_label.value) + ")";
                        },
                    },
                    criterion);
}

QueryLedger::QueryLedger(std::uint64_t budget) : budget_(budget) {}

void QueryLedger::require_remaining() const {
  if (count_ >= budget_) throw BudgetExhausted(budget_);
}

void QueryLedger::charge() {
  require_remaining();
  ++count_;
}

Label Oracle::query(std::span<const double> x, QueryLedger& ledger) const {
  if (x.size() != dimension()) throw DimensionMismatch(dimension(), x.size());
  ledger.require_remaining();
  const Evaluation result = evaluate(x);
  if (result.billable) {
    ledger.charge();
    calls_.fetch_add(1);
  }
  if (result.label.value >= num_labels()) {
    throw std::out_of_range(name() + " returned label " + std::to_string(result.label.value) +
                            " outside its label set");
  }
  return result.label;
}

double Loss::value() const {
  if (infinite_) throw std::logic_error("Loss::value() on an infinite loss");
  return value_;
}

Loss loss(const Point& candidate, const Point& original, const Oracle& oracle,
          const AdversarialCriterion& criterion, QueryLedger& ledger) {
  if (candidate.size() != original.size()) throw DimensionMismatch(original.size(), candidate.size());
  const Label label = oracle.query(candidate, ledger);
  if (!is_adversarial(criterion, label)) return Loss::infinite();
  return Loss::finite(l2_distance(candidate, original));
}

}  // namespace evoprobe
