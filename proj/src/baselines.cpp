#include "evoprobe/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace evoprobe {

std::vector<std::string> BoundaryParams::problems() const {
  std::vector<std::string> out;
  if (!(orth_step > 0.0)) out.push_back("orth_step must be positive");
  if (!(toward_step >= 0.0 && toward_step < 1.0)) out.push_back("toward_step must lie in [0,1)");
  if (adapt_window == 0) out.push_back("adapt_window must be at least 1");
  if (!(orth_target > 0.0 && orth_target < 1.0)) out.push_back("orth_target must lie in (0,1)");
  if (!(toward_target > 0.0 && toward_target < 1.0)) out.push_back("toward_target must lie in (0,1)");
  if (!(orth_adapt_factor > 1.0)) out.push_back("orth_adapt_factor must exceed 1");
  if (!(max_orth_step >= orth_step)) out.push_back("max_orth_step must be >= orth_step");
  if (!(max_toward_step >= toward_step && max_toward_step < 1.0)) {
    out.push_back("max_toward_step must lie in [toward_step, 1)");
  }
  return out;
}

void BoundaryParams::validate() const {
  const auto issues = problems();
  if (issues.empty()) return;
  std::ostringstream msg;
  msg << "invalid boundary attack parameters:";
  for (const auto& p : issues) msg << "\n  - " << p;
  throw std::invalid_argument(msg.str());
}

EvoHyperParams unbiased_es_params(std::uint64_t budget, double sigma_factor) {
  EvoHyperParams p;
  p.search_shape.reset();
  p.k.reset();
  p.sigma_factor = sigma_factor;
  p.mu_init = 0.0;
  p.adapt_mu = false;
  p.cma_enabled = false;
  p.scs_enabled = false;
  p.budget = budget;
  return p;
}

AttackResult run_unbiased_es(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                             std::uint64_t budget, const InitMode& init, Rng& rng, TraceSink* sink,
                             double sigma_factor) {
  if (original.size() != oracle.dimension()) throw DimensionMismatch(oracle.dimension(), original.size());
  const EvoHyperParams params = unbiased_es_params(budget, sigma_factor);
  params.validate(oracle, /*allow_zero_budget=*/true);
  EvoState state = initialize(oracle, criterion, original, init, params, rng);
  return run_from_state(std::move(state), oracle, criterion, params, rng, sink);
}

AttackResult run_boundary(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                          const BoundaryParams& params, std::uint64_t budget, const InitMode& init, Rng& rng,
                          TraceSink* sink) {
  if (original.size() != oracle.dimension()) throw DimensionMismatch(oracle.dimension(), original.size());
  params.validate();
  const std::size_t n = oracle.dimension();
  const auto bounds = oracle.bounds();
  const std::span<const double> x = original.values();

  InitResult start = find_initial_point(oracle, criterion, original, init, rng);
  std::vector<double> current = std::move(start.point);
  double distance = l2_distance(current, x);

  AttackTrace trace;
  trace.initial_l2 = distance;
  trace.initial_mse = distance * distance / static_cast<double>(n);
  trace.init_queries = start.queries;
  if (sink) sink->on_start(trace);

  QueryLedger ledger(budget);
  SuccessHistory window(params.adapt_window);
  double orth = params.orth_step;
  double toward = params.toward_step;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> direction(n), eta(n), candidate(n);
  std::size_t since_adapt = 0;

  while (!ledger.exhausted()) {
    if (distance < kSigmaFloor) break;
    for (std::size_t i = 0; i < n; ++i) direction[i] = current[i] - x[i];

    // Orthogonal component of a Gaussian draw, scaled to orth * distance.
    double proj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      eta[i] = normal(rng);
      proj += eta[i] * direction[i];
    }
    proj /= distance * distance;
    double eta_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      eta[i] -= proj * direction[i];
      eta_norm += eta[i] * eta[i];
    }
    eta_norm = std::sqrt(eta_norm);
    const double eta_scale = eta_norm > 0.0 ? orth * distance / eta_norm : 0.0;

    // Back onto the sphere of radius `distance`, then contract.
    double sphere_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      candidate[i] = direction[i] + eta_scale * eta[i];
      sphere_norm += candidate[i] * candidate[i];
    }
    sphere_norm = std::sqrt(sphere_norm);
    const double scale = (1.0 - toward) * distance / sphere_norm;
    for (std::size_t i = 0; i < n; ++i) {
      candidate[i] = x[i] + scale * candidate[i];
      if (params.clamp_to_bounds && bounds) candidate[i] = bounds->clamp(candidate[i]);
    }

    const Label label = oracle.query(candidate, ledger);
    bool accepted = false;
    if (is_adversarial(criterion, label)) {
      const double d = l2_distance(candidate, x);
      if (d <= distance) {
        current = candidate;
        distance = d;
        accepted = true;
      }
    }
    window.push(accepted);

    TraceRecord record{ledger.count(), distance, distance * distance / static_cast<double>(n), accepted,
                       orth * distance, toward};
    trace.records.push_back(record);
    if (sink) sink->on_record(record);

    if (++since_adapt == params.adapt_window) {
      since_adapt = 0;
      const double rate = window.rate();
      if (rate > params.orth_target) orth *= params.orth_adapt_factor;
      else if (rate < params.orth_target) orth /= params.orth_adapt_factor;
      orth = std::clamp(orth, 1e-9, params.max_orth_step);
      toward = std::min(toward * std::exp(rate - params.toward_target), params.max_toward_step);
    }
  }

  return AttackResult{point_like(original, std::move(current)), std::move(trace), {}, toward, start.queries,
                      ledger.count()};
}

}  // namespace evoprobe
