#pragma once

#include "evoprobe/evo_attack.hpp"

namespace evoprobe {

/// Random walk on the decision boundary: an orthogonal step on the sphere
/// around the original point, then a contraction toward it. Both step sizes
/// adapt to the success rate over `adapt_window` trials.
struct BoundaryParams {
  double orth_step = 0.01;    // orthogonal perturbation, relative to the current distance
  double toward_step = 0.01;  // contraction factor per step
  std::size_t adapt_window = 10;
  double orth_target = 0.5;     // orth_step grows above this success rate, shrinks below
  double toward_target = 0.2;   // toward_step *= exp(rate - toward_target)
  double orth_adapt_factor = 1.5;
  double max_orth_step = 1.0;
  double max_toward_step = 0.5;
  bool clamp_to_bounds = true;

  std::vector<std::string> problems() const;
  void validate() const;
};

/// Zero-mean (1+1)-ES: the evolutionary loop with mu = 0, C = I and k = m = n.
/// T = 0 returns the initial point.
AttackResult run_unbiased_es(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                             std::uint64_t budget, const InitMode& init, Rng& rng, TraceSink* sink = nullptr,
                             double sigma_factor = 0.01);

/// Unbiased ES parameters, exposed so harness callers can reuse them.
EvoHyperParams unbiased_es_params(std::uint64_t budget, double sigma_factor = 0.01);

/// Boundary-attack baseline. One query per iteration. In the trace, `sigma`
/// holds the absolute orthogonal step and `mu` the contraction factor.
AttackResult run_boundary(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                          const BoundaryParams& params, std::uint64_t budget, const InitMode& init, Rng& rng,
                          TraceSink* sink = nullptr);

}  // namespace evoprobe
