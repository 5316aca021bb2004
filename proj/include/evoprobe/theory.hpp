#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evoprobe/evo_attack.hpp"

namespace evoprobe {

/// Upper bound on the probability that a zero-mean Gaussian step
/// z ~ N(0, sigma^2 C) moves x_tilde closer to x:
///   4 lambda_max ||x_tilde - x||^2 / (sigma^2 lambda_min^2 n^2).
/// For diagonal C the eigenvalues are the diagonal entries.
double theorem1_bound(std::span<const double> x_tilde, std::span<const double> x, double sigma,
                      std::span<const double> c_diag);

struct McEstimate {
  double p_hat = 0.0;
  double std_error = 0.0;
};

inline constexpr std::uint64_t kMinMcSamples = 10000;

/// Fraction of S draws z ~ N(0, sigma^2 C) with ||x_tilde + z - x|| < ||x_tilde - x||.
McEstimate mc_success_probability(std::span<const double> x_tilde, std::span<const double> x, double sigma,
                                  std::span<const double> c_diag, std::uint64_t samples, Rng& rng);

struct BoundReport {
  std::size_t n = 0;
  double sigma = 0.0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double distance = 0.0;
  double bound_value = 0.0;
  double mc_estimate = 0.0;
  double mc_std_error = 0.0;
  std::uint64_t samples = 0;
  bool holds = false;
};

/// One report per (n, sigma) cell with C = I and unit distance. Each cell
/// draws from its own stream seeded from `rng`.
std::vector<BoundReport> verify_bound_grid(std::span<const std::size_t> n_values,
                                           std::span<const double> sigma_values, std::uint64_t samples, Rng& rng);

bool all_hold(std::span<const BoundReport> reports);

/// CSV with header n,sigma,lambda_max,lambda_min,distance,bound_value,
/// mc_estimate,mc_std_error,samples,holds.
std::string bound_reports_csv(std::span<const BoundReport> reports);

}  // namespace evoprobe
