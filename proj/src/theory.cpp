#include "evoprobe/theory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace evoprobe {

namespace {

std::string num(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

void check_inputs(std::span<const double> x_tilde, std::span<const double> x, double sigma,
                  std::span<const double> c_diag) {
  if (x_tilde.size() != x.size()) throw DimensionMismatch(x.size(), x_tilde.size());
  if (c_diag.size() != x.size()) throw DimensionMismatch(x.size(), c_diag.size());
  if (x.empty()) throw std::invalid_argument("empty input");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  for (double c : c_diag) {
    if (!(c > 0.0)) throw std::invalid_argument("covariance diagonal must be positive");
  }
}

}  // namespace

double theorem1_bound(std::span<const double> x_tilde, std::span<const double> x, double sigma,
                      std::span<const double> c_diag) {
  check_inputs(x_tilde, x, sigma, c_diag);
  const auto [lo, hi] = std::minmax_element(c_diag.begin(), c_diag.end());
  const double lambda_min = *lo;
  const double lambda_max = *hi;
  const double d = l2_distance(x_tilde, x);
  const double n = static_cast<double>(x.size());
  return 4.0 * lambda_max * d * d / (sigma * sigma * lambda_min * lambda_min * n * n);
}

McEstimate mc_success_probability(std::span<const double> x_tilde, std::span<const double> x, double sigma,
                                  std::span<const double> c_diag, std::uint64_t samples, Rng& rng) {
  check_inputs(x_tilde, x, sigma, c_diag);
  if (samples < kMinMcSamples) {
    throw std::invalid_argument("Monte Carlo estimate needs at least " + std::to_string(kMinMcSamples) + " samples");
  }
  const std::size_t n = x.size();
  std::vector<double> diff(n), scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = x_tilde[i] - x[i];
    scale[i] = sigma * std::sqrt(c_diag[i]);
  }
  // ||d + z||^2 < ||d||^2  <=>  2 d.z + ||z||^2 < 0
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uint64_t hits = 0;
  for (std::uint64_t s = 0; s < samples; ++s) {
    double cross = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = scale[i] * normal(rng);
      cross += diff[i] * z;
      sq += z * z;
    }
    if (2.0 * cross + sq < 0.0) ++hits;
  }
  const double p = static_cast<double>(hits) / static_cast<double>(samples);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(samples))};
}

std::vector<BoundReport> verify_bound_grid(std::span<const std::size_t> n_values,
                                           std::span<const double> sigma_values, std::uint64_t samples, Rng& rng) {
  if (n_values.empty() || sigma_values.empty()) throw std::invalid_argument("bound grid must be nonempty");
  std::vector<BoundReport> reports;
  for (std::size_t n : n_values) {
    for (double sigma : sigma_values) {
      Rng cell_rng(rng());
      std::vector<double> x(n, 0.0);
      std::vector<double> x_tilde(n, 0.0);
      x_tilde[0] = 1.0;
      const std::vector<double> c(n, 1.0);

      BoundReport r;
      r.n = n;
      r.sigma = sigma;
      r.lambda_max = *std::max_element(c.begin(), c.end());
      r.lambda_min = *std::min_element(c.begin(), c.end());
      r.distance = l2_distance(x_tilde, x);
      r.bound_value = theorem1_bound(x_tilde, x, sigma, c);
      const McEstimate est = mc_success_probability(x_tilde, x, sigma, c, samples, cell_rng);
      r.mc_estimate = est.p_hat;
      r.mc_std_error = est.std_error;
      r.samples = samples;
      r.holds = r.mc_estimate - 3.0 * r.mc_std_error <= r.bound_value;
      reports.push_back(r);
    }
  }
  return reports;
}

bool all_hold(std::span<const BoundReport> reports) {
  return std::all_of(reports.begin(), reports.end(), [](const BoundReport& r) { return r.holds; });
}

std::string bound_reports_csv(std::span<const BoundReport> reports) {
  std::ostringstream out;
  out << "n,sigma,lambda_max,lambda_min,distance,bound_value,mc_estimate,mc_std_error,samples,holds\n";
  for (const auto& r : reports) {
    out << r.n << ',' << num(r.sigma) << ',' << num(r.lambda_max) << ',' << num(r.lambda_min) << ','
        << num(r.distance) << ',' << num(r.bound_value) << ',' << num(r.mc_estimate) << ','
        << num(r.mc_std_error) << ',' << r.samples << ','
        << (r.holds ? "true" : "false") << '\n';
  }
  return out.str();
}

}  // namespace evoprobe
