#include "evoprobe/evo_attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace evoprobe {

std::string to_string(ScsWeighting w) { return w == ScsWeighting::Covariance ? "covariance" : "uniform"; }

ScsWeighting parse_scs_weighting(const std::string& s) {
  if (s == "covariance") return ScsWeighting::Covariance;
  if (s == "uniform") return ScsWeighting::Uniform;
  throw std::invalid_argument("unknown scs_weighting '" + s + "' (expected covariance|uniform)");
}

std::size_t EvoHyperParams::coordinates(std::size_t n) const {
  const std::size_t m = search_dim(n);
  if (k) return *k;
  return std::max<std::size_t>(1, m / 20);
}

std::vector<std::string> EvoHyperParams::problems(const Oracle& oracle, bool allow_zero_budget) const {
  std::vector<std::string> out;
  const std::size_t n = oracle.dimension();
  const std::size_t m = search_dim(n);
  if (search_shape) {
    const auto input_shape = oracle.shape();
    if (!input_shape) {
      if (m != n) out.push_back("search_shape given but the oracle has no grid shape; m must equal n");
    } else {
      if (search_shape->channels != input_shape->channels) out.push_back("search_shape channel count differs from input");
      if (search_shape->height > input_shape->height || search_shape->width > input_shape->width) {
        out.push_back("search_shape larger than the input grid");
      }
    }
    if (m == 0) out.push_back("search_shape is empty");
  }
  const std::size_t k_eff = coordinates(n);
  if (k_eff == 0 || k_eff > m) out.push_back("k must satisfy 1 <= k <= m");
  if (!(c_c > 0.0 && c_c < 1.0)) out.push_back("c_c must lie in (0,1)");
  if (!(c_cov > 0.0 && c_cov < 1.0)) out.push_back("c_cov must lie in (0,1)");
  if (!(sigma_factor > 0.0) || !std::isfinite(sigma_factor)) out.push_back("sigma_factor must be positive");
  if (!(mu_init >= 0.0) || !std::isfinite(mu_init)) out.push_back("mu_init must be non-negative");
  if (adapt_mu && mu_init == 0.0) out.push_back("mu_init must be positive when mu adaptation is on");
  if (success_window == 0) out.push_back("success_window must be positive");
  if (budget == 0 && !allow_zero_budget) out.push_back("budget must be at least 1");
  return out;
}

void EvoHyperParams::validate(const Oracle& oracle, bool allow_zero_budget) const {
  const auto issues = problems(oracle, allow_zero_budget);
  if (issues.empty()) return;
  std::ostringstream msg;
  msg << "invalid evolutionary attack parameters:";
  for (const auto& p : issues) msg << "\n  - " << p;
  throw std::invalid_argument(msg.str());
}

// ---------------------------------------------------------------------------

InitResult find_initial_point(const Oracle& oracle, const AdversarialCriterion& criterion,
                              const Point& original, const InitMode& init, Rng& rng) {
  if (original.size() != oracle.dimension()) throw DimensionMismatch(oracle.dimension(), original.size());

  if (const auto* given = std::get_if<GivenPoint>(&init)) {
    if (given->point.size() != oracle.dimension()) throw DimensionMismatch(oracle.dimension(), given->point.size());
    QueryLedger ledger(1);
    const Label label = oracle.query(given->point, ledger);
    if (!is_adversarial(criterion, label)) {
      throw InitializationFailed("given initial point is not adversarial (label " +
                                     std::to_string(label.value) + ")",
                                 ledger.count());
    }
    return {given->point.vector(), ledger.count()};
  }

  const auto& uniform = std::get<RandomUniform>(init);
  const Bounds box = oracle.bounds().value_or(uniform.box);
  std::uniform_real_distribution<double> dist(box.lower, box.upper);
  QueryLedger ledger(uniform.max_attempts);
  std::vector<double> candidate(oracle.dimension());
  while (!ledger.exhausted()) {
    for (double& v : candidate) v = dist(rng);
    if (is_adversarial(criterion, oracle.query(candidate, ledger))) return {candidate, ledger.count()};
  }
  throw InitializationFailed("no adversarial point found in " + std::to_string(uniform.max_attempts) +
                                 " uniform samples",
                             ledger.count());
}

SuccessHistory::SuccessHistory(std::size_t capacity) : slots_(std::max<std::size_t>(capacity, 1), false) {}

void SuccessHistory::push(bool success) {
  if (size_ == slots_.size()) {
    if (slots_[next_]) --successes_;
  } else {
    ++size_;
  }
  slots_[next_] = success;
  if (success) ++successes_;
  next_ = (next_ + 1) % slots_.size();
}

double SuccessHistory::rate() const noexcept {
  return size_ == 0 ? 0.0 : static_cast<double>(successes_) / static_cast<double>(size_);
}

Point point_like(const Point& reference, std::vector<double> values) {
  std::optional<Bounds> bounds = reference.bounds();
  if (bounds && !std::all_of(values.begin(), values.end(), [&](double v) { return bounds->contains(v); })) {
    bounds.reset();
  }
  return Point(std::move(values), reference.shape(), bounds);
}

EvoState initialize(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                    const InitMode& init, const EvoHyperParams& params, Rng& rng) {
  InitResult start = find_initial_point(oracle, criterion, original, init, rng);
  const std::size_t m = params.search_dim(oracle.dimension());

  EvoState state;
  state.current = std::move(start.point);
  state.original = original;
  state.current_l2 = l2_distance(state.current, original.values());
  state.c_diag.assign(m, 1.0);
  state.p_c.assign(m, 0.0);
  state.mu = params.mu_init;
  state.history = SuccessHistory(params.success_window);
  state.ledger = QueryLedger(params.budget);
  state.init_queries = start.queries;
  state.trace.initial_l2 = state.current_l2;
  state.trace.initial_mse = state.current_l2 * state.current_l2 / static_cast<double>(original.size());
  state.trace.init_queries = start.queries;
  return state;
}

// ---------------------------------------------------------------------------

std::vector<double> sample_raw_step(std::span<const double> c_diag, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(c_diag.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = sigma * std::sqrt(c_diag[i]) * normal(rng);
  return z;
}

std::vector<std::size_t> select_coordinates(std::span<const double> weights, std::size_t k, Rng& rng) {
  const std::size_t m = weights.size();
  if (k > m) throw std::invalid_argument("cannot select more coordinates than exist");
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k == m) return idx;

  // Efraimidis-Spirakis: the k largest keys log(u)/w_i are distributed as k
  // sequential weighted draws without replacement.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> keys(m);
  for (std::size_t i = 0; i < m; ++i) {
    double u = unit(rng);
    while (u == 0.0) u = unit(rng);
    keys[i] = std::log(u) / weights[i];
  }
  auto by_key = [&](std::size_t a, std::size_t b) { return keys[a] > keys[b] || (keys[a] == keys[b] && a < b); };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), by_key);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> mask(std::span<const double> z, std::span<const std::size_t> selected) {
  std::vector<double> out(z.size(), 0.0);
  for (std::size_t i : selected) {
    if (i >= z.size()) throw std::out_of_range("mask index out of range");
    out[i] = z[i];
  }
  return out;
}

std::vector<double> upscale_bilinear(std::span<const double> z, const GridShape& from, const GridShape& to) {
  if (z.size() != from.size()) throw DimensionMismatch(from.size(), z.size());
  if (from.channels != to.channels) throw std::invalid_argument("upscale: channel counts differ");
  if (from.height > to.height || from.width > to.width) throw std::invalid_argument("upscale: source larger than target");
  if (from == to) return std::vector<double>(z.begin(), z.end());

  // Align-corners mapping: output row i samples source row i (h'-1)/(h-1).
  auto source_coord = [](std::size_t i, std::size_t src, std::size_t dst) {
    if (dst <= 1 || src <= 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
  };

  std::vector<double> out(to.size());
  for (std::size_t i = 0; i < to.height; ++i) {
    const double sy = source_coord(i, from.height, to.height);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), from.height - 1);
    const std::size_t y1 = std::min(y0 + 1, from.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < to.width; ++j) {
      const double sx = source_coord(j, from.width, to.width);
      const std::size_t x0 = std::min(static_cast<std::size_t>(sx), from.width - 1);
      const std::size_t x1 = std::min(x0 + 1, from.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < to.channels; ++c) {
        const double top = (1.0 - fx) * z[from.index(y0, x0, c)] + fx * z[from.index(y0, x1, c)];
        const double bottom = (1.0 - fx) * z[from.index(y1, x0, c)] + fx * z[from.index(y1, x1, c)];
        out[to.index(i, j, c)] = (1.0 - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

std::vector<double> add_bias(std::span<const double> z_up, double mu, std::span<const double> original,
                             std::span<const double> current) {
  if (z_up.size() != original.size()) throw DimensionMismatch(original.size(), z_up.size());
  if (current.size() != original.size()) throw DimensionMismatch(original.size(), current.size());
  std::vector<double> out(z_up.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_up[i] + mu * (original[i] - current[i]);
  return out;
}

bool try_candidate(EvoState& state, std::span<const double> step, const Oracle& oracle,
                   const AdversarialCriterion& criterion, const EvoHyperParams& params, double sigma,
                   TraceSink* sink) {
  const std::size_t n = state.current.size();
  if (step.size() != n) throw DimensionMismatch(n, step.size());
  state.ledger.require_remaining();

  std::vector<double> candidate(n);
  for (std::size_t i = 0; i < n; ++i) candidate[i] = state.current[i] + step[i];
  if (params.clamp_to_bounds) {
    if (const auto bounds = oracle.bounds()) {
      for (double& v : candidate) v = bounds->clamp(v);
    }
  }

  const Label label = oracle.query(candidate, state.ledger);
  bool accepted = false;
  if (is_adversarial(criterion, label)) {
    const double d = l2_distance(candidate, state.original.values());
    if (d < state.current_l2) {
      state.current = std::move(candidate);
      state.current_l2 = d;
      accepted = true;
    }
  }
  state.history.push(accepted);

  TraceRecord record;
  record.query_index = state.ledger.count();
  record.l2 = state.current_l2;
  record.mse = state.current_l2 * state.current_l2 / static_cast<double>(n);
  record.accepted = accepted;
  record.sigma = sigma;
  record.mu = state.mu;
  state.trace.records.push_back(record);
  if (sink) sink->on_record(record);
  return accepted;
}

std::vector<double> update_evolution_path(std::span<const double> p_c, std::span<const double> z, double sigma,
                                          double c_c) {
  if (p_c.size() != z.size()) throw DimensionMismatch(p_c.size(), z.size());
  const double gain = std::sqrt(c_c * (2.0 - c_c));
  std::vector<double> out(p_c.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - c_c) * p_c[i] + gain * z[i] / sigma;
  return out;
}

std::vector<double> update_covariance(std::span<const double> c_diag, std::span<const double> p_c, double c_cov) {
  if (p_c.size() != c_diag.size()) throw DimensionMismatch(c_diag.size(), p_c.size());
  std::vector<double> out(c_diag.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - c_cov) * c_diag[i] + c_cov * p_c[i] * p_c[i];
  return out;
}

double update_mu(double mu, const SuccessHistory& history) {
  if (history.size() == 0) return mu;
  return mu * std::exp(history.rate() - 0.2);
}

// ---------------------------------------------------------------------------

double AttackResult::final_l2() const {
  return trace.records.empty() ? trace.initial_l2 : trace.records.back().l2;
}

double AttackResult::final_mse() const {
  return trace.records.empty() ? trace.initial_mse : trace.records.back().mse;
}

AttackResult run_from_state(EvoState state, const Oracle& oracle, const AdversarialCriterion& criterion,
                            const EvoHyperParams& params, Rng& rng, TraceSink* sink) {
  const std::size_t n = oracle.dimension();
  const std::size_t m = params.search_dim(n);
  const std::size_t k = params.scs_enabled ? params.coordinates(n) : m;
  const auto input_shape = oracle.shape();
  const bool upscale = params.search_shape && input_shape && *params.search_shape != *input_shape;
  const std::vector<double> uniform_weights(m, 1.0);

  if (sink) sink->on_start(state.trace);

  while (!state.ledger.exhausted()) {
    const double sigma = params.sigma_factor * state.current_l2;
    if (sigma < kSigmaFloor) break;

    std::vector<double> z = sample_raw_step(state.c_diag, sigma, rng);
    if (k < m) {
      const auto& weights =
          params.scs_weighting == ScsWeighting::Covariance ? state.c_diag : uniform_weights;
      z = mask(z, select_coordinates(weights, k, rng));
    }
    const std::vector<double> z_up = upscale ? upscale_bilinear(z, *params.search_shape, *input_shape) : z;
    const std::vector<double> step = add_bias(z_up, state.mu, state.original.values(), state.current);

    if (try_candidate(state, step, oracle, criterion, params, sigma, sink) && params.cma_enabled) {
      state.p_c = update_evolution_path(state.p_c, z, sigma, params.c_c);
      state.c_diag = update_covariance(state.c_diag, state.p_c, params.c_cov);
    }
    if (params.adapt_mu) state.mu = update_mu(state.mu, state.history);
  }

  AttackResult result{point_like(state.original, state.current),
                      std::move(state.trace),
                      std::move(state.c_diag),
                      state.mu,
                      state.init_queries,
                      state.ledger.count()};
  return result;
}

AttackResult run_evolutionary(const Oracle& oracle, const AdversarialCriterion& criterion, const Point& original,
                              const EvoHyperParams& params, const InitMode& init, Rng& rng, TraceSink* sink) {
  if (original.size() != oracle.dimension()) throw DimensionMismatch(oracle.dimension(), original.size());
  params.validate(oracle);
  EvoState state = initialize(oracle, criterion, original, init, params, rng);
  return run_from_state(std::move(state), oracle, criterion, params, rng, sink);
}

}  // namespace evoprobe
