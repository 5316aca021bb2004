#include "doctest.h"

#include <cmath>
#include <random>

#include "evoprobe/evo_attack.hpp"
#include "evoprobe/oracles.hpp"
#include "test_support.hpp"

using namespace evoprobe;
using evoprobe::testing::median;
using evoprobe::testing::RecordingOracle;

namespace {

std::vector<double> unit(std::size_t n, std::size_t i, double scale = 1.0) {
  std::vector<double> v(n, 0.0);
  v[i] = scale;
  return v;
}

// The reference halfspace problem: w = e1, b = 1, x = 0 on a 10x10 grid,
// start at 2 e1. Optimum e1 at L2 distance 1.
struct HalfspaceProblem {
  GridShape grid{10, 10, 1};
  HalfspaceOracle oracle{unit(100, 0), 1.0, InputGeometry{100, GridShape{10, 10, 1}, std::nullopt}};
  Point original{std::vector<double>(100, 0.0), grid};
  Point start{unit(100, 0, 2.0), grid};

  EvoHyperParams params(std::uint64_t budget) const {
    EvoHyperParams p;
    p.search_shape = GridShape{5, 5, 1};
    p.k = 5;
    p.budget = budget;
    return p;
  }
};

// Sequential weighted draws without replacement, renormalizing each time.
std::vector<std::size_t> sequential_weighted_draws(std::vector<double> w, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t draw = 0; draw < k; ++draw) {
    double total = 0.0;
    for (double v : w) total += v;
    double r = u(rng) * total;
    std::size_t pick = 0;
    while (pick + 1 < w.size() && (w[pick] == 0.0 || r >= w[pick])) {
      r -= w[pick];
      ++pick;
    }
    out.push_back(pick);
    w[pick] = 0.0;
  }
  return out;
}

class CollectingSink final : public TraceSink {
 public:
  void on_start(const AttackTrace& header) override { starts.push_back(header); }
  void on_record(const TraceRecord& r) override { records.push_back(r); }
  std::vector<AttackTrace> starts;
  std::vector<TraceRecord> records;
};

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("initialize from a given adversarial point costs one query") {
  HalfspaceProblem hp;
  Rng rng(1);
  const EvoState s = initialize(hp.oracle, ImpersonateBinary{}, hp.original, GivenPoint{hp.start}, hp.params(10), rng);
  CHECK(s.init_queries == 1);
  CHECK(hp.oracle.calls() == 1);
  CHECK(s.current_l2 == doctest::Approx(2.0));
  CHECK(s.c_diag == std::vector<double>(25, 1.0));
  CHECK(s.p_c == std::vector<double>(25, 0.0));
  CHECK(s.mu == 0.1);
  CHECK(s.ledger.count() == 0);
  CHECK(s.ledger.budget() == 10);
}

TEST_CASE("initialize rejects a non-adversarial given point after one query") {
  HalfspaceProblem hp;
  Rng rng(1);
  try {
    initialize(hp.oracle, ImpersonateBinary{}, hp.original, GivenPoint{hp.original}, hp.params(10), rng);
    FAIL("expected InitializationFailed");
  } catch (const InitializationFailed& e) {
    CHECK(e.queries() == 1);
  }
  CHECK(hp.oracle.calls() == 1);
}

TEST_CASE("random uniform initialization against a half-cube region") {
  // adversarial iff x0 < 0.5: half of the unit cube
  HalfspaceOracle oracle(unit(20, 0), 0.5, InputGeometry::image(GridShape{4, 5, 1}));
  const Point original(std::vector<double>(20, 0.9), GridShape{4, 5, 1}, Bounds{});
  EvoHyperParams p;
  p.budget = 1;
  std::uint64_t attempts = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const EvoState s = initialize(oracle, DodgeBinary{}, original, RandomUniform{100}, p, rng);
    CHECK(s.current[0] < 0.5);
    for (double v : s.current) CHECK((v >= 0.0 && v <= 1.0));
    attempts += s.init_queries;
  }
  CHECK(oracle.calls() == attempts);
  // geometric with p = 1/2: mean 2 attempts
  CHECK(static_cast<double>(attempts) / 1000.0 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("random uniform initialization gives up after max_attempts") {
  SphereOracle oracle(std::vector<double>(5, 0.0), 0.01);
  const Point original(std::vector<double>(5, 0.0));
  EvoHyperParams p;
  Rng rng(3);
  CHECK_THROWS_AS(initialize(oracle, ImpersonateBinary{}, original, RandomUniform{7, Bounds{5.0, 6.0}}, p, rng),
                  InitializationFailed);
  CHECK(oracle.calls() == 7);
}

// ---------------------------------------------------------------------------

TEST_CASE("sample_raw_step") {
  Rng rng(5);
  SUBCASE("tiny sigma collapses to zero") {
    const auto z = sample_raw_step(std::vector<double>(50, 1.0), 1e-300, rng);
    for (double v : z) CHECK(std::abs(v) < 1e-290);
  }
  SUBCASE("unit variance per draw") {
    const std::vector<double> c(10000, 1.0);
    for (int draw = 0; draw < 100; ++draw) {
      const auto z = sample_raw_step(c, 1.0, rng);
      double mean = 0.0, var = 0.0;
      for (double v : z) mean += v;
      mean /= static_cast<double>(z.size());
      for (double v : z) var += (v - mean) * (v - mean);
      var /= static_cast<double>(z.size() - 1);
      CHECK(var >= 0.95);
      CHECK(var <= 1.05);
    }
  }
  SUBCASE("variance follows the diagonal") {
    const std::vector<double> c = {4.0, 1.0};
    double v1 = 0.0, v2 = 0.0;
    for (int draw = 0; draw < 100000; ++draw) {
      const auto z = sample_raw_step(c, 0.3, rng);
      v1 += z[0] * z[0];
      v2 += z[1] * z[1];
    }
    CHECK(v1 / v2 == doctest::Approx(4.0).epsilon(0.1));
    CHECK(v2 / 100000 == doctest::Approx(0.09).epsilon(0.05));
  }
}

TEST_CASE("select_coordinates") {
  Rng rng(17);
  SUBCASE("k = m selects everything") {
    const auto s = select_coordinates(std::vector<double>{0.3, 2.0, 1e-9, 5.0}, 4, rng);
    CHECK(s == std::vector<std::size_t>{0, 1, 2, 3});
  }
  SUBCASE("uniform weights give inclusion k/m") {
    const std::size_t m = 20, k = 5, trials = 10000;
    std::vector<double> hits(m, 0.0);
    for (std::size_t t = 0; t < trials; ++t) {
      for (std::size_t i : select_coordinates(std::vector<double>(m, 1.0), k, rng)) hits[i] += 1.0;
    }
    const double p = static_cast<double>(k) / m;
    const double se = std::sqrt(p * (1 - p) / trials);
    for (std::size_t i = 0; i < m; ++i) CHECK(std::abs(hits[i] / trials - p) <= 3 * se);
  }
  SUBCASE("a dominant weight is almost always picked first") {
    std::vector<double> w(50, 1.0);
    w[17] = 1e6;
    int picked = 0;
    for (int t = 0; t < 10000; ++t) picked += select_coordinates(w, 1, rng) == std::vector<std::size_t>{17};
    CHECK(picked > 9990);
  }
  SUBCASE("matches sequential renormalized draws") {
    const std::vector<double> w = {5.0, 1.0, 0.5, 3.0, 0.1, 2.0, 2.0, 0.7};
    const std::size_t k = 3, trials = 40000;
    std::vector<double> ours(w.size(), 0.0), reference(w.size(), 0.0);
    std::mt19937_64 ref_rng(99);
    for (std::size_t t = 0; t < trials; ++t) {
      for (std::size_t i : select_coordinates(w, k, rng)) ours[i] += 1.0;
      for (std::size_t i : sequential_weighted_draws(w, k, ref_rng)) reference[i] += 1.0;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double p = reference[i] / trials;
      const double se = std::sqrt(2.0 * std::max(p * (1 - p), 1e-4) / trials);
      CHECK(std::abs(ours[i] / trials - p) <= 4 * se);
    }
  }
  SUBCASE("indices are distinct and sorted") {
    std::uniform_real_distribution<double> u(0.01, 10.0);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> w(30);
      for (double& v : w) v = u(rng);
      const std::size_t k = 1 + rng() % 30;
      const auto s = select_coordinates(w, k, rng);
      REQUIRE(s.size() == k);
      for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i - 1] < s[i]);
    }
  }
}

TEST_CASE("mask") {
  const std::vector<double> z = {1, 2, 3, 4};
  CHECK(mask(z, std::vector<std::size_t>{0, 1, 2, 3}) == z);
  CHECK(mask(z, std::vector<std::size_t>{}) == std::vector<double>(4, 0.0));
  CHECK(mask(z, std::vector<std::size_t>{0, 2}) == std::vector<double>{1, 0, 3, 0});
  CHECK_THROWS(mask(z, std::vector<std::size_t>{4}));
}

TEST_CASE("upscale_bilinear") {
  SUBCASE("constant field") {
    const GridShape from{3, 4, 2}, to{7, 9, 2};
    const auto out = upscale_bilinear(std::vector<double>(from.size(), 0.37), from, to);
    REQUIRE(out.size() == to.size());
    for (double v : out) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
  }
  SUBCASE("same shape is the identity") {
    const GridShape s{5, 5, 3};
    std::vector<double> z(s.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::sin(static_cast<double>(i));
    CHECK(upscale_bilinear(z, s, s) == z);
  }
  SUBCASE("hand-evaluated 2x2 to 2x3") {
    const auto out = upscale_bilinear(std::vector<double>{0, 1, 0, 1}, GridShape{2, 2, 1}, GridShape{2, 3, 1});
    CHECK(out == std::vector<double>{0, 0.5, 1, 0, 0.5, 1});
  }
  SUBCASE("corners are preserved and channels stay separate") {
    const GridShape from{2, 2, 2}, to{5, 4, 2};
    // channel 0 holds 1..4, channel 1 holds 10..40
    const std::vector<double> z = {1, 10, 2, 20, 3, 30, 4, 40};
    const auto out = upscale_bilinear(z, from, to);
    CHECK(out[to.index(0, 0, 0)] == 1);
    CHECK(out[to.index(0, 3, 0)] == 2);
    CHECK(out[to.index(4, 0, 0)] == 3);
    CHECK(out[to.index(4, 3, 1)] == 40);
    CHECK(out[to.index(2, 0, 1)] == doctest::Approx(20.0));
  }
  SUBCASE("shape errors") {
    CHECK_THROWS(upscale_bilinear(std::vector<double>(4), GridShape{2, 2, 1}, GridShape{4, 4, 3}));
    CHECK_THROWS(upscale_bilinear(std::vector<double>(16), GridShape{4, 4, 1}, GridShape{2, 2, 1}));
    CHECK_THROWS(upscale_bilinear(std::vector<double>(3), GridShape{2, 2, 1}, GridShape{4, 4, 1}));
  }
}

TEST_CASE("add_bias") {
  const std::vector<double> z = {0.3, -0.2};
  const std::vector<double> x = {1.0, 1.0}, cur = {-1.0, -1.0};
  CHECK(add_bias(z, 0.0, x, cur) == z);
  CHECK(add_bias(std::vector<double>{0, 0}, 1.0, x, cur) == std::vector<double>{2.0, 2.0});
  CHECK(add_bias(std::vector<double>{1, 0}, 0.5, std::vector<double>{2, 2}, std::vector<double>{0, 0}) ==
        std::vector<double>{2, 1});
}

TEST_CASE("try_candidate") {
  HalfspaceOracle oracle(unit(2, 0), 1.0);
  const Point original({0.0, 0.0});
  EvoHyperParams p;
  p.budget = 10;
  Rng rng(0);
  EvoState s = initialize(oracle, ImpersonateBinary{}, original, GivenPoint{Point({2.0, 0.0})}, p, rng);

  SUBCASE("non-adversarial candidate is rejected") {
    CHECK_FALSE(try_candidate(s, std::vector<double>{-1.5, 0.0}, oracle, ImpersonateBinary{}, p, 0.02));
    CHECK(s.current == std::vector<double>{2.0, 0.0});
  }
  SUBCASE("strictly closer adversarial candidate is accepted") {
    CHECK(try_candidate(s, std::vector<double>{-0.5, 0.0}, oracle, ImpersonateBinary{}, p, 0.02));
    CHECK(s.current == std::vector<double>{1.5, 0.0});
    CHECK(s.current_l2 == 1.5);
  }
  SUBCASE("equal distance is rejected") {
    // (0, 2) is at distance 2 but not adversarial; (sqrt(2), sqrt(2)) is adversarial at distance 2
    const double r = std::sqrt(2.0);
    const std::vector<double> step = {r - 2.0, r};
    const double d = std::hypot(2.0 + step[0], step[1]);
    if (d == 2.0) {
      CHECK_FALSE(try_candidate(s, step, oracle, ImpersonateBinary{}, p, 0.02));
    } else {
      CHECK(try_candidate(s, step, oracle, ImpersonateBinary{}, p, 0.02) == (d < 2.0));
    }
    CHECK_FALSE(try_candidate(s, std::vector<double>{0.0, 0.0}, oracle, ImpersonateBinary{}, p, 0.02));
  }
  CHECK(s.ledger.count() == s.trace.records.size());
  CHECK(s.history.size() == s.trace.records.size());
}

TEST_CASE("try_candidate clamps to oracle bounds and stores the clamped point") {
  HalfspaceOracle oracle(std::vector<double>{1.0, 1.0}, 0.5, InputGeometry::image(GridShape{1, 2, 1}));
  const Point original({0.0, 0.0}, GridShape{1, 2, 1}, Bounds{});
  EvoHyperParams p;
  p.budget = 5;
  Rng rng(0);
  EvoState s = initialize(oracle, ImpersonateBinary{}, original, GivenPoint{Point({1.0, 1.0})}, p, rng);
  CHECK(try_candidate(s, std::vector<double>{-2.0, 0.5}, oracle, ImpersonateBinary{}, p, 0.01));
  CHECK(s.current == std::vector<double>{0.0, 1.0});
  CHECK(s.current_l2 == 1.0);
}

TEST_CASE("try_candidate stops at the budget") {
  HalfspaceOracle oracle(unit(2, 0), 1.0);
  EvoHyperParams p;
  p.budget = 1;
  Rng rng(0);
  EvoState s = initialize(oracle, ImpersonateBinary{}, Point({0.0, 0.0}), GivenPoint{Point({2.0, 0.0})}, p, rng);
  try_candidate(s, std::vector<double>{0.0, 0.0}, oracle, ImpersonateBinary{}, p, 0.01);
  CHECK_THROWS_AS(try_candidate(s, std::vector<double>{0.0, 0.0}, oracle, ImpersonateBinary{}, p, 0.01),
                  BudgetExhausted);
  CHECK(oracle.calls() == 2);
}

// ---------------------------------------------------------------------------

TEST_CASE("evolution path update") {
  const auto p = update_evolution_path(std::vector<double>{0, 0}, std::vector<double>{0.5, 0}, 0.5, 0.01);
  CHECK(p[0] == doctest::Approx(0.141067359797).epsilon(1e-10));
  CHECK(p[1] == 0.0);

  const auto decay = update_evolution_path(std::vector<double>{2.0, -1.0}, std::vector<double>{0, 0}, 0.3, 0.01);
  CHECK(decay == std::vector<double>{0.99 * 2.0, 0.99 * -1.0});

  const auto full = update_evolution_path(std::vector<double>{7.0, 7.0}, std::vector<double>{0.2, -0.4}, 0.2, 1.0);
  CHECK(full[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(full[1] == doctest::Approx(-2.0).epsilon(1e-15));
}

TEST_CASE("covariance update") {
  CHECK(update_covariance(std::vector<double>{1.0, 3.0}, std::vector<double>{0, 0}, 0.001) ==
        std::vector<double>{0.999, 0.999 * 3.0});
  const double pc = std::sqrt(0.0199);
  CHECK(update_covariance(std::vector<double>{1.0}, std::vector<double>{pc}, 0.001)[0] ==
        doctest::Approx(0.9990199).epsilon(1e-12));
  CHECK(update_covariance(std::vector<double>{1.5, 0.2}, std::vector<double>{9.0, 9.0}, 0.0) ==
        std::vector<double>{1.5, 0.2});
}

TEST_CASE("path and covariance updates agree with a scalar recomputation") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(1e-3, 0.999);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng() % 64;
    std::vector<double> p(m), z(m), c(m);
    for (std::size_t i = 0; i < m; ++i) {
      p[i] = normal(rng);
      z[i] = normal(rng);
      c[i] = std::exp(normal(rng));
    }
    const double sigma = std::exp(normal(rng)), cc = u(rng), ccov = u(rng);
    const auto p_new = update_evolution_path(p, z, sigma, cc);
    const auto c_new = update_covariance(c, p_new, ccov);
    for (std::size_t i = 0; i < m; ++i) {
      const double pe = (1.0 - cc) * p[i] + std::sqrt(cc * (2.0 - cc)) * (z[i] / sigma);
      const double ce = (1.0 - ccov) * c[i] + ccov * pe * pe;
      CHECK(std::abs(p_new[i] - pe) <= 1e-12 * std::max(1.0, std::abs(pe)));
      CHECK(std::abs(c_new[i] - ce) <= 1e-12 * std::abs(ce));
    }
  }
}

TEST_CASE("mu update follows the 1/5th rule") {
  SuccessHistory h(10);
  CHECK(update_mu(0.3, h) == 0.3);
  for (int i = 0; i < 10; ++i) h.push(i < 2);
  CHECK(update_mu(0.3, h) == doctest::Approx(0.3).epsilon(1e-15));

  SuccessHistory none(10);
  for (int i = 0; i < 10; ++i) none.push(false);
  CHECK(update_mu(1.0, none) == doctest::Approx(0.818730753078).epsilon(1e-11));

  SuccessHistory all(10);
  for (int i = 0; i < 3; ++i) all.push(true);
  CHECK(update_mu(1.0, all) == doctest::Approx(2.225540928492).epsilon(1e-11));

  // window slides
  for (int i = 0; i < 10; ++i) all.push(false);
  CHECK(all.rate() == 0.0);
  CHECK(all.size() == 10);
}

// ---------------------------------------------------------------------------

TEST_CASE("parameter validation") {
  HalfspaceProblem hp;
  EvoHyperParams p = hp.params(10);
  CHECK(p.problems(hp.oracle).empty());
  p.k = 26;
  CHECK_FALSE(p.problems(hp.oracle).empty());
  p = hp.params(0);
  CHECK_THROWS_AS(p.validate(hp.oracle), std::invalid_argument);
  p = hp.params(10);
  p.search_shape = GridShape{5, 5, 3};
  CHECK_FALSE(p.problems(hp.oracle).empty());
  p.search_shape = GridShape{20, 5, 1};
  CHECK_FALSE(p.problems(hp.oracle).empty());

  SphereOracle flat(std::vector<double>(16, 0.0), 1.0);
  EvoHyperParams q;
  q.search_shape = GridShape{2, 2, 1};
  CHECK_FALSE(q.problems(flat).empty());
  q.search_shape = GridShape{4, 4, 1};
  CHECK(q.problems(flat).empty());
  q.c_c = 1.5;
  q.c_cov = 0.0;
  CHECK(q.problems(flat).size() == 2);
}

TEST_CASE("run converges on the halfspace") {
  HalfspaceProblem hp;
  std::vector<double> finals;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const AttackResult r =
        run_evolutionary(hp.oracle, ImpersonateBinary{}, hp.original, hp.params(5000), GivenPoint{hp.start}, rng);
    finals.push_back(r.final_l2());
    CHECK(r.final_l2() >= 1.0);
  }
  const double med = median(finals);
  CHECK(med >= 1.0);
  CHECK(med <= 1.1);
}

TEST_CASE("run with T = 1") {
  HalfspaceProblem hp;
  Rng rng(4);
  const AttackResult r =
      run_evolutionary(hp.oracle, ImpersonateBinary{}, hp.original, hp.params(1), GivenPoint{hp.start}, rng);
  CHECK(r.trace.records.size() == 1);
  CHECK(r.attack_queries == 1);
  CHECK(r.init_queries == 1);
  CHECK(hp.oracle.calls() == 2);
}

TEST_CASE("run invariants") {
  GridShape g{8, 8, 3};
  Rng field(3);
  std::normal_distribution<double> normal;
  std::vector<double> w(g.size());
  for (double& v : w) v = normal(field);
  std::vector<double> x(g.size(), 0.5);
  double wx = 0.0, wn = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    wx += w[i] * x[i];
    wn += w[i] * w[i];
  }
  HalfspaceOracle inner(w, wx - 0.3 * std::sqrt(wn), InputGeometry::image(g));
  const Point original(x, g, Bounds{});

  EvoHyperParams p;
  p.search_shape = GridShape{4, 4, 3};
  p.budget = 1500;

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RecordingOracle oracle(inner);
    Rng rng(seed);
    CollectingSink sink;
    const AttackResult r = run_evolutionary(oracle, DodgeBinary{}, original, p, RandomUniform{100}, rng, &sink);

    // exact query accounting
    CHECK(oracle.calls() == r.total_queries());
    CHECK(oracle.log().size() == r.total_queries());
    CHECK(r.trace.records.size() == r.attack_queries);
    CHECK(r.attack_queries <= p.budget);
    CHECK(sink.records == r.trace.records);
    REQUIRE(sink.starts.size() == 1);
    CHECK(sink.starts[0].initial_l2 == r.trace.initial_l2);

    double last = r.trace.initial_l2;
    std::uint64_t last_index = 0;
    for (const TraceRecord& rec : r.trace.records) {
      CHECK(rec.query_index > last_index);
      last_index = rec.query_index;
      const auto& entry = oracle.log()[r.init_queries + rec.query_index - 1];
      for (double v : entry.point) REQUIRE((v >= 0.0 && v <= 1.0));
      if (rec.accepted) {
        CHECK(rec.l2 < last);
        CHECK(is_adversarial(DodgeBinary{}, entry.label));
        CHECK(l2_distance(entry.point, original.values()) == rec.l2);
        last = rec.l2;
      } else {
        CHECK(rec.l2 == last);
      }
    }
    for (double c : r.c_diag) CHECK(c > 0.0);

    // final point confirmed with an out-of-ledger query
    QueryLedger audit(1);
    CHECK(is_adversarial(DodgeBinary{}, inner.query(r.final_point, audit)));
    CHECK(r.final_l2() == doctest::Approx(l2_distance(r.final_point, original)));
    CHECK(r.final_mse() == doctest::Approx(mse(r.final_point, original)));
  }
}

TEST_CASE("run is reproducible bit for bit") {
  HalfspaceProblem hp;
  Rng a(77), b(77), c(78);
  const auto ra = run_evolutionary(hp.oracle, ImpersonateBinary{}, hp.original, hp.params(800), GivenPoint{hp.start}, a);
  const auto rb = run_evolutionary(hp.oracle, ImpersonateBinary{}, hp.original, hp.params(800), GivenPoint{hp.start}, b);
  const auto rc = run_evolutionary(hp.oracle, ImpersonateBinary{}, hp.original, hp.params(800), GivenPoint{hp.start}, c);
  CHECK(ra.trace == rb.trace);
  CHECK(ra.final_point == rb.final_point);
  CHECK_FALSE(ra.trace == rc.trace);
}

TEST_CASE("disabling CMA keeps C at identity") {
  HalfspaceProblem hp;
  EvoHyperParams p = hp.params(500);
  p.cma_enabled = false;
  Rng rng(1);
  const auto r = run_evolutionary(hp.oracle, ImpersonateBinary{}, hp.original, p, GivenPoint{hp.start}, rng);
  CHECK(r.c_diag == std::vector<double>(25, 1.0));
  double prev = r.trace.initial_l2;
  for (const auto& rec : r.trace.records) {
    CHECK(rec.sigma == doctest::Approx(0.01 * prev).epsilon(1e-12));
    prev = rec.l2;
  }
}

TEST_CASE("run stops when sigma underflows") {
  ConstantOracle oracle(4, Label{1});
  const Point original(std::vector<double>(4, 0.0));
  EvoHyperParams p;
  p.budget = 100000;
  p.k = 4;
  p.mu_init = 0.5;
  Rng rng(2);
  const auto r = run_evolutionary(oracle, ImpersonateBinary{}, original, p,
                                  GivenPoint{Point(std::vector<double>(4, 1e-10))}, rng);
  CHECK(r.attack_queries < p.budget);
  CHECK(0.01 * r.final_l2() < kSigmaFloor);
}

TEST_CASE("C stays positive over a million synthetic updates") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> normal;
  std::vector<double> c(8, 1.0), pc(8, 0.0);
  double smallest = 1.0;
  for (int step = 0; step < 1'000'000; ++step) {
    std::vector<double> z(8, 0.0);
    z[step % 8] = (step % 3 == 0) ? 0.0 : normal(rng) * 1e-3;
    pc = update_evolution_path(pc, z, 1.0, 0.01);
    c = update_covariance(c, pc, 0.001);
    for (double v : c) smallest = std::min(smallest, v);
  }
  CHECK(smallest > 0.0);
}

TEST_CASE("bias raises the acceptance rate on a pure-distance objective") {
  ConstantOracle oracle(1000, Label{1});
  const Point original(std::vector<double>(1000, 0.0));
  std::vector<double> start(1000, 0.0);
  std::mt19937_64 srng(1);
  std::normal_distribution<double> normal;
  for (double& v : start) v = normal(srng);

  auto acceptance = [](const AttackResult& r) {
    double a = 0.0;
    for (const auto& rec : r.trace.records) a += rec.accepted;
    return a / static_cast<double>(r.trace.records.size());
  };
  EvoHyperParams biased;
  biased.budget = 2000;
  EvoHyperParams unbiased = biased;
  unbiased.mu_init = 0.0;
  unbiased.adapt_mu = false;
  Rng r1(3), r2(3);
  const auto with_bias = run_evolutionary(oracle, ImpersonateBinary{}, original, biased, GivenPoint{Point(start)}, r1);
  const auto without = run_evolutionary(oracle, ImpersonateBinary{}, original, unbiased, GivenPoint{Point(start)}, r2);
  CHECK(acceptance(without) < acceptance(with_bias));
}
