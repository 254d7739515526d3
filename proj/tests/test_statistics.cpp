#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "lisn/statistics.hpp"
#include "oracles.hpp"

using namespace lisn;

namespace {

std::vector<Group> random_groups(std::mt19937_64& rng, int k, int n_min, int n_max, double shift = 0.0) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Group> gs(k);
  for (int g = 0; g < k; ++g) {
    const int n = n_min + static_cast<int>(rng() % (n_max - n_min + 1));
    for (int i = 0; i < n; ++i) gs[g].push_back(50.0 + 3.0 * z(rng) + (g == 0 ? shift : 0.0));
  }
  return gs;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Tukey-Kramer adjusted p for one pair, from the independent cdf.
double oracle_tukey_p(const std::vector<Group>& gs, std::size_t i, std::size_t j) {
  double ssw = 0;
  std::size_t n = 0;
  std::vector<double> means;
  for (const auto& g : gs) {
    double m = 0;
    for (double x : g) m += x;
    m /= g.size();
    means.push_back(m);
    for (double x : g) ssw += (x - m) * (x - m);
    n += g.size();
  }
  const double df = static_cast<double>(n - gs.size());
  const double se = std::sqrt(ssw / df / 2.0 * (1.0 / gs[i].size() + 1.0 / gs[j].size()));
  const double q = std::abs(means[i] - means[j]) / se;
  return 1.0 - oracle::studentized_range_cdf(q, static_cast<int>(gs.size()), df);
}

}  // namespace

TEST_CASE("ANOVA matches the sum-of-squares oracle") {
  std::mt19937_64 rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 2 + static_cast<int>(rng() % 5);
    const auto gs = random_groups(rng, k, 2, 12, rep % 3 ? 0.0 : 2.0);
    const auto r = anova_oneway(gs);
    const auto o = oracle::ss_anova(gs);
    CHECK(r.df_between == o.df1);
    CHECK(r.df_within == o.df2);
    CHECK(rel(r.f, o.f) < 1e-9);
    CHECK(rel(r.p_value, o.p) < 1e-9);
    CHECK(r.p_value == doctest::Approx(f_distribution_sf(r.f, r.df_between, r.df_within)));
  }
}

TEST_CASE("ANOVA invariances") {
  std::mt19937_64 rng(5);
  const auto gs = random_groups(rng, 4, 5, 9, 1.0);
  const auto base = anova_oneway(gs);
  auto affine = gs;
  for (auto& g : affine)
    for (auto& x : g) x = -2.5 * x + 1000.0;
  const auto moved = anova_oneway(affine);
  CHECK(rel(moved.f, base.f) < 1e-9);
  CHECK(rel(moved.p_value, base.p_value) < 1e-9);
  std::vector<Group> permuted = {gs[2], gs[0], gs[3], gs[1]};
  CHECK(rel(anova_oneway(permuted).f, base.f) < 1e-12);
}

TEST_CASE("two groups over 10856 rows give F(1, 10854)") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Group> gs(2);
  for (int i = 0; i < 10856; ++i) gs[i % 2].push_back(63.0 + z(rng) + (i % 2 ? 0.05 : 0.0));
  const auto r = anova_oneway(gs);
  CHECK(r.df_between == 1);
  CHECK(r.df_within == 10854);
  const auto o = oracle::ss_anova(gs);
  CHECK(rel(r.f, o.f) < 1e-9);
  CHECK(rel(r.p_value, o.p) < 1e-9);
}

TEST_CASE("ANOVA degenerate inputs") {
  const std::vector<Group> constant = {{1, 1, 1}, {1, 1}};
  const auto c = anova_oneway(constant);
  CHECK(c.degenerate);
  CHECK(c.f == 0.0);
  CHECK(c.p_value == 1.0);
  const auto d = anova_oneway(std::vector<Group>{{1, 1}, {2, 2}});
  CHECK(d.degenerate);
  CHECK(std::isinf(d.f));
  CHECK(d.p_value == 0.0);
  CHECK_THROWS(anova_oneway(std::vector<Group>{{1, 2, 3}}));
  CHECK_THROWS(anova_oneway(std::vector<Group>{{1, 2}, {}}));
  CHECK_THROWS(anova_oneway(std::vector<Group>{{1}, {2}}));
}

TEST_CASE("studentized range cdf against frozen reference values") {
  struct Ref {
    double q;
    int k;
    double df;
    double p;
  };
  // Independent high-precision values (scipy.stats.studentized_range).
  const Ref refs[] = {
      {3.5, 3, 10, 0.9228966891615896},  {2.0, 4, 20, 0.4945596545878861}, {4.2, 5, 60, 0.9665139331185727},
      {1.0, 2, 5, 0.48891591956971947},  {3.31, 3, 1000, 0.949152699934008}, {5.0, 8, 30, 0.9742712672079173},
      {3.0, 3, std::numeric_limits<double>::infinity(), 0.9144574283450421},
  };
  for (const auto& r : refs) {
    CAPTURE(r.q);
    CAPTURE(r.k);
    CHECK(std::abs(studentized_range_cdf(r.q, r.k, r.df) - r.p) < 1e-8);
    if (std::isfinite(r.df)) CHECK(std::abs(oracle::studentized_range_cdf(r.q, r.k, r.df) - r.p) < 1e-6);
  }
  CHECK(studentized_range_cdf(0.0, 3, 10) == 0.0);
  CHECK_THROWS(studentized_range_cdf(1.0, 1, 10));
  CHECK_THROWS(studentized_range_cdf(1.0, 3, 0));
}

TEST_CASE("studentized range cdf is monotone in q") {
  double prev = 0.0;
  for (double q = 0.25; q < 8.0; q += 0.25) {
    const double p = studentized_range_cdf(q, 4, 25);
    CHECK(p >= prev);
    CHECK(p <= 1.0);
    prev = p;
  }
}

TEST_CASE("Tukey adjusted p matches the independent studentized range") {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Group> gs(4);
  const double shifts[] = {0.0, 0.6, 1.5, -0.4};
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 8; ++i) gs[g].push_back(shifts[g] + z(rng));
  const auto t = tukey_hsd(gs);
  CHECK(t.df_within == 28);
  REQUIRE(t.pairs.size() == 6);
  for (const auto& p : t.pairs) {
    CAPTURE(p.first);
    CAPTURE(p.second);
    CHECK(std::abs(p.p_adjusted - oracle_tukey_p(gs, p.first, p.second)) < 1e-3);
    CHECK(p.significant == (p.p_adjusted < 0.05));
  }
  CHECK(t.pair(2, 0).mean_difference == doctest::Approx(-t.pair(0, 2).mean_difference));
  CHECK_THROWS(t.pair(0, 4));

  // Unequal sizes use the Tukey-Kramer standard error.
  gs[1].resize(5);
  gs[3].push_back(0.3);
  const auto tk = tukey_hsd(gs);
  for (const auto& p : tk.pairs)
    CHECK(std::abs(p.p_adjusted - oracle_tukey_p(gs, p.first, p.second)) < 1e-3);
}

TEST_CASE("Tukey flags exactly the pairs involving a shifted group") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Group> gs(5);
  for (int g = 0; g < 5; ++g)
    for (int i = 0; i < 12; ++i) gs[g].push_back(z(rng) + (g == 2 ? 10.0 : 0.0));
  // Remove the sampling differences among the unshifted groups.
  for (int g = 0; g < 5; ++g) {
    double m = 0;
    for (double x : gs[g]) m += x;
    m /= gs[g].size();
    for (double& x : gs[g]) x += (g == 2 ? 10.0 : 0.0) - m;
  }
  const auto t = tukey_hsd(gs);
  for (const auto& p : t.pairs) {
    const bool involves = p.first == 2 || p.second == 2;
    CHECK(p.significant == involves);
    if (!involves) CHECK(p.p_adjusted == doctest::Approx(1.0));
  }
}
