#include "lisn/statistics.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lisn {

namespace {

void check_groups(std::span<const Group> groups) {
  if (groups.size() < 2) throw std::invalid_argument("ANOVA needs at least two groups");
  std::size_t n = 0;
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("ANOVA groups must be non-empty");
    n += g.size();
  }
  if (n <= groups.size()) throw std::invalid_argument("ANOVA needs more observations than groups");
}

double mean_of(const Group& g) {
  long double s = 0.0L;
  for (double x : g) s += x;
  return static_cast<double>(s / static_cast<long double>(g.size()));
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Composite fixed-order Gauss-Legendre over `pieces` equal panels.
template <class F>
double composite_gauss(F&& f, double lo, double hi, int pieces) {
  const double h = (hi - lo) / pieces;
  double sum = 0.0;
  for (int i = 0; i < pieces; ++i) {
    const double a = lo + i * h;
    sum += boost::math::quadrature::gauss<double, 10>::integrate(f, a, a + h);
  }
  return sum;
}

// P(range of k standard normals <= w).
double range_cdf(double w, int k) {
  if (w <= 0.0) return 0.0;
  auto integrand = [w, k](double z) {
    // Phi(z) - Phi(z - w) through erfc keeps precision in both tails.
    const double diff = 0.5 * (std::erfc(-z / std::numbers::sqrt2) - std::erfc(-(z - w) / std::numbers::sqrt2));
    if (diff <= 0.0) return 0.0;
    return normal_pdf(z) * std::pow(diff, k - 1);
  };
  // phi(z) < 1e-16 outside [-8.5, 8.5].
  return std::clamp(k * composite_gauss(integrand, -8.5, 8.5, 24), 0.0, 1.0);
}

}  // namespace

double f_distribution_sf(double f, double df1, double df2) {
  if (!(f > 0.0)) return 1.0;
  if (std::isinf(f)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f(df1, df2), f));
}

AnovaResult anova_oneway(std::span<const Group> groups) {
  check_groups(groups);
  std::size_t n = 0;
  long double total = 0.0L;
  for (const auto& g : groups) {
    n += g.size();
    for (double x : g) total += x;
  }
  const double grand = static_cast<double>(total / static_cast<long double>(n));

  long double ssb = 0.0L, ssw = 0.0L;
  for (const auto& g : groups) {
    const double m = mean_of(g);
    ssb += static_cast<long double>(g.size()) * (m - grand) * (m - grand);
    for (double x : g) ssw += static_cast<long double>(x - m) * (x - m);
  }

  AnovaResult r;
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = static_cast<int>(n - groups.size());
  r.ss_between = static_cast<double>(ssb);
  r.ss_within = static_cast<double>(ssw);
  if (r.ss_within == 0.0) {
    r.degenerate = true;
    r.f = r.ss_between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    r.p_value = r.ss_between > 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.f = (r.ss_between / r.df_between) / (r.ss_within / r.df_within);
  r.p_value = f_distribution_sf(r.f, r.df_between, r.df_within);
  return r;
}

double studentized_range_cdf(double q, int k, double df) {
  if (k < 2) throw std::invalid_argument("studentized range needs k >= 2");
  if (!(df > 0.0)) throw std::invalid_argument("studentized range needs df > 0");
  if (!(q > 0.0)) return 0.0;
  if (std::isinf(q)) return 1.0;
  if (std::isinf(df) || df > 1e7) return range_cdf(q, k);

  // s = sqrt(chi2_df / df); integrate the range cdf at q*s against its density.
  const boost::math::chi_squared chi2(df);
  const double s_lo = std::sqrt(boost::math::quantile(chi2, 1e-15) / df);
  const double s_hi = std::sqrt(boost::math::quantile(boost::math::complement(chi2, 1e-15)) / df);
  auto integrand = [&](double s) {
    const double density = 2.0 * df * s * boost::math::pdf(chi2, df * s * s);
    return density * range_cdf(q * s, k);
  };
  // Panels on each side of the mode of s so the peak sits on a panel edge.
  const double mode = std::clamp(std::sqrt(std::max(df - 1.0, 0.0) / df), s_lo, s_hi);
  const double v = composite_gauss(integrand, s_lo, mode, 4) + composite_gauss(integrand, mode, s_hi, 8);
  return std::clamp(v, 0.0, 1.0);
}

TukeyPair TukeyResult::pair(std::size_t i, std::size_t j) const {
  const std::size_t a = std::min(i, j), b = std::max(i, j);
  for (const auto& p : pairs) {
    if (p.first == a && p.second == b) {
      TukeyPair out = p;
      if (i > j) {
        std::swap(out.first, out.second);
        out.mean_difference = -out.mean_difference;
      }
      return out;
    }
  }
  throw std::out_of_range("no such Tukey pair");
}

TukeyResult tukey_hsd(std::span<const Group> groups, double alpha) {
  const AnovaResult anova = anova_oneway(groups);
  TukeyResult r;
  r.alpha = alpha;
  r.df_within = anova.df_within;
  r.ms_within = anova.ss_within / anova.df_within;
  const int k = static_cast<int>(groups.size());

  std::vector<double> means;
  for (const auto& g : groups) means.push_back(mean_of(g));

  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      TukeyPair p;
      p.first = i;
      p.second = j;
      p.mean_difference = means[i] - means[j];
      const double se = std::sqrt(0.5 * r.ms_within *
                                  (1.0 / static_cast<double>(groups[i].size()) +
                                   1.0 / static_cast<double>(groups[j].size())));
      if (se == 0.0) {
        p.q = p.mean_difference == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
      } else {
        p.q = std::abs(p.mean_difference) / se;
      }
      p.p_adjusted = std::clamp(1.0 - studentized_range_cdf(p.q, k, r.df_within), 0.0, 1.0);
      p.significant = p.p_adjusted < alpha;
      r.pairs.push_back(p);
    }
  }
  return r;
}

}  // namespace lisn
