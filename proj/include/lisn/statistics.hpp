#pragma once

// One-way ANOVA and Tukey HSD (Tukey-Kramer for unequal group sizes).

#include <span>
#include <stdexcept>
#include <vector>

namespace lisn {

using Group = std::vector<double>;

struct AnovaResult {
  double f = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p_value = 1.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
  // Zero within-group variance: F is 0 or +inf and p is 1 or 0 by convention.
  bool degenerate = false;
};

AnovaResult anova_oneway(std::span<const Group> groups);

struct TukeyPair {
  std::size_t first = 0;
  std::size_t second = 0;
  double mean_difference = 0.0;  // mean(first) - mean(second)
  double q = 0.0;
  double p_adjusted = 1.0;
  bool significant = false;
};

struct TukeyResult {
  std::vector<TukeyPair> pairs;  // first < second, lexicographic order
  double ms_within = 0.0;
  int df_within = 0;
  double alpha = 0.05;

  // Pair lookup in either order; the sign of mean_difference follows (i, j).
  TukeyPair pair(std::size_t i, std::size_t j) const;
};

TukeyResult tukey_hsd(std::span<const Group> groups, double alpha = 0.05);

// P(Q <= q) for the studentized range of k normal means with df degrees of
// freedom in the variance estimate. df = +inf gives the known-variance case.
double studentized_range_cdf(double q, int k, double df);

double f_distribution_sf(double f, double df1, double df2);

}  // namespace lisn
