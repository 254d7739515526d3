#include "lisn/psychometrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace lisn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Binomial log-likelihood without the constant combinatorial term.
double log_likelihood(std::span<const TrialObservation> obs, double centre, double a_c, double b) {
  double ll = 0.0;
  for (const auto& o : obs) {
    const double eta = a_c + b * (o.atsl - centre);
    ll += o.words_correct * eta - o.words_total * log1pexp(eta);
  }
  return ll;
}

struct Gradient {
  double ga = 0.0, gb = 0.0;
  double haa = 0.0, hab = 0.0, hbb = 0.0;  // information matrix entries
};

Gradient gradient(std::span<const TrialObservation> obs, double centre, double a_c, double b) {
  Gradient g;
  for (const auto& o : obs) {
    const double x = o.atsl - centre;
    const double p = logistic(a_c + b * x);
    const double resid = o.words_correct - o.words_total * p;
    const double w = o.words_total * p * (1.0 - p);
    g.ga += resid;
    g.gb += resid * x;
    g.haa += w;
    g.hab += w * x;
    g.hbb += w * x * x;
  }
  return g;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double z_score(double dev, double sd) {
  if (sd > 0.0) return dev / sd;
  return dev == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), dev);
}

}  // namespace

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<TrialObservation> compute_atsl(std::span<const TrialRecord> trials, double reference_level) {
  if (!std::isfinite(reference_level)) throw AnalysisError("aTSL reference level is not finite");
  std::vector<TrialObservation> out;
  for (const auto& t : trials) {
    if (t.is_training) continue;
    out.push_back({t.sentence_id, t.level - reference_level, t.words_total, t.words_correct});
  }
  return out;
}

std::vector<TrialObservation> compute_atsl(std::span<const TrialRecord> trials, const SrtEstimate& srt) {
  if (!srt.valid) throw AnalysisError("aTSL needs a valid SRT estimate");
  return compute_atsl(trials, srt.value);
}

PsychometricFit fit_logistic(std::span<const TrialObservation> obs, const FitOptions& options) {
  if (obs.empty()) throw AnalysisError("fit_logistic needs at least one observation");
  PsychometricFit fit;
  fit.sentence_id = obs.front().sentence_id;
  fit.n_trials = static_cast<int>(obs.size());

  long double k_sum = 0.0L, x_sum = 0.0L;
  std::set<double> levels;
  for (const auto& o : obs) {
    if (o.words_total < 1 || o.words_correct < 0 || o.words_correct > o.words_total)
      throw AnalysisError("observation word counts out of range for sentence " + o.sentence_id);
    if (!std::isfinite(o.atsl)) throw AnalysisError("non-finite aTSL for sentence " + o.sentence_id);
    fit.n_words += o.words_total;
    k_sum += o.words_correct;
    x_sum += o.atsl;
    levels.insert(o.atsl);
  }
  const double centre = static_cast<double>(x_sum / static_cast<long double>(obs.size()));
  const double k_total = static_cast<double>(k_sum);

  double a_c = std::log((k_total + 0.5) / (fit.n_words - k_total + 0.5));
  double b = 0.0;

  auto finish = [&](bool converged) {
    fit.converged = converged;
    fit.b = b;
    fit.a = a_c - b * centre;
    fit.s = fit.b / 4.0;
    fit.r = b != 0.0 ? centre - a_c / b : kNaN;
    fit.log_likelihood = log_likelihood(obs, centre, a_c, b);
    const Gradient g = gradient(obs, centre, a_c, b);
    fit.gradient_norm = std::hypot(g.ga, g.gb);

    double y_mean = 0.0;
    for (const auto& o : obs) y_mean += static_cast<double>(o.words_correct) / o.words_total;
    y_mean /= static_cast<double>(obs.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (const auto& o : obs) {
      const double y = static_cast<double>(o.words_correct) / o.words_total;
      const double p = logistic(a_c + b * (o.atsl - centre));
      ss_tot += (y - y_mean) * (y - y_mean);
      ss_res += (y - p) * (y - p);
    }
    fit.r_squared = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : kNaN;
    return fit;
  };

  // All words right or all wrong, or a single level: the slope is not identified.
  if (k_total == 0.0 || k_total == fit.n_words || levels.size() < 2) {
    fit.log_likelihood_trace.push_back(log_likelihood(obs, centre, a_c, b));
    return finish(false);
  }

  double ll = log_likelihood(obs, centre, a_c, b);
  fit.log_likelihood_trace.push_back(ll);
  for (int it = 0; it < options.max_iterations; ++it) {
    fit.iterations = it + 1;
    const Gradient g = gradient(obs, centre, a_c, b);
    const double det = g.haa * g.hbb - g.hab * g.hab;
    if (!(det > 0.0)) break;
    const double da = (g.hbb * g.ga - g.hab * g.gb) / det;
    const double db = (g.haa * g.gb - g.hab * g.ga) / det;

    double step = 1.0;
    double next_a = a_c + da, next_b = b + db, next_ll = log_likelihood(obs, centre, next_a, next_b);
    for (int halving = 0; halving < 40 && !(next_ll >= ll); ++halving) {
      step *= 0.5;
      next_a = a_c + step * da;
      next_b = b + step * db;
      next_ll = log_likelihood(obs, centre, next_a, next_b);
    }
    if (!(next_ll >= ll)) break;

    const double change = std::max(std::abs(next_a - a_c), std::abs(next_b - b));
    a_c = next_a;
    b = next_b;
    ll = next_ll;
    fit.log_likelihood_trace.push_back(ll);

    if (std::abs(b) > options.slope_cap) {
      // Separation: the likelihood keeps rising with |b|. Pin the slope and
      // refit the intercept alone.
      b = std::copysign(options.slope_cap, b);
      for (int j = 0; j < options.max_iterations; ++j) {
        const Gradient gi = gradient(obs, centre, a_c, b);
        if (!(gi.haa > 0.0)) break;
        const double d = gi.ga / gi.haa;
        a_c += d;
        if (std::abs(d) < options.tolerance) break;
      }
      fit.log_likelihood_trace.push_back(log_likelihood(obs, centre, a_c, b));
      return finish(false);
    }
    if (change < options.tolerance) return finish(true);
  }
  return finish(false);
}

std::vector<PsychometricFit> fit_all(std::span<const TrialObservation> observations, const FitOptions& options) {
  std::map<std::string, std::vector<TrialObservation>> by_sentence;
  for (const auto& o : observations) by_sentence[o.sentence_id].push_back(o);
  std::vector<PsychometricFit> fits;
  fits.reserve(by_sentence.size());
  for (const auto& [id, obs] : by_sentence) fits.push_back(fit_logistic(obs, options));
  return fits;
}

bool SelectionResult::is_selected(const std::string& id) const {
  return std::find(selected_ids.begin(), selected_ids.end(), id) != selected_ids.end();
}

SelectionResult select_sentences(std::span<const PsychometricFit> fits, int n_select, double r2_min) {
  if (n_select < 1) throw AnalysisError("n_select must be >= 1");
  SelectionResult res;
  std::vector<const PsychometricFit*> survivors;
  for (const auto& f : fits) {
    if (f.converged && f.r_squared >= r2_min && std::isfinite(f.r) && std::isfinite(f.s))
      survivors.push_back(&f);
    else
      res.gated_out.push_back(f.sentence_id);
  }
  if (static_cast<int>(survivors.size()) < n_select)
    throw AnalysisError("only " + std::to_string(survivors.size()) + " fits pass the quality gate; " +
                        std::to_string(n_select) + " requested");

  std::vector<double> rs, ss;
  for (const auto* f : survivors) {
    rs.push_back(f->r);
    ss.push_back(f->s);
  }
  res.median_r = median(rs);
  res.median_s = median(ss);
  res.sd_r = sample_sd(rs);
  res.sd_s = sample_sd(ss);

  for (const auto* f : survivors) {
    SelectionCandidate c;
    c.sentence_id = f->sentence_id;
    c.r = f->r;
    c.s = f->s;
    c.z_r = z_score(f->r - res.median_r, res.sd_r);
    c.z_s = z_score(f->s - res.median_s, res.sd_s);
    c.distance = std::max(std::abs(c.z_r), std::abs(c.z_s));
    res.candidates.push_back(std::move(c));
  }
  std::sort(res.candidates.begin(), res.candidates.end(), [](const auto& x, const auto& y) {
    if (x.distance != y.distance) return x.distance < y.distance;
    return x.sentence_id < y.sentence_id;
  });
  for (int i = 0; i < n_select; ++i) {
    res.candidates[i].selected = true;
    res.selected_ids.push_back(res.candidates[i].sentence_id);
  }
  res.threshold = res.candidates[n_select - 1].distance;
  res.region = {res.median_r - res.threshold * res.sd_r, res.median_r + res.threshold * res.sd_r,
                res.median_s - res.threshold * res.sd_s, res.median_s + res.threshold * res.sd_s};
  return res;
}

std::map<std::string, double> equalization_gains(const SelectionResult& selection,
                                                 std::span<const PsychometricFit> fits, bool subtract_mean) {
  std::map<std::string, double> gains;
  for (const auto& id : selection.selected_ids) {
    auto it = std::find_if(fits.begin(), fits.end(), [&](const auto& f) { return f.sentence_id == id; });
    if (it == fits.end()) throw AnalysisError("no fit for selected sentence " + id);
    gains[id] = it->r;
  }
  if (subtract_mean && !gains.empty()) {
    double mean = 0.0;
    for (const auto& [id, g] : gains) mean += g;
    mean /= static_cast<double>(gains.size());
    for (auto& [id, g] : gains) g -= mean;
  }
  return gains;
}

double averaged_curve_slope(std::span<const PsychometricFit> fits) {
  std::vector<const PsychometricFit*> usable;
  for (const auto& f : fits)
    if (std::isfinite(f.a) && std::isfinite(f.b) && f.b != 0.0) usable.push_back(&f);
  if (usable.empty()) throw AnalysisError("averaged_curve_slope needs at least one fit with a slope");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* f : usable) {
    const double r = -f->a / f->b;
    const double reach = 40.0 / std::abs(f->b);  // logistic(40) == 1 in double
    lo = std::min(lo, r - reach);
    hi = std::max(hi, r + reach);
  }
  auto mean_curve = [&](double x) {
    double sum = 0.0;
    for (const auto* f : usable) sum += f->predict(x);
    return sum / static_cast<double>(usable.size());
  };
  const double target = 0.5 * (mean_curve(lo) + mean_curve(hi));

  // Bracket the crossing on a dense grid, then bisect.
  const int n_grid = 20000;
  const double dx = (hi - lo) / n_grid;
  double x0 = lo, f0 = mean_curve(lo) - target;
  double bracket_lo = lo, bracket_hi = hi;
  for (int i = 1; i <= n_grid; ++i) {
    const double x1 = lo + i * dx;
    const double f1 = mean_curve(x1) - target;
    if (f0 == 0.0 || (f0 < 0.0) != (f1 < 0.0)) {
      bracket_lo = x0;
      bracket_hi = x1;
      break;
    }
    x0 = x1;
    f0 = f1;
  }
  double flo = mean_curve(bracket_lo) - target;
  for (int i = 0; i < 200 && bracket_hi - bracket_lo > 1e-12; ++i) {
    const double mid = 0.5 * (bracket_lo + bracket_hi);
    const double fm = mean_curve(mid) - target;
    if ((fm < 0.0) == (flo < 0.0)) {
      bracket_lo = mid;
      flo = fm;
    } else {
      bracket_hi = mid;
    }
  }
  const double crossing = 0.5 * (bracket_lo + bracket_hi);
  const double h = 1e-4;
  return (mean_curve(crossing + h) - mean_curve(crossing - h)) / (2.0 * h);
}

}  // namespace lisn
