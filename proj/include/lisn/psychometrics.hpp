#pragma once

// Sentence-equivalence analysis: aTSL, per-sentence logistic psychometric
// fits, fit-quality gating, l-infinity selection and equalization gains.
//
// The psychometric function is p(x) = 1 / (1 + exp(-(a + b x))) with x the
// adjusted target sentence level (dB re the listener's SRT). s = b/4 is the
// slope at the 50% point and r = -a/b is the level where p = 0.5.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lisn/staircase.hpp"

namespace lisn {

struct TrialObservation {
  std::string sentence_id;
  double atsl = 0.0;
  int words_total = 0;
  int words_correct = 0;
};

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scored rows only; training rows are skipped.
std::vector<TrialObservation> compute_atsl(std::span<const TrialRecord> trials, const SrtEstimate& srt);
std::vector<TrialObservation> compute_atsl(std::span<const TrialRecord> trials, double reference_level);

double logistic(double z);

struct FitOptions {
  int max_iterations = 100;
  double tolerance = 1e-8;  // max parameter change
  double slope_cap = 10.0;  // |b| bound under separation, per dB
};

struct PsychometricFit {
  std::string sentence_id;
  double a = 0.0;
  double b = 0.0;
  double s = 0.0;
  double r = 0.0;
  double r_squared = 0.0;  // NaN when the proportions have no variance
  int n_trials = 0;
  int n_words = 0;
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  std::vector<double> log_likelihood_trace;  // one entry per accepted iterate
  double gradient_norm = 0.0;

  double predict(double atsl) const { return logistic(a + b * atsl); }
};

// Binomial maximum likelihood by Newton/IRLS with step halving.
PsychometricFit fit_logistic(std::span<const TrialObservation> observations, const FitOptions& options = {});

// Groups observations by sentence_id and fits each group.
std::vector<PsychometricFit> fit_all(std::span<const TrialObservation> observations,
                                     const FitOptions& options = {});

struct SelectionRegion {
  double r_lo = 0.0, r_hi = 0.0;
  double s_lo = 0.0, s_hi = 0.0;
};

struct SelectionCandidate {
  std::string sentence_id;
  double r = 0.0, s = 0.0;
  double z_r = 0.0, z_s = 0.0;
  double distance = 0.0;
  bool selected = false;
};

struct SelectionResult {
  std::vector<std::string> selected_ids;  // in admission order
  SelectionRegion region;
  double median_r = 0.0, median_s = 0.0;
  double sd_r = 0.0, sd_s = 0.0;
  double threshold = 0.0;
  std::vector<SelectionCandidate> candidates;  // every fit that passed the gate
  std::vector<std::string> gated_out;         // failed R^2 or did not converge

  bool is_selected(const std::string& id) const;
};

SelectionResult select_sentences(std::span<const PsychometricFit> fits, int n_select = 120,
                                 double r2_min = 0.5);

// gain_i = r_i for every selected sentence, optionally re-centred to zero mean.
std::map<std::string, double> equalization_gains(const SelectionResult& selection,
                                                 std::span<const PsychometricFit> fits,
                                                 bool subtract_mean = false);

// Slope (proportion per dB) of the pointwise mean of the fitted curves where
// that mean crosses the midpoint of its asymptotes.
double averaged_curve_slope(std::span<const PsychometricFit> fits);

}  // namespace lisn
