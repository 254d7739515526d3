#pragma once

// End-to-end sentence-equivalence analysis over session logs or a flat trial
// table: exclusions, aTSL, fits, gating, selection, gains and the exploratory
// group-effect statistics.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lisn/corpus.hpp"
#include "lisn/psychometrics.hpp"
#include "lisn/session_log.hpp"
#include "lisn/statistics.hpp"

namespace lisn {

struct BlockData {
  std::string participant;
  int block_index = 1;
  std::vector<TrialRecord> trials;  // training rows included, flagged
  SrtEstimate srt;
};

// Completed blocks only; restarted attempts carry no SRT.
std::vector<BlockData> blocks_from_log(const SessionLog& log);

// Columns: participant, block, trial, sentence_id, level, words_total,
// words_correct, training [, snr, block_srt]. Without block_srt the SRT is rebuilt
// from the responses.
std::vector<BlockData> load_flat_trial_table(const std::filesystem::path& path, int min_midpoints = 3);
void write_flat_trial_table(const std::filesystem::path& path, std::span<const BlockData> blocks);

enum class AtslReference { Block, Participant };

struct AnalysisConfig {
  std::set<std::string> exclude_participants;
  std::set<std::string> exclude_sentences;  // removed after listening checks
  int n_select = 120;
  double r2_min = 0.5;
  AtslReference reference = AtslReference::Block;
  bool subtract_mean_gain = false;
  FitOptions fit;
  bool tukey_participants = true;
};

struct LabelledObservation {
  std::string participant;
  TrialObservation obs;
};

struct GroupEffect {
  std::string factor;
  std::vector<std::string> labels;
  std::vector<std::size_t> sizes;
  AnovaResult anova;
  std::optional<TukeyResult> tukey;
};

struct AnalysisReport {
  int blocks_used = 0;
  int blocks_without_valid_srt = 0;
  std::vector<LabelledObservation> observations;  // after exclusions
  std::vector<PsychometricFit> fits;
  SelectionResult selection;
  std::map<std::string, double> gains;
  double slope_all = 0.0;        // averaged curve of every converged fit
  double slope_equalized = 0.0;  // selected fits after applying the gains
  std::vector<GroupEffect> effects;
};

// The fitted curve of a sentence after presenting it `gain_db` louder.
PsychometricFit shifted_fit(const PsychometricFit& fit, double gain_db);

AnalysisReport run_analysis(std::span<const BlockData> blocks, const AnalysisConfig& config);

void write_fits_table(const std::filesystem::path& path, const AnalysisReport& report);
nlohmann::json selection_report(const AnalysisReport& report);
nlohmann::json statistics_report(const AnalysisReport& report);
void write_gain_table(const std::filesystem::path& path, const AnalysisReport& report);

// Copy of the manifest with eq_gain_db set for selected sentences and the
// unselected ones dropped.
CorpusManifest adjusted_manifest(const CorpusManifest& manifest, const AnalysisReport& report);

}  // namespace lisn
