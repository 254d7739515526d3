#pragma once

// Simulated respondent: every word is an independent Bernoulli trial whose
// success probability follows a logistic function of the presentation level.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lisn/session_log.hpp"
#include "lisn/staircase.hpp"

namespace lisn {

struct SimulatedListener {
  double true_srt = 0.0;  // dB re srt_reference where p = 0.5
  double slope_b = 0.5;   // per dB, > 0
  std::uint64_t rng_seed = 1;
  // Extra per-sentence difficulty (dB added to true_srt).
  std::map<std::string, double> sentence_offsets;

  void validate() const;
};

class ListenerSimulator {
 public:
  explicit ListenerSimulator(SimulatedListener listener);

  double probability(double level, double srt_reference, const std::string& sentence_id = {}) const;
  int respond(double level, double srt_reference, int words_total, const std::string& sentence_id = {});

  const SimulatedListener& listener() const { return listener_; }

 private:
  double uniform();

  SimulatedListener listener_;
  std::mt19937_64 rng_;
};

struct SimulationCorpus {
  std::vector<std::string> sentence_ids;
  std::vector<int> word_counts;
  std::array<std::size_t, 2> story_lengths{0, 0};
};

struct SimulatedSessionSpec {
  std::string session_id;
  nlohmann::json participant = nlohmann::json::object();
  StaircaseConfig config;
  int max_restarts = 5;
  std::uint64_t session_seed = 1;  // sentence order and story offsets
  Calibration calibration;
};

// Responses are scored against config.competing_level as the reference, so
// true_srt is an SNR.
SessionLog run_simulated_session(const SimulatedSessionSpec& spec, const SimulatedListener& listener,
                                 const SimulationCorpus& corpus);

struct SimulationSummary {
  int sessions = 0;
  int failed_sessions = 0;
  int restarts = 0;
  int blocks = 0;
  int valid_blocks = 0;
  double mean_srt = 0.0;  // over valid blocks, dB SPL
  double sd_srt = 0.0;
  std::vector<double> srts;
};

SimulationSummary summarize_simulations(std::span<const SessionLog> logs);

std::string format_summary(const SimulationSummary& s);

}  // namespace lisn
