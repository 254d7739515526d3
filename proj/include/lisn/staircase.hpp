#pragma once

// Adaptive SRT staircase: level proposal, response scoring, reversal
// tracking, midpoint pairing and block chaining.
//
// Levels are target sentence levels in dB SPL. The engine is a pure value
// type; every mutation goes through record_response().

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lisn {

struct LevelRange {
  double min = 30.0;
  double max = 85.0;
};

struct StaircaseConfig {
  double competing_level = 65.0;  // dB SPL
  double training_snr = 7.0;      // dB
  int training_trials = 3;
  double big_step = 4.0;
  double small_step = 2.0;
  int block_length = 31;  // scored trials per block
  int blocks = 6;
  double next_block_offset = 3.0;
  LevelRange level_clamp{};
  int min_midpoints = 3;
  // Clinical mode: keep presenting past block_length until the SRT is valid.
  bool extend_until_valid = false;
  int max_extra_trials = 20;

  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

enum class Phase { Training, BigStep, SmallStep, Complete, RestartRequired };
enum class Direction { None, Down, Up };
enum class ReversalKind { Positive, Negative };

const char* to_string(Phase p);
const char* to_string(Direction d);
const char* to_string(ReversalKind k);
Phase phase_from_string(const std::string& s);
Direction direction_from_string(const std::string& s);
ReversalKind reversal_kind_from_string(const std::string& s);

struct TrialRecord {
  int block_index = 1;
  int trial_index = 0;  // 0-based within the block attempt, training included
  std::string sentence_id;
  double level = 0.0;  // TSL, dB SPL
  double snr = 0.0;    // level - competing_level
  int words_total = 0;
  int words_correct = 0;
  bool is_training = false;

  bool operator==(const TrialRecord&) const = default;
};

struct Reversal {
  ReversalKind kind = ReversalKind::Positive;
  double level = 0.0;
  int trial_index = 0;

  bool operator==(const Reversal&) const = default;
};

struct SrtEstimate {
  double value = 0.0;  // NaN when no midpoint exists
  std::vector<double> midpoints;
  int n_midpoints = 0;
  bool valid = false;
};

struct StaircaseState {
  StaircaseConfig config;
  int block_index = 1;
  Phase phase = Phase::Training;
  double current_level = 0.0;
  Direction last_direction = Direction::None;
  std::vector<TrialRecord> trials;
  std::vector<Reversal> reversals;
  std::optional<double> srt;

  int scored_trials() const;
};

struct StaircaseEvents {
  std::optional<ReversalKind> reversal;
  bool restart_required = false;
  bool block_complete = false;
  bool level_clamped = false;
};

struct Response {
  std::string sentence_id;
  int words_total = 0;
  int words_correct = 0;
};

class StaircaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

StaircaseState init_block(const StaircaseConfig& config, int block_index,
                          std::optional<double> prev_srt);

// Scores the trial presented at state.current_level and moves the track.
StaircaseEvents record_response(StaircaseState& state, const Response& response);

SrtEstimate compute_srt(const StaircaseState& state);

// Pairs each Positive reversal with the Negative reversal that follows it.
SrtEstimate srt_from_reversals(const std::vector<Reversal>& reversals, int min_midpoints);

// Rebuilds the reversal list of one block attempt from its trial rows alone,
// using only the response-rate rule. Agrees with the live engine's list.
std::vector<Reversal> reversals_from_trials(const std::vector<TrialRecord>& trials);

double propose_level(const StaircaseState& state);

}  // namespace lisn
