#include "lisn/staircase.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lisn {

void StaircaseConfig::validate() const {
  if (!(small_step > 0.0)) throw std::invalid_argument("small_step must be > 0");
  if (!(big_step > small_step)) throw std::invalid_argument("big_step must exceed small_step");
  const double start = competing_level + training_snr;
  if (!(level_clamp.min < start && start <= level_clamp.max))
    throw std::invalid_argument("level_clamp must contain competing_level + training_snr");
  if (min_midpoints < 1) throw std::invalid_argument("min_midpoints must be >= 1");
  if (training_trials < 0) throw std::invalid_argument("training_trials must be >= 0");
  if (block_length < 1) throw std::invalid_argument("block_length must be >= 1");
  if (blocks < 1) throw std::invalid_argument("blocks must be >= 1");
  if (max_extra_trials < 0) throw std::invalid_argument("max_extra_trials must be >= 0");
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Training: return "Training";
    case Phase::BigStep: return "BigStep";
    case Phase::SmallStep: return "SmallStep";
    case Phase::Complete: return "Complete";
    case Phase::RestartRequired: return "RestartRequired";
  }
  return "Training";
}

const char* to_string(Direction d) {
  switch (d) {
    case Direction::None: return "None";
    case Direction::Down: return "Down";
    case Direction::Up: return "Up";
  }
  return "None";
}

const char* to_string(ReversalKind k) {
  return k == ReversalKind::Positive ? "Positive" : "Negative";
}

Phase phase_from_string(const std::string& s) {
  for (Phase p : {Phase::Training, Phase::BigStep, Phase::SmallStep, Phase::Complete,
                  Phase::RestartRequired})
    if (s == to_string(p)) return p;
  throw std::invalid_argument("unknown phase: " + s);
}

Direction direction_from_string(const std::string& s) {
  for (Direction d : {Direction::None, Direction::Down, Direction::Up})
    if (s == to_string(d)) return d;
  throw std::invalid_argument("unknown direction: " + s);
}

ReversalKind reversal_kind_from_string(const std::string& s) {
  if (s == "Positive") return ReversalKind::Positive;
  if (s == "Negative") return ReversalKind::Negative;
  throw std::invalid_argument("unknown reversal kind: " + s);
}

int StaircaseState::scored_trials() const {
  return static_cast<int>(
      std::count_if(trials.begin(), trials.end(), [](const TrialRecord& t) { return !t.is_training; }));
}

namespace {

// Sign of (rate - 1/2) without floating point: compares 2k against n.
int response_sign(int words_correct, int words_total) {
  const int twice = 2 * words_correct;
  if (twice > words_total) return 1;
  if (twice < words_total) return -1;
  return 0;
}

// Direction tracking shared by the live engine and the log reconstruction.
struct ReversalTracker {
  Direction direction = Direction::None;
  std::vector<Reversal> reversals;

  std::optional<ReversalKind> step(int sign, double level, int trial_index) {
    if (sign == 0) return std::nullopt;
    const Direction next = sign > 0 ? Direction::Down : Direction::Up;
    std::optional<ReversalKind> kind;
    if (direction == Direction::Down && next == Direction::Up) {
      kind = ReversalKind::Positive;
    } else if (direction == Direction::Up && next == Direction::Down && !reversals.empty() &&
               reversals.back().kind == ReversalKind::Positive) {
      kind = ReversalKind::Negative;
    }
    if (kind) reversals.push_back({*kind, level, trial_index});
    direction = next;
    return kind;
  }
};

}  // namespace

StaircaseState init_block(const StaircaseConfig& config, int block_index,
                          std::optional<double> prev_srt) {
  config.validate();
  if (block_index < 1) throw StaircaseError("block_index must be >= 1");
  if (block_index == 1 && prev_srt) throw StaircaseError("block 1 takes no previous SRT");
  if (block_index >= 2 && !prev_srt) throw StaircaseError("missing previous SRT for block >= 2");

  StaircaseState s;
  s.config = config;
  s.block_index = block_index;
  if (block_index == 1) {
    s.current_level = config.competing_level + config.training_snr;
    if (config.training_trials > 0) {
      s.phase = Phase::Training;
    } else {
      s.phase = Phase::BigStep;
      s.last_direction = Direction::Down;
    }
  } else {
    if (!std::isfinite(*prev_srt)) throw StaircaseError("previous SRT is not finite");
    s.phase = Phase::SmallStep;
    s.current_level = std::clamp(*prev_srt + config.next_block_offset, config.level_clamp.min,
                                 config.level_clamp.max);
  }
  return s;
}

StaircaseEvents record_response(StaircaseState& state, const Response& response) {
  if (state.phase == Phase::Complete || state.phase == Phase::RestartRequired)
    throw StaircaseError(std::string("cannot record into a block in phase ") + to_string(state.phase));
  if (response.words_total < 1) throw StaircaseError("words_total must be >= 1");
  if (response.words_correct < 0 || response.words_correct > response.words_total)
    throw StaircaseError("words_correct must lie in [0, words_total]");

  const StaircaseConfig& cfg = state.config;
  StaircaseEvents events;

  TrialRecord row;
  row.block_index = state.block_index;
  row.trial_index = static_cast<int>(state.trials.size());
  row.sentence_id = response.sentence_id;
  row.level = state.current_level;
  row.snr = state.current_level - cfg.competing_level;
  row.words_total = response.words_total;
  row.words_correct = response.words_correct;
  row.is_training = state.phase == Phase::Training;
  state.trials.push_back(row);

  const int sign = response_sign(response.words_correct, response.words_total);

  if (row.is_training) {
    if (sign < 0) {
      state.phase = Phase::RestartRequired;
      events.restart_required = true;
      return events;
    }
    const int done = static_cast<int>(state.trials.size());
    if (done >= cfg.training_trials) {
      state.phase = Phase::BigStep;
      // Training responses all sat at or above 50%: the track is descending.
      state.last_direction = Direction::Down;
    }
    return events;
  }

  ReversalTracker tracker{state.last_direction, std::move(state.reversals)};
  events.reversal = tracker.step(sign, row.level, row.trial_index);
  state.reversals = std::move(tracker.reversals);
  state.last_direction = tracker.direction;

  if (events.reversal == ReversalKind::Positive && state.phase == Phase::BigStep)
    state.phase = Phase::SmallStep;

  const double step = state.phase == Phase::BigStep ? cfg.big_step : cfg.small_step;
  double next = state.current_level - sign * step;
  const double clamped = std::clamp(next, cfg.level_clamp.min, cfg.level_clamp.max);
  events.level_clamped = clamped != next;
  state.current_level = clamped;

  const int scored = state.scored_trials();
  bool done = scored >= cfg.block_length;
  if (done && cfg.extend_until_valid) {
    const auto est = srt_from_reversals(state.reversals, cfg.min_midpoints);
    done = est.valid || scored >= cfg.block_length + cfg.max_extra_trials;
  }
  if (done) {
    state.phase = Phase::Complete;
    events.block_complete = true;
    const auto est = compute_srt(state);
    if (est.n_midpoints > 0) state.srt = est.value;
  }
  return events;
}

SrtEstimate srt_from_reversals(const std::vector<Reversal>& reversals, int min_midpoints) {
  SrtEstimate est;
  for (std::size_t i = 0; i + 1 < reversals.size(); ++i) {
    if (reversals[i].kind == ReversalKind::Positive &&
        reversals[i + 1].kind == ReversalKind::Negative) {
      est.midpoints.push_back(0.5 * (reversals[i].level + reversals[i + 1].level));
      ++i;
    }
  }
  est.n_midpoints = static_cast<int>(est.midpoints.size());
  est.value = est.midpoints.empty()
                  ? std::numeric_limits<double>::quiet_NaN()
                  : std::accumulate(est.midpoints.begin(), est.midpoints.end(), 0.0) /
                        static_cast<double>(est.n_midpoints);
  est.valid = est.n_midpoints >= min_midpoints;
  return est;
}

SrtEstimate compute_srt(const StaircaseState& state) {
  return srt_from_reversals(state.reversals, state.config.min_midpoints);
}

std::vector<Reversal> reversals_from_trials(const std::vector<TrialRecord>& trials) {
  ReversalTracker tracker;
  const bool had_training =
      std::any_of(trials.begin(), trials.end(), [](const TrialRecord& t) { return t.is_training; });
  bool first_block = had_training || (!trials.empty() && trials.front().block_index == 1);
  if (first_block) tracker.direction = Direction::Down;
  for (const auto& t : trials) {
    if (t.is_training) continue;
    tracker.step(response_sign(t.words_correct, t.words_total), t.level, t.trial_index);
  }
  return tracker.reversals;
}

double propose_level(const StaircaseState& state) {
  if (state.phase == Phase::Complete || state.phase == Phase::RestartRequired)
    throw StaircaseError("no level to propose in a finished block");
  return state.current_level;
}

}  // namespace lisn
