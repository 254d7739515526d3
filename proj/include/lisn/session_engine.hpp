#pragma once

// Block plan driver shared by live and simulated sessions: sentence order,
// block chaining, training restarts and log emission.
//
// The engine is a value: the service copies it, submits on the copy, persists
// the new records and only then swaps the copy in.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lisn/session_log.hpp"
#include "lisn/staircase.hpp"

namespace lisn {

struct PendingTrial {
  int block_index = 1;
  int attempt = 0;
  int trial_index = 0;
  std::string sentence_id;
  int words_total = 0;
  double level = 0.0;
  double snr = 0.0;
  bool is_training = false;
  std::string key;
  std::array<std::size_t, 2> story_offsets{0, 0};
};

enum class SessionStatus { Active, Complete, Failed };
const char* to_string(SessionStatus s);

class SubmissionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The key names a trial that was already scored.
class DuplicateSubmission : public SubmissionError {
 public:
  using SubmissionError::SubmissionError;
};

struct SubmitOutcome {
  TrialLogRecord row;
  StaircaseEvents events;
  std::optional<BlockEndRecord> block_end;
  bool restarted = false;
  SessionStatus status = SessionStatus::Active;
  std::optional<PendingTrial> next;
};

class SessionEngine {
 public:
  explicit SessionEngine(SessionHeader header);

  // Folds the logged responses through a fresh engine. The logged records
  // must be a prefix of what the engine emits (a torn tail write may drop the
  // block bookkeeping after the last trial). Throws LogFormatError otherwise.
  static SessionEngine replay(const SessionLog& log);

  const SessionHeader& header() const { return log_.header; }
  const SessionLog& log() const { return log_; }
  const StaircaseState& state() const { return state_; }
  SessionStatus status() const { return status_; }
  const std::optional<PendingTrial>& pending() const { return pending_; }
  int restarts() const { return restarts_; }
  int scored_in_session() const { return trials_recorded_; }
  std::vector<BlockEndRecord> completed_blocks() const;

  // Throws SubmissionError for a bad count or a stale key, DuplicateSubmission
  // for a key that was already scored. State is unchanged on error.
  SubmitOutcome submit(int words_correct, const std::string& key);

 private:
  void start_block(int block_index, std::optional<double> prev_srt);
  void prepare_pending();
  std::size_t draw_index(std::size_t n);
  void reshuffle();

  SessionLog log_;
  StaircaseState state_;
  SessionStatus status_ = SessionStatus::Active;
  std::optional<PendingTrial> pending_;
  std::array<std::size_t, 2> block_offsets_{0, 0};
  int attempt_ = 0;
  int restarts_ = 0;
  int trials_recorded_ = 0;

  std::mt19937_64 order_rng_;
  std::mt19937_64 offset_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Fisher-Yates with rejection sampling: identical across standard libraries.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng);

}  // namespace lisn
