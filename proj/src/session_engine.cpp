#include "lisn/session_engine.hpp"

#include <numeric>

namespace lisn {

namespace {

constexpr std::uint64_t kOffsetStream = 0x9E3779B97F4A7C15ull;

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  // Largest multiple of n representable; draws past it are rejected.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

}  // namespace

const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::Complete: return "complete";
    case SessionStatus::Failed: return "failed";
  }
  return "active";
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_below(rng, i)]);
  return p;
}

SessionEngine::SessionEngine(SessionHeader header)
    : order_rng_(header.seed), offset_rng_(header.seed ^ kOffsetStream) {
  header.config.validate();
  if (header.sentence_pool.empty()) throw SubmissionError("session needs a non-empty sentence pool");
  if (header.sentence_pool.size() != header.sentence_words.size())
    throw SubmissionError("sentence pool and word counts differ in length");
  for (int w : header.sentence_words)
    if (w < 1) throw SubmissionError("every sentence needs at least one word");
  if (header.max_restarts < 0) throw SubmissionError("max_restarts must be >= 0");
  log_.header = std::move(header);
  reshuffle();
  start_block(1, std::nullopt);
}

void SessionEngine::reshuffle() {
  order_ = seeded_permutation(log_.header.sentence_pool.size(), order_rng_);
  cursor_ = 0;
}

std::size_t SessionEngine::draw_index(std::size_t n) { return static_cast<std::size_t>(uniform_below(offset_rng_, n)); }

void SessionEngine::start_block(int block_index, std::optional<double> prev_srt) {
  state_ = init_block(log_.header.config, block_index, prev_srt);
  for (int s = 0; s < 2; ++s) {
    const std::size_t len = log_.header.story_lengths[s];
    block_offsets_[s] = len > 0 ? draw_index(len) : 0;
  }
  BlockStartRecord rec;
  rec.block_index = block_index;
  rec.attempt = attempt_;
  rec.level = state_.current_level;
  rec.prev_srt = prev_srt;
  rec.story_offsets = block_offsets_;
  log_.records.emplace_back(rec);
  prepare_pending();
}

void SessionEngine::prepare_pending() {
  if (cursor_ >= order_.size()) reshuffle();
  const std::size_t idx = order_[cursor_];
  PendingTrial p;
  p.block_index = state_.block_index;
  p.attempt = attempt_;
  p.trial_index = static_cast<int>(state_.trials.size());
  p.sentence_id = log_.header.sentence_pool[idx];
  p.words_total = log_.header.sentence_words[idx];
  p.level = propose_level(state_);
  p.snr = p.level - state_.config.competing_level;
  p.is_training = state_.phase == Phase::Training;
  p.key = "b" + std::to_string(p.block_index) + "a" + std::to_string(p.attempt) + "t" +
          std::to_string(p.trial_index);
  p.story_offsets = block_offsets_;
  pending_ = p;
}

SubmitOutcome SessionEngine::submit(int words_correct, const std::string& key) {
  if (status_ != SessionStatus::Active || !pending_) throw SubmissionError("session is not awaiting a response");
  if (key != pending_->key) {
    for (const auto& r : log_.records)
      if (const auto* t = std::get_if<TrialLogRecord>(&r); t && t->key == key)
        throw DuplicateSubmission("trial " + key + " was already scored");
    throw SubmissionError("key " + key + " does not name the pending trial " + pending_->key);
  }
  if (words_correct < 0 || words_correct > pending_->words_total)
    throw SubmissionError("words_correct " + std::to_string(words_correct) + " outside [0, " +
                          std::to_string(pending_->words_total) + "]");

  const PendingTrial p = *pending_;
  ++cursor_;
  SubmitOutcome out;
  out.events = record_response(state_, {p.sentence_id, p.words_total, words_correct});
  ++trials_recorded_;

  out.row.attempt = attempt_;
  out.row.trial = state_.trials.back();
  out.row.key = p.key;
  out.row.reversal = out.events.reversal;
  out.row.clamped = out.events.level_clamped;
  out.row.next_level = state_.current_level;
  log_.records.emplace_back(out.row);

  if (out.events.restart_required) {
    BlockEndRecord end;
    end.block_index = state_.block_index;
    end.attempt = attempt_;
    end.outcome = "restart";
    log_.records.emplace_back(end);
    out.block_end = end;
    ++restarts_;
    if (restarts_ > log_.header.max_restarts) {
      status_ = SessionStatus::Failed;
      log_.records.emplace_back(SessionEndRecord{"failed", "training restart cap exceeded"});
      pending_.reset();
    } else {
      ++attempt_;
      out.restarted = true;
      start_block(state_.block_index, std::nullopt);
    }
  } else if (out.events.block_complete) {
    const SrtEstimate est = compute_srt(state_);
    BlockEndRecord end;
    end.block_index = state_.block_index;
    end.attempt = attempt_;
    end.outcome = "complete";
    if (est.n_midpoints > 0) end.srt = est.value;
    end.midpoints = est.midpoints;
    end.valid = est.valid;
    if (est.n_midpoints > 0) {
      end.carried_level = est.value;
    } else {
      double sum = 0.0;
      int n = 0;
      for (const auto& t : state_.trials)
        if (!t.is_training) {
          sum += t.level;
          ++n;
        }
      end.carried_level = sum / n;
    }
    log_.records.emplace_back(end);
    out.block_end = end;
    if (state_.block_index >= state_.config.blocks) {
      status_ = SessionStatus::Complete;
      log_.records.emplace_back(SessionEndRecord{"complete", ""});
      pending_.reset();
    } else {
      attempt_ = 0;
      start_block(state_.block_index + 1, end.carried_level);
    }
  } else {
    prepare_pending();
  }
  out.status = status_;
  out.next = pending_;
  return out;
}

std::vector<BlockEndRecord> SessionEngine::completed_blocks() const {
  std::vector<BlockEndRecord> out;
  for (const auto& r : log_.records)
    if (const auto* b = std::get_if<BlockEndRecord>(&r); b && b->outcome == "complete") out.push_back(*b);
  return out;
}

SessionEngine SessionEngine::replay(const SessionLog& log) {
  SessionEngine engine(log.header);
  for (const auto& r : log.records) {
    const auto* t = std::get_if<TrialLogRecord>(&r);
    if (!t) continue;
    if (!engine.pending_) throw LogFormatError("log holds trials past the end of the session");
    const auto& p = *engine.pending_;
    if (p.key != t->key || p.sentence_id != t->trial.sentence_id || p.level != t->trial.level)
      throw LogFormatError("replay diverges at trial " + t->key + " (engine expected " + p.key + " " +
                           p.sentence_id + " at " + std::to_string(p.level) + ")");
    try {
      engine.submit(t->trial.words_correct, t->key);
    } catch (const SubmissionError& e) {
      throw LogFormatError("replay rejects trial " + t->key + ": " + e.what());
    }
  }
  std::size_t i = 0;
  for (const auto& r : log.records) {
    if (std::holds_alternative<ExportFooter>(r)) continue;
    if (i >= engine.log_.records.size() || record_to_json(r) != record_to_json(engine.log_.records[i]))
      throw LogFormatError("replayed record " + std::to_string(i) + " differs from the log");
    ++i;
  }
  return engine;
}

}  // namespace lisn
