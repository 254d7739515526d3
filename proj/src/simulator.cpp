#include "lisn/simulator.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "lisn/psychometrics.hpp"
#include "lisn/session_engine.hpp"

namespace lisn {

void SimulatedListener::validate() const {
  if (!(slope_b > 0.0) || !std::isfinite(slope_b)) throw std::invalid_argument("listener slope_b must be > 0");
  if (!std::isfinite(true_srt)) throw std::invalid_argument("listener true_srt must be finite");
}

ListenerSimulator::ListenerSimulator(SimulatedListener listener)
    : listener_(std::move(listener)), rng_(listener_.rng_seed) {
  listener_.validate();
}

double ListenerSimulator::uniform() {
  // 53 random mantissa bits: portable, unlike std::uniform_real_distribution.
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double ListenerSimulator::probability(double level, double srt_reference, const std::string& sentence_id) const {
  double srt = listener_.true_srt;
  if (auto it = listener_.sentence_offsets.find(sentence_id); it != listener_.sentence_offsets.end())
    srt += it->second;
  return logistic(listener_.slope_b * (level - srt_reference - srt));
}

int ListenerSimulator::respond(double level, double srt_reference, int words_total, const std::string& sentence_id) {
  if (words_total < 1) throw std::invalid_argument("words_total must be >= 1");
  const double p = probability(level, srt_reference, sentence_id);
  int correct = 0;
  for (int i = 0; i < words_total; ++i)
    if (uniform() < p) ++correct;
  return correct;
}

SessionLog run_simulated_session(const SimulatedSessionSpec& spec, const SimulatedListener& listener,
                                 const SimulationCorpus& corpus) {
  SessionHeader header;
  header.session_id = spec.session_id;
  header.participant = spec.participant;
  header.config = spec.config;
  header.max_restarts = spec.max_restarts;
  header.calibration = spec.calibration;
  header.seed = spec.session_seed;
  header.sentence_pool = corpus.sentence_ids;
  header.sentence_words = corpus.word_counts;
  header.story_lengths = corpus.story_lengths;

  SessionEngine engine(std::move(header));
  ListenerSimulator sim(listener);
  while (engine.status() == SessionStatus::Active) {
    const PendingTrial p = *engine.pending();
    const int correct = sim.respond(p.level, spec.config.competing_level, p.words_total, p.sentence_id);
    engine.submit(correct, p.key);
  }
  return engine.log();
}

SimulationSummary summarize_simulations(std::span<const SessionLog> logs) {
  SimulationSummary s;
  for (const auto& log : logs) {
    ++s.sessions;
    if (const auto end = log.end(); end && end->status == "failed") ++s.failed_sessions;
    for (const auto& r : log.records) {
      const auto* b = std::get_if<BlockEndRecord>(&r);
      if (!b) continue;
      if (b->outcome == "restart") {
        ++s.restarts;
        continue;
      }
      ++s.blocks;
      if (b->valid && b->srt) {
        ++s.valid_blocks;
        s.srts.push_back(*b->srt);
      }
    }
  }
  if (!s.srts.empty()) {
    double sum = 0.0;
    for (double v : s.srts) sum += v;
    s.mean_srt = sum / static_cast<double>(s.srts.size());
    double ss = 0.0;
    for (double v : s.srts) ss += (v - s.mean_srt) * (v - s.mean_srt);
    s.sd_srt = s.srts.size() > 1 ? std::sqrt(ss / static_cast<double>(s.srts.size() - 1)) : 0.0;
  } else {
    s.mean_srt = s.sd_srt = std::nan("");
  }
  return s;
}

std::string format_summary(const SimulationSummary& s) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(3);
  o << "sessions\t" << s.sessions << "\n"
    << "failed_sessions\t" << s.failed_sessions << "\n"
    << "restarts\t" << s.restarts << "\n"
    << "blocks\t" << s.blocks << "\n"
    << "valid_blocks\t" << s.valid_blocks << "\n"
    << "mean_srt_db_spl\t" << s.mean_srt << "\n"
    << "sd_srt_db\t" << s.sd_srt << "\n";
  return o.str();
}

}  // namespace lisn
