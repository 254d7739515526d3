#include "lisn/session_service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

namespace lisn {

namespace fs = std::filesystem;
using nlohmann::json;

struct SessionService::Live {
  mutable std::mutex mutex;
  mutable std::condition_variable changed;
  SessionEngine engine;
  std::vector<SessionEvent> events;
  fs::path file;

  Live(SessionEngine e, fs::path f) : engine(std::move(e)), file(std::move(f)) {}
};

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void durable_append(const fs::path& path, const std::string& text) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw std::runtime_error("cannot open " + path.string() + " for append");
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n < 0) {
      ::close(fd);
      throw std::runtime_error("write failed on " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw std::runtime_error("fsync failed on " + path.string());
  }
  ::close(fd);
}

json pending_json(const PendingTrial& p) {
  return {{"key", p.key},
          {"block_index", p.block_index},
          {"attempt", p.attempt},
          {"trial_index", p.trial_index},
          {"sentence_id", p.sentence_id},
          {"words_total", p.words_total},
          {"level", p.level},
          {"snr", p.snr},
          {"is_training", p.is_training}};
}

}  // namespace

ServiceResources ServiceResources::load(const fs::path& corpus_manifest, const fs::path& story_manifest,
                                        const std::optional<fs::path>& hrir_manifest,
                                        const std::optional<fs::path>& calibration_file) {
  ServiceResources r;
  r.sentences = load_sentence_assets(load_corpus_manifest(corpus_manifest));
  const StoryManifest sm = load_story_manifest(story_manifest);
  const auto audio = load_stories(sm);
  for (std::size_t i = 0; i < audio.size(); ++i)
    r.stories.push_back({sm.entries[i].story_id, sm.entries[i].voice, audio[i]});
  if (hrir_manifest) {
    r.hrirs = load_hrir_set(*hrir_manifest);
  } else if (!r.sentences.empty()) {
    r.hrirs = HrirSet::identity(r.sentences.front().audio.sample_rate);
  }
  if (calibration_file) r.calibration = load_calibration(*calibration_file);
  return r;
}

SessionService::SessionService(ServiceResources resources, fs::path data_dir)
    : resources_(std::move(resources)), data_dir_(std::move(data_dir)) {
  fs::create_directories(data_dir_ / "sessions");
  recover();
}

SessionService::~SessionService() = default;

void SessionService::set_playback_sink(PlaybackSink sink) { sink_ = std::move(sink); }

std::array<const StoryAsset*, 2> SessionService::pick_stories(ConditionName condition) const {
  if (resources_.stories.size() < 2) throw ConfigurationError("at least two competing stories are required");
  const std::string voice =
      resources_.target_voice.empty() ? resources_.stories.front().voice : resources_.target_voice;
  const bool same = SpatialCondition::make(condition).distractors_same_voice;
  std::vector<const StoryAsset*> matching;
  for (const auto& s : resources_.stories)
    if ((s.voice == voice) == same) matching.push_back(&s);
  if (matching.size() >= 2) return {matching[0], matching[1]};
  // Too few stories tagged for this condition: fall back to corpus order.
  return {&resources_.stories[0], &resources_.stories[1]};
}

json SessionService::create_session(const CreateSessionRequest& request) {
  if (resources_.sentences.empty()) throw ConfigurationError("no sentence corpus loaded");
  if (!resources_.calibration) throw ConfigurationError("no calibration loaded");
  try {
    request.config.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("invalid staircase config: ") + e.what());
  }
  const auto stories = pick_stories(request.condition);

  SessionHeader h;
  {
    std::lock_guard lock(registry_mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%06llu", static_cast<unsigned long long>(next_id_++));
    h.session_id = buf;
  }
  h.participant = request.participant.is_object() ? request.participant : json::object();
  h.condition = request.condition;
  h.config = request.config;
  h.max_restarts = request.max_restarts;
  h.calibration = *resources_.calibration;
  h.seed = request.seed ? *request.seed : std::random_device{}();
  h.created_at = utc_now();
  for (const auto& s : resources_.sentences) {
    h.sentence_pool.push_back(s.sentence_id);
    h.sentence_words.push_back(s.word_count);
  }
  h.story_lengths = {stories[0]->audio.frames(), stories[1]->audio.frames()};

  auto live = std::make_unique<Live>(SessionEngine(h), data_dir_ / "sessions" / (h.session_id + ".ndjson"));
  std::string text = to_ndjson_line(header_to_json(h));
  for (const auto& r : live->engine.log().records) text += to_ndjson_line(record_to_json(r));
  durable_append(live->file, text);
  durable_append(data_dir_ / "index.ndjson",
                 to_ndjson_line({{"session_id", h.session_id}, {"created_at", h.created_at}}));

  Live* raw = live.get();
  {
    std::lock_guard lock(registry_mutex_);
    sessions_[h.session_id] = std::move(live);
  }
  std::lock_guard lock(raw->mutex);
  emit(*raw, "trial-ready", pending_json(*raw->engine.pending()));
  return snapshot(*raw);
}

SessionService::Live& SessionService::live(const std::string& session_id) const {
  std::lock_guard lock(registry_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw UnknownSession("unknown session " + session_id);
  return *it->second;
}

void SessionService::emit(Live& s, const std::string& type, json data) {
  s.events.push_back({s.events.size(), type, std::move(data)});
  s.changed.notify_all();
  if (type == "trial-ready" && sink_) {
    try {
      sink_(s.engine.header().session_id, render(s.engine));
    } catch (const std::exception& e) {
      s.events.push_back({s.events.size(), "audio-error", {{"message", e.what()}}});
    }
  }
}

json SessionService::snapshot(const Live& s) const {
  const SessionEngine& e = s.engine;
  const StaircaseState& st = e.state();
  json j;
  j["session_id"] = e.header().session_id;
  j["participant"] = e.header().participant;
  j["condition"] = to_string(e.header().condition);
  j["status"] = to_string(e.status());
  j["phase"] = to_string(st.phase);
  j["block_index"] = st.block_index;
  j["blocks"] = st.config.blocks;
  j["scored_in_block"] = st.scored_trials();
  j["block_length"] = st.config.block_length;
  j["restarts"] = e.restarts();
  j["pending"] = e.pending() ? pending_json(*e.pending()) : json(nullptr);
  j["current_level"] = st.current_level;
  j["competing_level"] = st.config.competing_level;
  json reversals = json::array();
  for (const auto& r : st.reversals)
    reversals.push_back({{"kind", to_string(r.kind)}, {"level", r.level}, {"trial_index", r.trial_index}});
  j["reversals"] = reversals;
  json track = json::array();
  for (const auto& t : e.log().trials())
    track.push_back({{"key", t.key},
                     {"block_index", t.trial.block_index},
                     {"attempt", t.attempt},
                     {"trial_index", t.trial.trial_index},
                     {"level", t.trial.level},
                     {"words_total", t.trial.words_total},
                     {"words_correct", t.trial.words_correct},
                     {"is_training", t.trial.is_training},
                     {"reversal", t.reversal ? json(to_string(*t.reversal)) : json(nullptr)}});
  j["track"] = track;
  json srts = json::array();
  for (const auto& b : e.completed_blocks())
    srts.push_back({{"block_index", b.block_index},
                    {"srt", b.srt ? json(*b.srt) : json(nullptr)},
                    {"valid", b.valid},
                    {"midpoints", b.midpoints}});
  j["block_srts"] = srts;
  return j;
}

json SessionService::get_state(const std::string& session_id) const {
  Live& s = live(session_id);
  std::lock_guard lock(s.mutex);
  return snapshot(s);
}

json SessionService::submit_trial_result(const std::string& session_id, int words_correct,
                                         const std::string& idempotency_key) {
  if (idempotency_key.empty()) throw ValidationError("idempotency key required");
  Live& s = live(session_id);
  std::lock_guard lock(s.mutex);

  SessionEngine next = s.engine;
  SubmitOutcome out;
  try {
    out = next.submit(words_correct, idempotency_key);
  } catch (const DuplicateSubmission& e) {
    throw ConflictError(e.what());
  } catch (const SubmissionError& e) {
    throw ValidationError(e.what());
  }

  std::string text;
  const auto& records = next.log().records;
  for (std::size_t i = s.engine.log().records.size(); i < records.size(); ++i)
    text += to_ndjson_line(record_to_json(records[i]));
  durable_append(s.file, text);
  s.engine = std::move(next);

  json scored{{"key", out.row.key},
              {"sentence_id", out.row.trial.sentence_id},
              {"level", out.row.trial.level},
              {"words_total", out.row.trial.words_total},
              {"words_correct", out.row.trial.words_correct},
              {"next_level", out.row.next_level}};
  emit(s, "scored", scored);
  json events = json::array();
  if (out.events.reversal) {
    json rev{{"kind", to_string(*out.events.reversal)}, {"level", out.row.trial.level}, {"key", out.row.key}};
    emit(s, "reversal", rev);
    events.push_back({{"type", "reversal"}, {"data", rev}});
  }
  json response;
  if (out.block_end && out.block_end->outcome == "restart") {
    json d{{"block_index", out.block_end->block_index}, {"attempt", out.block_end->attempt}};
    emit(s, "restart", d);
    events.push_back({{"type", "restart"}, {"data", d}});
  } else if (out.block_end) {
    json d{{"block_index", out.block_end->block_index},
           {"srt", out.block_end->srt ? json(*out.block_end->srt) : json(nullptr)},
           {"valid", out.block_end->valid},
           {"midpoints", out.block_end->midpoints}};
    emit(s, "block-complete", d);
    events.push_back({{"type", "block-complete"}, {"data", d}});
    response["block_srt"] = d["srt"];
    response["block_srt_valid"] = d["valid"];
  }
  if (out.status == SessionStatus::Complete) {
    emit(s, "session-complete", json::object());
    events.push_back({{"type", "session-complete"}});
  } else if (out.status == SessionStatus::Failed) {
    emit(s, "session-failed", {{"reason", "training restart cap exceeded"}});
    events.push_back({{"type", "session-failed"}});
  }
  if (out.next) emit(s, "trial-ready", pending_json(*out.next));

  response["scored"] = scored;
  response["events"] = events;
  response["state"] = snapshot(s);
  return response;
}

std::string SessionService::export_session(const std::string& session_id) const {
  Live& s = live(session_id);
  std::lock_guard lock(s.mutex);
  std::ostringstream out;
  write_session_log(out, s.engine.log());
  const ExportFooter footer{s.engine.status() != SessionStatus::Active,
                            static_cast<int>(s.engine.log().trials().size())};
  out << to_ndjson_line(record_to_json(footer));
  return out.str();
}

AudioBuffer SessionService::render(const SessionEngine& engine) const {
  const auto& p = engine.pending();
  if (!p) throw ValidationError("no trial is awaiting presentation");
  const SentenceAsset* target = nullptr;
  for (const auto& a : resources_.sentences)
    if (a.sentence_id == p->sentence_id) target = &a;
  if (!target) throw ConfigurationError("sentence " + p->sentence_id + " is not in the loaded corpus");
  const auto picked = pick_stories(engine.header().condition);
  const std::array<AudioBuffer, 2> stories{picked[0]->audio, picked[1]->audio};
  TrialRenderRequest req;
  req.trial_label = engine.header().session_id + "/" + p->key;
  req.target_level = p->level;
  req.competing_level = engine.state().config.competing_level;
  req.story_offsets = p->story_offsets;
  req.competing_mode = resources_.competing_mode;
  return assemble_trial(*target, stories, SpatialCondition::make(engine.header().condition), resources_.hrirs,
                        engine.header().calibration, req);
}

AudioBuffer SessionService::trial_audio(const std::string& session_id) const {
  Live& s = live(session_id);
  std::lock_guard lock(s.mutex);
  return render(s.engine);
}

std::vector<SessionEvent> SessionService::events_since(const std::string& session_id, std::uint64_t from_seq,
                                                       std::chrono::milliseconds timeout) const {
  Live& s = live(session_id);
  std::unique_lock lock(s.mutex);
  if (timeout.count() > 0)
    s.changed.wait_for(lock, timeout, [&] { return s.events.size() > from_seq; });
  std::vector<SessionEvent> out;
  for (std::size_t i = from_seq; i < s.events.size(); ++i) out.push_back(s.events[i]);
  return out;
}

bool SessionService::finished(const std::string& session_id) const {
  Live& s = live(session_id);
  std::lock_guard lock(s.mutex);
  return s.engine.status() != SessionStatus::Active;
}

std::vector<std::string> SessionService::session_ids() const {
  std::lock_guard lock(registry_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) ids.push_back(id);
  return ids;
}

void SessionService::recover() {
  const fs::path index = data_dir_ / "index.ndjson";
  if (!fs::exists(index)) return;
  std::ifstream in(index);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json entry;
    try {
      entry = json::parse(line);
    } catch (const json::exception&) {
      continue;  // torn index append: the session file was never acknowledged
    }
    const std::string id = entry.at("session_id").get<std::string>();
    const fs::path file = data_dir_ / "sessions" / (id + ".ndjson");
    if (!fs::exists(file)) continue;

    // Keep whole lines only; an unacknowledged torn write is discarded.
    std::ifstream log_in(file);
    std::string good, l;
    while (std::getline(log_in, l)) {
      if (log_in.eof() && !json::accept(l)) break;
      good += l + "\n";
    }
    log_in.close();
    std::istringstream text(good);
    SessionLog log = parse_session_log(text);
    SessionEngine engine = SessionEngine::replay(log);
    {
      std::ofstream rewrite(file, std::ios::trunc);
      rewrite << good;
    }
    std::string missing;
    for (std::size_t i = log.records.size(); i < engine.log().records.size(); ++i)
      missing += to_ndjson_line(record_to_json(engine.log().records[i]));
    if (!missing.empty()) durable_append(file, missing);

    auto live = std::make_unique<Live>(std::move(engine), file);
    if (live->engine.pending()) emit(*live, "trial-ready", pending_json(*live->engine.pending()));
    if (id.size() > 1 && id[0] == 'S') next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(id.substr(1)) + 1);
    sessions_[id] = std::move(live);
  }
}

}  // namespace lisn
