#pragma once

// Session lifecycle and persistence behind the examiner API.
//
// Each session owns one append-only NDJSON file under <data_dir>/sessions and
// one line in <data_dir>/index.ndjson. A submit is written and fsync'ed before
// it is acknowledged; on start-up every log is replayed through the engine.

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lisn/audio.hpp"
#include "lisn/corpus.hpp"
#include "lisn/session_engine.hpp"

namespace lisn {

class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UnknownSession : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoryAsset {
  std::string story_id;
  std::string voice;
  AudioBuffer audio;  // mono
};

struct ServiceResources {
  std::vector<SentenceAsset> sentences;
  std::vector<StoryAsset> stories;
  HrirSet hrirs = HrirSet::identity();
  std::optional<Calibration> calibration;
  std::string target_voice;  // voice of the target talker; empty = first story's voice
  CompetingMode competing_mode = CompetingMode::Combined;

  static ServiceResources load(const std::filesystem::path& corpus_manifest,
                               const std::filesystem::path& story_manifest,
                               const std::optional<std::filesystem::path>& hrir_manifest,
                               const std::optional<std::filesystem::path>& calibration_file);
};

struct CreateSessionRequest {
  nlohmann::json participant = nlohmann::json::object();
  ConditionName condition = ConditionName::SV0;
  StaircaseConfig config;
  int max_restarts = 5;
  std::optional<std::uint64_t> seed;
};

struct SessionEvent {
  std::uint64_t seq = 0;
  std::string type;  // trial-ready, scored, reversal, restart, block-complete, session-complete, session-failed
  nlohmann::json data;
};

// Host playback hook; the service hands it every freshly prepared trial.
using PlaybackSink = std::function<void(const std::string& session_id, const AudioBuffer&)>;

class SessionService {
 public:
  SessionService(ServiceResources resources, std::filesystem::path data_dir);
  ~SessionService();
  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  void set_playback_sink(PlaybackSink sink);

  nlohmann::json create_session(const CreateSessionRequest& request);
  nlohmann::json get_state(const std::string& session_id) const;
  nlohmann::json submit_trial_result(const std::string& session_id, int words_correct,
                                     const std::string& idempotency_key);
  std::string export_session(const std::string& session_id) const;
  AudioBuffer trial_audio(const std::string& session_id) const;

  // Events with seq >= from_seq; waits up to `timeout` when none are ready.
  std::vector<SessionEvent> events_since(const std::string& session_id, std::uint64_t from_seq,
                                         std::chrono::milliseconds timeout = std::chrono::milliseconds(0)) const;
  bool finished(const std::string& session_id) const;

  std::vector<std::string> session_ids() const;
  const std::filesystem::path& data_dir() const { return data_dir_; }

 private:
  struct Live;

  Live& live(const std::string& session_id) const;
  nlohmann::json snapshot(const Live& s) const;
  void append(Live& s, std::size_t from_record);
  void emit(Live& s, const std::string& type, nlohmann::json data);
  void recover();
  AudioBuffer render(const SessionEngine& engine) const;
  std::array<const StoryAsset*, 2> pick_stories(ConditionName condition) const;

  ServiceResources resources_;
  std::filesystem::path data_dir_;
  PlaybackSink sink_;

  mutable std::mutex registry_mutex_;
  std::map<std::string, std::unique_ptr<Live>> sessions_;
  std::uint64_t next_id_ = 1;
};

}  // namespace lisn
