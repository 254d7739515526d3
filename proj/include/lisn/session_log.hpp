#pragma once

// Session log: append-only newline-delimited JSON, one record per line.
//
//   {"type":"session", ...}        header, always first
//   {"type":"block_start", ...}    one per block attempt
//   {"type":"trial", ...}          one per scored sentence, training included
//   {"type":"block_end", ...}      "complete" or "restart"
//   {"type":"session_end", ...}    "complete" or "failed"
//   {"type":"export", ...}         footer written only by export
//
// Live sessions and simulated sessions write the same records.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "lisn/audio.hpp"
#include "lisn/staircase.hpp"

namespace lisn {

inline constexpr const char* kSessionSchema = "lisn.session/1";

class LogFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SessionHeader {
  std::string session_id;
  nlohmann::json participant = nlohmann::json::object();  // free-form examiner fields
  ConditionName condition = ConditionName::SV0;
  StaircaseConfig config;
  int max_restarts = 5;
  Calibration calibration;
  std::uint64_t seed = 0;
  std::string created_at;
  std::vector<std::string> sentence_pool;  // corpus ids in corpus order
  std::vector<int> sentence_words;         // word count per pool entry
  std::array<std::size_t, 2> story_lengths{0, 0};

  // Participant code when present, otherwise the session id.
  std::string participant_code() const;
};

struct BlockStartRecord {
  int block_index = 1;
  int attempt = 0;
  double level = 0.0;
  std::optional<double> prev_srt;
  std::array<std::size_t, 2> story_offsets{0, 0};
};

struct TrialLogRecord {
  int attempt = 0;
  TrialRecord trial;
  std::string key;
  std::optional<ReversalKind> reversal;
  bool clamped = false;
  double next_level = 0.0;  // level after this response (unchanged on block end)
};

struct BlockEndRecord {
  int block_index = 1;
  int attempt = 0;
  std::string outcome;  // "complete" | "restart"
  std::optional<double> srt;
  std::vector<double> midpoints;
  bool valid = false;
  std::optional<double> carried_level;  // reference handed to the next block
};

struct SessionEndRecord {
  std::string status;  // "complete" | "failed"
  std::string reason;
};

struct ExportFooter {
  bool complete = false;
  int trial_count = 0;
};

using LogRecord = std::variant<BlockStartRecord, TrialLogRecord, BlockEndRecord, SessionEndRecord, ExportFooter>;

struct SessionLog {
  SessionHeader header;
  std::vector<LogRecord> records;

  std::vector<TrialLogRecord> trials() const;
  bool complete() const;  // a session_end "complete" record is present
  std::optional<SessionEndRecord> end() const;
};

nlohmann::json config_to_json(const StaircaseConfig& c);
StaircaseConfig config_from_json(const nlohmann::json& j, StaircaseConfig base = {});

nlohmann::json header_to_json(const SessionHeader& h);
SessionHeader header_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const LogRecord& r);
LogRecord record_from_json(const nlohmann::json& j);

std::string to_ndjson_line(const nlohmann::json& j);

SessionLog parse_session_log(std::istream& in);
SessionLog read_session_log(const std::filesystem::path& path);
void write_session_log(std::ostream& out, const SessionLog& log);
void write_session_log(const std::filesystem::path& path, const SessionLog& log);

// Structural schema check over raw NDJSON text. Returns one message per
// problem; empty means valid.
std::vector<std::string> validate_session_log(std::istream& in);

}  // namespace lisn
