#include "lisn/session_log.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace lisn {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string SessionHeader::participant_code() const {
  if (participant.is_object() && participant.contains("code") && participant["code"].is_string() &&
      !participant["code"].get<std::string>().empty())
    return participant["code"].get<std::string>();
  return session_id;
}

json config_to_json(const StaircaseConfig& c) {
  return {{"competing_level", c.competing_level},
          {"training_snr", c.training_snr},
          {"training_trials", c.training_trials},
          {"big_step", c.big_step},
          {"small_step", c.small_step},
          {"block_length", c.block_length},
          {"blocks", c.blocks},
          {"next_block_offset", c.next_block_offset},
          {"level_clamp", {c.level_clamp.min, c.level_clamp.max}},
          {"min_midpoints", c.min_midpoints},
          {"extend_until_valid", c.extend_until_valid},
          {"max_extra_trials", c.max_extra_trials}};
}

StaircaseConfig config_from_json(const json& j, StaircaseConfig c) {
  if (!j.is_object()) throw LogFormatError("staircase config must be an object");
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("competing_level", c.competing_level);
  take("training_snr", c.training_snr);
  take("training_trials", c.training_trials);
  take("big_step", c.big_step);
  take("small_step", c.small_step);
  take("block_length", c.block_length);
  take("blocks", c.blocks);
  take("next_block_offset", c.next_block_offset);
  take("min_midpoints", c.min_midpoints);
  take("extend_until_valid", c.extend_until_valid);
  take("max_extra_trials", c.max_extra_trials);
  if (j.contains("level_clamp")) {
    const auto& lc = j.at("level_clamp");
    if (!lc.is_array() || lc.size() != 2) throw LogFormatError("level_clamp must be [min, max]");
    c.level_clamp = {lc[0].get<double>(), lc[1].get<double>()};
  }
  return c;
}

json header_to_json(const SessionHeader& h) {
  return {{"type", "session"},
          {"schema", kSessionSchema},
          {"session_id", h.session_id},
          {"participant", h.participant},
          {"condition", to_string(h.condition)},
          {"config", config_to_json(h.config)},
          {"max_restarts", h.max_restarts},
          {"calibration", {{"spl_at_fullscale", h.calibration.spl_at_fullscale}}},
          {"seed", h.seed},
          {"created_at", h.created_at},
          {"sentence_pool", h.sentence_pool},
          {"sentence_words", h.sentence_words},
          {"story_lengths", h.story_lengths}};
}

SessionHeader header_from_json(const json& j) {
  try {
    if (j.at("type") != "session") throw LogFormatError("first record must be the session header");
    if (j.at("schema") != kSessionSchema)
      throw LogFormatError("unsupported schema " + j.at("schema").dump());
    SessionHeader h;
    h.session_id = j.at("session_id").get<std::string>();
    h.participant = j.value("participant", json::object());
    h.condition = condition_from_string(j.at("condition").get<std::string>());
    h.config = config_from_json(j.at("config"));
    h.max_restarts = j.value("max_restarts", 5);
    const auto& cal = j.at("calibration").at("spl_at_fullscale");
    h.calibration.spl_at_fullscale = {cal.at(0).get<double>(), cal.at(1).get<double>()};
    h.seed = j.at("seed").get<std::uint64_t>();
    h.created_at = j.value("created_at", "");
    h.sentence_pool = j.at("sentence_pool").get<std::vector<std::string>>();
    h.sentence_words = j.at("sentence_words").get<std::vector<int>>();
    if (h.sentence_pool.size() != h.sentence_words.size())
      throw LogFormatError("sentence_pool and sentence_words differ in length");
    if (j.contains("story_lengths")) h.story_lengths = j.at("story_lengths").get<std::array<std::size_t, 2>>();
    return h;
  } catch (const json::exception& e) {
    throw LogFormatError(std::string("bad session header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw LogFormatError(std::string("bad session header: ") + e.what());
  }
}

json record_to_json(const LogRecord& record) {
  return std::visit(
      [](const auto& r) -> json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, BlockStartRecord>) {
          return {{"type", "block_start"},      {"block_index", r.block_index},
                  {"attempt", r.attempt},       {"level", r.level},
                  {"prev_srt", optional_number(r.prev_srt)}, {"story_offsets", r.story_offsets}};
        } else if constexpr (std::is_same_v<T, TrialLogRecord>) {
          const auto& t = r.trial;
          return {{"type", "trial"},
                  {"block_index", t.block_index},
                  {"attempt", r.attempt},
                  {"trial_index", t.trial_index},
                  {"sentence_id", t.sentence_id},
                  {"level", t.level},
                  {"snr", t.snr},
                  {"words_total", t.words_total},
                  {"words_correct", t.words_correct},
                  {"is_training", t.is_training},
                  {"key", r.key},
                  {"reversal", r.reversal ? json(to_string(*r.reversal)) : json(nullptr)},
                  {"clamped", r.clamped},
                  {"next_level", r.next_level}};
        } else if constexpr (std::is_same_v<T, BlockEndRecord>) {
          return {{"type", "block_end"},
                  {"block_index", r.block_index},
                  {"attempt", r.attempt},
                  {"outcome", r.outcome},
                  {"srt", optional_number(r.srt)},
                  {"midpoints", r.midpoints},
                  {"valid", r.valid},
                  {"carried_level", optional_number(r.carried_level)}};
        } else if constexpr (std::is_same_v<T, SessionEndRecord>) {
          return {{"type", "session_end"}, {"status", r.status}, {"reason", r.reason}};
        } else {
          return {{"type", "export"}, {"complete", r.complete}, {"trial_count", r.trial_count}};
        }
      },
      record);
}

LogRecord record_from_json(const json& j) {
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "block_start") {
      BlockStartRecord r;
      r.block_index = j.at("block_index").get<int>();
      r.attempt = j.at("attempt").get<int>();
      r.level = j.at("level").get<double>();
      r.prev_srt = read_optional(j, "prev_srt");
      r.story_offsets = j.at("story_offsets").get<std::array<std::size_t, 2>>();
      return r;
    }
    if (type == "trial") {
      TrialLogRecord r;
      r.attempt = j.at("attempt").get<int>();
      r.trial.block_index = j.at("block_index").get<int>();
      r.trial.trial_index = j.at("trial_index").get<int>();
      r.trial.sentence_id = j.at("sentence_id").get<std::string>();
      r.trial.level = j.at("level").get<double>();
      r.trial.snr = j.at("snr").get<double>();
      r.trial.words_total = j.at("words_total").get<int>();
      r.trial.words_correct = j.at("words_correct").get<int>();
      r.trial.is_training = j.at("is_training").get<bool>();
      r.key = j.at("key").get<std::string>();
      if (j.contains("reversal") && !j.at("reversal").is_null())
        r.reversal = reversal_kind_from_string(j.at("reversal").get<std::string>());
      r.clamped = j.value("clamped", false);
      r.next_level = j.at("next_level").get<double>();
      return r;
    }
    if (type == "block_end") {
      BlockEndRecord r;
      r.block_index = j.at("block_index").get<int>();
      r.attempt = j.at("attempt").get<int>();
      r.outcome = j.at("outcome").get<std::string>();
      r.srt = read_optional(j, "srt");
      r.midpoints = j.at("midpoints").get<std::vector<double>>();
      r.valid = j.at("valid").get<bool>();
      r.carried_level = read_optional(j, "carried_level");
      return r;
    }
    if (type == "session_end") return SessionEndRecord{j.at("status").get<std::string>(), j.value("reason", "")};
    if (type == "export") return ExportFooter{j.at("complete").get<bool>(), j.at("trial_count").get<int>()};
    throw LogFormatError("unknown record type '" + type + "'");
  } catch (const json::exception& e) {
    throw LogFormatError(std::string("bad log record: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw LogFormatError(std::string("bad log record: ") + e.what());
  }
}

std::string to_ndjson_line(const json& j) { return j.dump() + "\n"; }

std::vector<TrialLogRecord> SessionLog::trials() const {
  std::vector<TrialLogRecord> out;
  for (const auto& r : records)
    if (const auto* t = std::get_if<TrialLogRecord>(&r)) out.push_back(*t);
  return out;
}

std::optional<SessionEndRecord> SessionLog::end() const {
  for (const auto& r : records)
    if (const auto* e = std::get_if<SessionEndRecord>(&r)) return *e;
  return std::nullopt;
}

bool SessionLog::complete() const {
  const auto e = end();
  return e && e->status == "complete";
}

SessionLog parse_session_log(std::istream& in) {
  SessionLog log;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw LogFormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      log.header = header_from_json(j);
      have_header = true;
    } else {
      log.records.push_back(record_from_json(j));
    }
  }
  if (!have_header) throw LogFormatError("empty session log");
  return log;
}

SessionLog read_session_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LogFormatError("cannot open " + path.string());
  try {
    return parse_session_log(in);
  } catch (const LogFormatError& e) {
    throw LogFormatError(path.string() + ": " + e.what());
  }
}

void write_session_log(std::ostream& out, const SessionLog& log) {
  out << to_ndjson_line(header_to_json(log.header));
  for (const auto& r : log.records) out << to_ndjson_line(record_to_json(r));
}

void write_session_log(const std::filesystem::path& path, const SessionLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LogFormatError("cannot write " + path.string());
  write_session_log(out, log);
}

std::vector<std::string> validate_session_log(std::istream& in) {
  std::vector<std::string> problems;
  auto problem = [&](int line, const std::string& msg) {
    problems.push_back("line " + std::to_string(line) + ": " + msg);
  };
  std::string line;
  int line_no = 0;
  bool have_header = false, ended = false, footer = false;
  bool block_open = false;
  int open_block = 0, open_attempt = 0, expected_trial = 0;
  std::set<std::string> keys;
  double competing = 0.0;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      problem(line_no, std::string("not JSON: ") + e.what());
      continue;
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
      problem(line_no, "record lacks a string 'type'");
      continue;
    }
    const std::string type = j["type"];
    if (footer) problem(line_no, "record after export footer");
    if (!have_header) {
      if (type != "session") {
        problem(line_no, "first record must be the session header");
      } else {
        try {
          competing = header_from_json(j).config.competing_level;
        } catch (const LogFormatError& e) {
          problem(line_no, e.what());
        }
      }
      have_header = true;
      continue;
    }
    LogRecord rec;
    try {
      rec = record_from_json(j);
    } catch (const LogFormatError& e) {
      problem(line_no, e.what());
      continue;
    }
    if (ended && type != "export") problem(line_no, "record after session_end");
    if (const auto* bs = std::get_if<BlockStartRecord>(&rec)) {
      if (block_open) problem(line_no, "block_start while a block is open");
      block_open = true;
      open_block = bs->block_index;
      open_attempt = bs->attempt;
      expected_trial = 0;
    } else if (const auto* t = std::get_if<TrialLogRecord>(&rec)) {
      if (!block_open) problem(line_no, "trial outside a block");
      if (t->trial.block_index != open_block || t->attempt != open_attempt)
        problem(line_no, "trial block/attempt does not match the open block");
      if (t->trial.trial_index != expected_trial) problem(line_no, "trial_index out of sequence");
      ++expected_trial;
      if (t->trial.words_correct < 0 || t->trial.words_correct > t->trial.words_total)
        problem(line_no, "words_correct outside [0, words_total]");
      if (t->trial.snr != t->trial.level - competing) problem(line_no, "snr inconsistent with level");
      if (!keys.insert(t->key).second) problem(line_no, "duplicate trial key " + t->key);
    } else if (const auto* be = std::get_if<BlockEndRecord>(&rec)) {
      if (!block_open || be->block_index != open_block || be->attempt != open_attempt)
        problem(line_no, "block_end without a matching block_start");
      if (be->outcome != "complete" && be->outcome != "restart") problem(line_no, "unknown block outcome");
      block_open = false;
    } else if (const auto* se = std::get_if<SessionEndRecord>(&rec)) {
      if (se->status != "complete" && se->status != "failed") problem(line_no, "unknown session status");
      ended = true;
    } else if (std::holds_alternative<ExportFooter>(rec)) {
      footer = true;
    }
  }
  if (!have_header) problems.push_back("empty log");
  return problems;
}

}  // namespace lisn
