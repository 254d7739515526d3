#include "lisn/analysis.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lisn {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

template <class Key>
GroupEffect group_effect(const std::string& factor, const std::vector<LabelledObservation>& obs,
                         Key key_of, bool with_tukey) {
  std::map<std::string, Group> groups;
  for (const auto& o : obs) groups[key_of(o)].push_back(o.obs.atsl);
  GroupEffect e;
  e.factor = factor;
  std::vector<Group> ordered;
  for (auto& [label, g] : groups) {
    e.labels.push_back(label);
    e.sizes.push_back(g.size());
    ordered.push_back(std::move(g));
  }
  e.anova = anova_oneway(ordered);
  if (with_tukey) e.tukey = tukey_hsd(ordered);
  return e;
}

}  // namespace

std::vector<BlockData> blocks_from_log(const SessionLog& log) {
  std::vector<BlockData> out;
  std::vector<TrialRecord> current;
  for (const auto& r : log.records) {
    if (std::holds_alternative<BlockStartRecord>(r)) {
      current.clear();
    } else if (const auto* t = std::get_if<TrialLogRecord>(&r)) {
      current.push_back(t->trial);
    } else if (const auto* b = std::get_if<BlockEndRecord>(&r)) {
      if (b->outcome != "complete") continue;
      BlockData d;
      d.participant = log.header.participant_code();
      d.block_index = b->block_index;
      d.trials = current;
      d.srt.midpoints = b->midpoints;
      d.srt.n_midpoints = static_cast<int>(b->midpoints.size());
      d.srt.value = b->srt.value_or(std::nan(""));
      d.srt.valid = b->valid;
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<BlockData> load_flat_trial_table(const std::filesystem::path& path, int min_midpoints) {
  std::ifstream in(path);
  if (!in) throw AnalysisError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw AnalysisError(path.string() + ": empty trial table");
  const auto header = split_tabs(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* c : {"participant", "block", "trial", "sentence_id", "level", "words_total", "words_correct",
                        "training"})
    if (!col.count(c)) throw AnalysisError(path.string() + ": missing column '" + c + "'");
  const bool has_srt = col.count("block_srt") != 0;
  const bool has_snr = col.count("snr") != 0;

  std::map<std::pair<std::string, int>, BlockData> blocks;
  std::vector<std::pair<std::string, int>> order;
  std::map<std::pair<std::string, int>, std::optional<double>> given_srt;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != header.size())
      throw AnalysisError(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
    try {
      TrialRecord t;
      const std::string participant = f[col["participant"]];
      t.block_index = std::stoi(f[col["block"]]);
      t.trial_index = std::stoi(f[col["trial"]]);
      t.sentence_id = f[col["sentence_id"]];
      t.level = std::stod(f[col["level"]]);
      if (has_snr) t.snr = std::stod(f[col["snr"]]);
      t.words_total = std::stoi(f[col["words_total"]]);
      t.words_correct = std::stoi(f[col["words_correct"]]);
      const std::string tr = f[col["training"]];
      t.is_training = tr == "1" || tr == "true";
      if (t.words_correct < 0 || t.words_correct > t.words_total) throw std::invalid_argument("word counts");
      const auto key = std::make_pair(participant, t.block_index);
      if (!blocks.count(key)) {
        order.push_back(key);
        blocks[key].participant = participant;
        blocks[key].block_index = t.block_index;
      }
      if (has_srt && !f[col["block_srt"]].empty() && f[col["block_srt"]] != "nan")
        given_srt[key] = std::stod(f[col["block_srt"]]);
      blocks[key].trials.push_back(t);
    } catch (const std::exception& e) {
      throw AnalysisError(path.string() + ":" + std::to_string(line_no) + ": bad row (" + e.what() + ")");
    }
  }
  std::vector<BlockData> out;
  for (const auto& key : order) {
    BlockData d = std::move(blocks[key]);
    if (auto it = given_srt.find(key); it != given_srt.end() && it->second) {
      d.srt.value = *it->second;
      d.srt.valid = true;
    } else {
      d.srt = srt_from_reversals(reversals_from_trials(d.trials), min_midpoints);
    }
    out.push_back(std::move(d));
  }
  return out;
}

void write_flat_trial_table(const std::filesystem::path& path, std::span<const BlockData> blocks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw AnalysisError("cannot write " + path.string());
  out << "participant\tblock\ttrial\tsentence_id\tlevel\tsnr\twords_total\twords_correct\ttraining\tblock_srt\n";
  for (const auto& b : blocks)
    for (const auto& t : b.trials)
      out << b.participant << '\t' << t.block_index << '\t' << t.trial_index << '\t' << t.sentence_id << '\t'
          << fmt(t.level) << '\t' << fmt(t.snr) << '\t' << t.words_total << '\t' << t.words_correct << '\t' << (t.is_training ? 1 : 0)
          << '\t' << (b.srt.valid ? fmt(b.srt.value) : "") << '\n';
}

PsychometricFit shifted_fit(const PsychometricFit& fit, double gain_db) {
  PsychometricFit f = fit;
  f.r = fit.r - gain_db;
  f.a = -f.b * f.r;
  return f;
}

AnalysisReport run_analysis(std::span<const BlockData> blocks, const AnalysisConfig& config) {
  AnalysisReport rep;

  std::map<std::string, std::vector<double>> participant_srts;
  for (const auto& b : blocks)
    if (b.srt.valid) participant_srts[b.participant].push_back(b.srt.value);

  std::vector<LabelledObservation> everyone;
  for (const auto& b : blocks) {
    if (!b.srt.valid) {
      ++rep.blocks_without_valid_srt;
      continue;
    }
    double reference = b.srt.value;
    if (config.reference == AtslReference::Participant) {
      const auto& v = participant_srts[b.participant];
      double sum = 0.0;
      for (double x : v) sum += x;
      reference = sum / static_cast<double>(v.size());
    }
    ++rep.blocks_used;
    for (auto& o : compute_atsl(b.trials, reference)) everyone.push_back({b.participant, std::move(o)});
  }
  if (everyone.empty()) throw AnalysisError("no scored trials in blocks with a valid SRT");

  // The participant effect is what identifies outliers, so it sees everyone.
  std::set<std::string> people;
  for (const auto& o : everyone) people.insert(o.participant);
  if (people.size() >= 2)
    rep.effects.push_back(group_effect(
        "participant", everyone, [](const auto& o) { return o.participant; }, config.tukey_participants));

  for (const auto& o : everyone) {
    if (config.exclude_participants.count(o.participant)) continue;
    if (config.exclude_sentences.count(o.obs.sentence_id)) continue;
    rep.observations.push_back(o);
  }
  if (rep.observations.empty()) throw AnalysisError("every observation was excluded");

  auto try_effect = [&](const std::string& name, auto key_of, bool tukey) {
    std::set<std::string> labels;
    for (const auto& o : rep.observations) labels.insert(key_of(o));
    if (labels.size() >= 2 && rep.observations.size() > labels.size())
      rep.effects.push_back(group_effect(name, rep.observations, key_of, tukey));
  };
  try_effect("sentence", [](const auto& o) { return o.obs.sentence_id; }, false);
  try_effect("word_count", [](const auto& o) { return std::to_string(o.obs.words_total); }, true);
  try_effect("hit_rate",
             [](const auto& o) { return fmt(static_cast<double>(o.obs.words_correct) / o.obs.words_total); },
             false);

  std::vector<TrialObservation> plain;
  plain.reserve(rep.observations.size());
  for (const auto& o : rep.observations) plain.push_back(o.obs);
  rep.fits = fit_all(plain, config.fit);

  rep.selection = select_sentences(rep.fits, config.n_select, config.r2_min);
  rep.gains = equalization_gains(rep.selection, rep.fits, config.subtract_mean_gain);

  std::vector<PsychometricFit> converged, equalized;
  for (const auto& f : rep.fits)
    if (f.converged) converged.push_back(f);
  for (const auto& f : rep.fits)
    if (auto it = rep.gains.find(f.sentence_id); it != rep.gains.end()) equalized.push_back(shifted_fit(f, it->second));
  rep.slope_all = averaged_curve_slope(converged);
  rep.slope_equalized = averaged_curve_slope(equalized);
  return rep;
}

void write_fits_table(const std::filesystem::path& path, const AnalysisReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw AnalysisError("cannot write " + path.string());
  out << "sentence_id\ta\tb\ts\tr\tr_squared\tn\tconverged\tselected\tgain_db\n";
  for (const auto& f : report.fits) {
    const auto g = report.gains.find(f.sentence_id);
    const bool selected = g != report.gains.end();
    out << f.sentence_id << '\t' << fmt(f.a) << '\t' << fmt(f.b) << '\t' << fmt(f.s) << '\t' << fmt(f.r) << '\t'
        << fmt(f.r_squared) << '\t' << f.n_trials << '\t' << (f.converged ? 1 : 0) << '\t' << (selected ? 1 : 0)
        << '\t' << (selected ? fmt(g->second) : "0") << '\n';
  }
}

void write_gain_table(const std::filesystem::path& path, const AnalysisReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw AnalysisError("cannot write " + path.string());
  out << "sentence_id\tgain_db\n";
  for (const auto& [id, g] : report.gains) out << id << '\t' << fmt(g) << '\n';
}

nlohmann::json selection_report(const AnalysisReport& report) {
  const auto& s = report.selection;
  return {{"n_selected", s.selected_ids.size()},
          {"n_candidates", s.candidates.size()},
          {"gated_out", s.gated_out},
          {"median_r", s.median_r},
          {"median_s", s.median_s},
          {"sd_r", s.sd_r},
          {"sd_s", s.sd_s},
          {"threshold", s.threshold},
          {"region", {{"r_lo", s.region.r_lo}, {"r_hi", s.region.r_hi}, {"s_lo", s.region.s_lo}, {"s_hi", s.region.s_hi}}},
          {"selected_ids", s.selected_ids},
          {"averaged_slope_all", number_or_null(report.slope_all)},
          {"averaged_slope_equalized", number_or_null(report.slope_equalized)}};
}

nlohmann::json statistics_report(const AnalysisReport& report) {
  nlohmann::json effects = nlohmann::json::array();
  for (const auto& e : report.effects) {
    nlohmann::json j{{"factor", e.factor},
                     {"groups", e.labels.size()},
                     {"f", number_or_null(e.anova.f)},
                     {"df_between", e.anova.df_between},
                     {"df_within", e.anova.df_within},
                     {"p_value", e.anova.p_value},
                     {"degenerate", e.anova.degenerate}};
    if (e.tukey) {
      nlohmann::json pairs = nlohmann::json::array();
      std::map<std::string, int> involvement;
      for (const auto& p : e.tukey->pairs) {
        if (!p.significant) continue;
        pairs.push_back({{"first", e.labels[p.first]},
                         {"second", e.labels[p.second]},
                         {"mean_difference", p.mean_difference},
                         {"q", p.q},
                         {"p_adjusted", p.p_adjusted}});
        ++involvement[e.labels[p.first]];
        ++involvement[e.labels[p.second]];
      }
      j["tukey_significant_pairs"] = pairs;
      j["tukey_involvement"] = involvement;
    }
    effects.push_back(std::move(j));
  }
  return {{"blocks_used", report.blocks_used},
          {"blocks_without_valid_srt", report.blocks_without_valid_srt},
          {"observations", report.observations.size()},
          {"effects", effects}};
}

CorpusManifest adjusted_manifest(const CorpusManifest& manifest, const AnalysisReport& report) {
  CorpusManifest out;
  out.base_dir = manifest.base_dir;
  for (const auto& e : manifest.entries) {
    auto g = report.gains.find(e.sentence_id);
    if (g == report.gains.end()) continue;
    CorpusEntry copy = e;
    copy.eq_gain_db = g->second;
    out.entries.push_back(std::move(copy));
  }
  return out;
}

}  // namespace lisn
