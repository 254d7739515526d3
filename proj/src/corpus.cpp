#include "lisn/corpus.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace lisn {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

// Header-indexed TSV table.
struct Table {
  std::map<std::string, std::size_t> columns;
  std::vector<std::vector<std::string>> rows;

  bool has(const std::string& name) const { return columns.count(name) != 0; }

  const std::string& get(const std::vector<std::string>& row, const std::string& name) const {
    return row.at(columns.at(name));
  }
};

Table read_table(const fs::path& path, std::initializer_list<const char*> required) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ManifestError(path.string() + ": empty manifest");
  const auto header = split_tabs(line);
  for (std::size_t i = 0; i < header.size(); ++i) t.columns[header[i]] = i;
  for (const char* col : required)
    if (!t.has(col)) throw ManifestError(path.string() + ": missing column '" + col + "'");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto row = split_tabs(line);
    if (row.size() != header.size())
      throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields");
    t.rows.push_back(std::move(row));
  }
  return t;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ManifestError("bad number for " + what + ": '" + s + "'");
  }
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(10) << v;
  return o.str();
}

void check_field(const std::string& s) {
  if (s.find_first_of("\t\n\r") != std::string::npos)
    throw ManifestError("manifest fields may not contain tabs or newlines: '" + s + "'");
}

}  // namespace

fs::path CorpusManifest::resolve(const std::string& wav) const {
  fs::path p(wav);
  return p.is_absolute() ? p : base_dir / p;
}

const CorpusEntry* CorpusManifest::find(const std::string& sentence_id) const {
  for (const auto& e : entries)
    if (e.sentence_id == sentence_id) return &e;
  return nullptr;
}

CorpusManifest load_corpus_manifest(const fs::path& path) {
  const Table t = read_table(path, {"sentence_id", "text", "wav"});
  CorpusManifest m;
  m.base_dir = path.parent_path();
  for (const auto& row : t.rows) {
    CorpusEntry e;
    e.sentence_id = t.get(row, "sentence_id");
    e.text = t.get(row, "text");
    e.wav = t.get(row, "wav");
    e.word_count = count_words(e.text);
    if (t.has("word_count")) {
      const int declared = static_cast<int>(parse_double(t.get(row, "word_count"), "word_count"));
      if (declared != e.word_count)
        throw ManifestError("sentence " + e.sentence_id + ": word_count " + std::to_string(declared) +
                            " disagrees with text (" + std::to_string(e.word_count) + " words)");
    }
    if (e.word_count < 1) throw ManifestError("sentence " + e.sentence_id + " has no words");
    if (t.has("rms_db") && !t.get(row, "rms_db").empty()) e.rms_db = parse_double(t.get(row, "rms_db"), "rms_db");
    if (t.has("eq_gain_db") && !t.get(row, "eq_gain_db").empty())
      e.eq_gain_db = parse_double(t.get(row, "eq_gain_db"), "eq_gain_db");
    if (m.find(e.sentence_id)) throw ManifestError("duplicate sentence_id " + e.sentence_id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_corpus_manifest(const fs::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + path.string());
  out << "sentence_id\ttext\tword_count\twav\trms_db\teq_gain_db\n";
  for (const auto& e : manifest.entries) {
    for (const auto* f : {&e.sentence_id, &e.text, &e.wav}) check_field(*f);
    out << e.sentence_id << '\t' << e.text << '\t' << e.word_count << '\t' << e.wav << '\t' << fmt(e.rms_db)
        << '\t' << fmt(e.eq_gain_db) << '\n';
  }
}

fs::path StoryManifest::resolve(const std::string& wav) const {
  fs::path p(wav);
  return p.is_absolute() ? p : base_dir / p;
}

StoryManifest load_story_manifest(const fs::path& path) {
  const Table t = read_table(path, {"story_id", "wav"});
  StoryManifest m;
  m.base_dir = path.parent_path();
  for (const auto& row : t.rows) {
    StoryEntry e;
    e.story_id = t.get(row, "story_id");
    e.wav = t.get(row, "wav");
    if (t.has("voice")) e.voice = t.get(row, "voice");
    if (t.has("rms_db") && !t.get(row, "rms_db").empty()) e.rms_db = parse_double(t.get(row, "rms_db"), "rms_db");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_story_manifest(const fs::path& path, const StoryManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + path.string());
  out << "story_id\tvoice\twav\trms_db\n";
  for (const auto& e : manifest.entries) {
    for (const auto* f : {&e.story_id, &e.voice, &e.wav}) check_field(*f);
    out << e.story_id << '\t' << e.voice << '\t' << e.wav << '\t' << fmt(e.rms_db) << '\n';
  }
}

HrirSet load_hrir_set(const fs::path& manifest_path) {
  const Table t = read_table(manifest_path, {"azimuth", "wav"});
  HrirSet set;
  bool first = true;
  for (const auto& row : t.rows) {
    const int az = static_cast<int>(parse_double(t.get(row, "azimuth"), "azimuth"));
    fs::path wav(t.get(row, "wav"));
    if (!wav.is_absolute()) wav = manifest_path.parent_path() / wav;
    const AudioBuffer ir = read_wav(wav);
    if (ir.channel_count() != 2) throw ManifestError(wav.string() + ": HRIR files must be stereo");
    if (first) {
      set.sample_rate = ir.sample_rate;
      first = false;
    } else if (ir.sample_rate != set.sample_rate) {
      throw ManifestError(wav.string() + ": HRIR sample rates differ");
    }
    set.by_azimuth[az] = {ir.channels[0], ir.channels[1]};
  }
  set.validate();
  return set;
}

Calibration load_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open calibration file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  const auto& v = j.at("spl_at_fullscale");
  if (!v.is_array() || v.size() != 2)
    throw ManifestError(path.string() + ": spl_at_fullscale must list two channel values");
  Calibration c;
  c.spl_at_fullscale = {v[0].get<double>(), v[1].get<double>()};
  c.validate();
  return c;
}

void save_calibration(const fs::path& path, const Calibration& calibration) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + path.string());
  out << nlohmann::json{{"spl_at_fullscale", calibration.spl_at_fullscale}}.dump(2) << '\n';
}

std::vector<SentenceAsset> load_sentence_assets(const CorpusManifest& manifest) {
  std::vector<SentenceAsset> out;
  for (const auto& e : manifest.entries) {
    SentenceAsset a;
    a.sentence_id = e.sentence_id;
    a.text = e.text;
    a.word_count = e.word_count;
    a.audio = read_wav(manifest.resolve(e.wav));
    if (a.audio.channel_count() != 1) throw ManifestError(e.wav + ": sentence recordings must be mono");
    a.rms_db = rms_db(a.audio);
    a.eq_gain_db = e.eq_gain_db;
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<AudioBuffer> load_stories(const StoryManifest& manifest) {
  std::vector<AudioBuffer> out;
  for (const auto& e : manifest.entries) {
    auto b = read_wav(manifest.resolve(e.wav));
    if (b.channel_count() != 1) throw ManifestError(e.wav + ": story recordings must be mono");
    out.push_back(std::move(b));
  }
  return out;
}

PrepareResult prepare_corpus(const CorpusManifest& corpus, const StoryManifest& stories,
                             const fs::path& out_dir, const PrepareOptions& options) {
  auto assets = load_sentence_assets(corpus);
  auto story_audio = load_stories(stories);
  int rate = 0;
  auto check_rate = [&](const AudioBuffer& b, const std::string& id) {
    if (rate == 0) rate = b.sample_rate;
    if (b.sample_rate != rate) throw ManifestError(id + ": sample rate differs from the rest of the corpus");
  };
  for (auto& a : assets) {
    check_rate(a.audio, a.sentence_id);
    a.audio = pad_silence(a.audio, options.sentence_pad_ms, options.sentence_pad_ms);
  }
  for (std::size_t i = 0; i < story_audio.size(); ++i) {
    check_rate(story_audio[i], stories.entries[i].story_id);
    story_audio[i] = pad_silence(story_audio[i], options.story_pad_ms, options.story_pad_ms);
  }

  PrepareResult result;
  result.gains = normalize_corpus(assets, story_audio, options.headroom_db);

  fs::create_directories(out_dir / "sentences");
  fs::create_directories(out_dir / "stories");
  result.corpus.base_dir = out_dir;
  result.stories.base_dir = out_dir;
  for (std::size_t i = 0; i < assets.size(); ++i) {
    apply_gain_db(assets[i].audio, result.gains.sentence_gains_db[i]);
    const std::string rel = "sentences/" + assets[i].sentence_id + ".wav";
    write_wav(out_dir / rel, assets[i].audio, options.format);
    CorpusEntry e = corpus.entries[i];
    e.wav = rel;
    e.rms_db = rms_db(read_wav(out_dir / rel));
    result.corpus.entries.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < story_audio.size(); ++i) {
    apply_gain_db(story_audio[i], result.gains.story_gains_db[i]);
    const std::string rel = "stories/" + stories.entries[i].story_id + ".wav";
    write_wav(out_dir / rel, story_audio[i], options.format);
    StoryEntry e = stories.entries[i];
    e.wav = rel;
    e.rms_db = rms_db(read_wav(out_dir / rel));
    result.stories.entries.push_back(std::move(e));
  }
  save_corpus_manifest(out_dir / "corpus.tsv", result.corpus);
  save_story_manifest(out_dir / "stories.tsv", result.stories);
  return result;
}

}  // namespace lisn
