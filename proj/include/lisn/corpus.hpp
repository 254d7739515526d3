#pragma once

// Corpus, story, HRIR and calibration files, plus the corpus preparation run.
//
// Manifests are tab-separated with a header row. Relative wav paths resolve
// against the manifest's directory.

#include <filesystem>
#include <string>
#include <vector>

#include "lisn/audio.hpp"
#include "lisn/wav.hpp"

namespace lisn {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusEntry {
  std::string sentence_id;
  std::string text;
  int word_count = 0;
  std::string wav;  // as written in the manifest
  double rms_db = 0.0;
  double eq_gain_db = 0.0;
};

struct CorpusManifest {
  std::filesystem::path base_dir;
  std::vector<CorpusEntry> entries;

  std::filesystem::path resolve(const std::string& wav) const;
  const CorpusEntry* find(const std::string& sentence_id) const;
};

CorpusManifest load_corpus_manifest(const std::filesystem::path& path);
void save_corpus_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);

struct StoryEntry {
  std::string story_id;
  std::string voice;
  std::string wav;
  double rms_db = 0.0;
};

struct StoryManifest {
  std::filesystem::path base_dir;
  std::vector<StoryEntry> entries;

  std::filesystem::path resolve(const std::string& wav) const;
};

StoryManifest load_story_manifest(const std::filesystem::path& path);
void save_story_manifest(const std::filesystem::path& path, const StoryManifest& manifest);

// Columns: azimuth, wav (stereo, left channel = left-ear IR).
HrirSet load_hrir_set(const std::filesystem::path& manifest_path);

// {"spl_at_fullscale": [left, right]}
Calibration load_calibration(const std::filesystem::path& path);
void save_calibration(const std::filesystem::path& path, const Calibration& calibration);

std::vector<SentenceAsset> load_sentence_assets(const CorpusManifest& manifest);
std::vector<AudioBuffer> load_stories(const StoryManifest& manifest);

struct PrepareOptions {
  double headroom_db = 7.0;
  double sentence_pad_ms = 500.0;
  double story_pad_ms = 100.0;
  SampleFormat format = SampleFormat::Pcm16;
};

struct PrepareResult {
  CorpusManifest corpus;
  StoryManifest stories;
  NormalizationGains gains;
};

// Pads, then normalizes every item to the corpus mean RMS minus headroom,
// writes the WAVs under out_dir and returns manifests whose rms_db columns are
// measured on the written files.
PrepareResult prepare_corpus(const CorpusManifest& corpus, const StoryManifest& stories,
                             const std::filesystem::path& out_dir, const PrepareOptions& options);

}  // namespace lisn
