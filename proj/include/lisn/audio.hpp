#pragma once

// Corpus preparation and trial rendering.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lisn {

class AudioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Planar floating-point audio, full scale = 1.0.
struct AudioBuffer {
  std::vector<std::vector<double>> channels;
  int sample_rate = 44100;

  static AudioBuffer mono(std::vector<double> samples, int sample_rate = 44100);
  static AudioBuffer stereo(std::vector<double> left, std::vector<double> right,
                            int sample_rate = 44100);
  static AudioBuffer silence(std::size_t frames, int n_channels, int sample_rate = 44100);

  std::size_t frames() const { return channels.empty() ? 0 : channels.front().size(); }
  int channel_count() const { return static_cast<int>(channels.size()); }
  double peak() const;
  bool all_finite() const;

  bool operator==(const AudioBuffer&) const = default;
};

double db_to_gain(double db);
double gain_to_db(double gain);

// 20 log10 of the RMS over every sample of every channel.
double rms_db(const AudioBuffer& buffer);

void apply_gain_db(AudioBuffer& buffer, double gain_db);

struct SentenceAsset {
  std::string sentence_id;
  std::string text;
  int word_count = 0;
  AudioBuffer audio;  // mono
  double rms_db = 0.0;
  double eq_gain_db = 0.0;
};

int count_words(const std::string& text);

struct NormalizationGains {
  double target_db = 0.0;  // mean RMS over all items, before headroom
  std::vector<double> sentence_gains_db;
  std::vector<double> story_gains_db;
};

NormalizationGains normalize_corpus(std::span<const SentenceAsset> assets,
                                    std::span<const AudioBuffer> stories, double headroom_db = 7.0);

std::size_t ms_to_samples(double ms, int sample_rate);
AudioBuffer pad_silence(const AudioBuffer& buffer, double pre_ms, double post_ms);
AudioBuffer trim_samples(const AudioBuffer& buffer, std::size_t pre, std::size_t post);

struct Calibration {
  // dB SPL of a 0 dBFS RMS signal on each headphone channel.
  std::array<double, 2> spl_at_fullscale{100.0, 100.0};

  void validate() const;
  // Digital RMS level (dBFS) producing `spl` on `channel`.
  double dbfs_for(double spl, int channel) const { return spl - spl_at_fullscale.at(channel); }
};

std::vector<double> hann_window(std::size_t n);

// Diotic stereo tone. The level refers to the carrier's RMS before windowing.
AudioBuffer synthesize_warning_tone(const Calibration& calibration, double level_spl = 60.0,
                                    double frequency_hz = 1000.0, double duration_ms = 200.0,
                                    int sample_rate = 44100);

struct ImpulseResponsePair {
  std::vector<double> left;
  std::vector<double> right;
};

struct HrirSet {
  std::map<int, ImpulseResponsePair> by_azimuth;  // degrees: 0, +90, -90
  int sample_rate = 44100;

  // Unit impulses at every azimuth: spatialization becomes diotic copying.
  static HrirSet identity(int sample_rate = 44100);
  void validate() const;
  const ImpulseResponsePair& at(int azimuth) const;
};

// Full linear convolution (length n + m - 1).
std::vector<double> convolve(std::span<const double> signal, std::span<const double> kernel);

AudioBuffer spatialize(const AudioBuffer& mono, const HrirSet& hrirs, int azimuth);

enum class ConditionName { SV0, DV0, SV90, DV90 };

struct SpatialCondition {
  ConditionName name = ConditionName::SV0;
  int target_azimuth = 0;
  std::array<int, 2> distractor_azimuths{0, 0};
  bool distractors_same_voice = true;

  static SpatialCondition make(ConditionName name);
};

const char* to_string(ConditionName c);
ConditionName condition_from_string(const std::string& s);

enum class CompetingMode { Combined, PerStream };

struct TrialRenderRequest {
  std::string trial_label;  // used in error messages
  double target_level = 72.0;
  double competing_level = 65.0;
  std::array<std::size_t, 2> story_offsets{0, 0};
  double tone_level = 60.0;
  double gap_ms = 500.0;
  CompetingMode competing_mode = CompetingMode::Combined;
};

class ClippingError : public AudioError {
 public:
  using AudioError::AudioError;
};

// Layout: warning tone, gap, target sentence; the two stories loop under the
// whole buffer. Target level includes target.eq_gain_db.
AudioBuffer assemble_trial(const SentenceAsset& target, std::span<const AudioBuffer> stories,
                           const SpatialCondition& condition, const HrirSet& hrirs,
                           const Calibration& calibration, const TrialRenderRequest& request);

}  // namespace lisn
