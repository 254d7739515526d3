#include "lisn/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <sstream>

namespace lisn {

AudioBuffer AudioBuffer::mono(std::vector<double> samples, int sample_rate) {
  AudioBuffer b;
  b.channels.push_back(std::move(samples));
  b.sample_rate = sample_rate;
  return b;
}

AudioBuffer AudioBuffer::stereo(std::vector<double> left, std::vector<double> right,
                                int sample_rate) {
  if (left.size() != right.size()) throw AudioError("stereo channels differ in length");
  AudioBuffer b;
  b.channels.push_back(std::move(left));
  b.channels.push_back(std::move(right));
  b.sample_rate = sample_rate;
  return b;
}

AudioBuffer AudioBuffer::silence(std::size_t frames, int n_channels, int sample_rate) {
  AudioBuffer b;
  b.channels.assign(static_cast<std::size_t>(n_channels), std::vector<double>(frames, 0.0));
  b.sample_rate = sample_rate;
  return b;
}

double AudioBuffer::peak() const {
  double p = 0.0;
  for (const auto& ch : channels)
    for (double x : ch) p = std::max(p, std::abs(x));
  return p;
}

bool AudioBuffer::all_finite() const {
  for (const auto& ch : channels)
    for (double x : ch)
      if (!std::isfinite(x)) return false;
  return true;
}

double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }
double gain_to_db(double gain) { return 20.0 * std::log10(gain); }

double rms_db(const AudioBuffer& buffer) {
  long double sum = 0.0L;
  std::size_t n = 0;
  for (const auto& ch : buffer.channels) {
    for (double x : ch) sum += static_cast<long double>(x) * x;
    n += ch.size();
  }
  if (n == 0) throw AudioError("rms of an empty buffer is undefined");
  if (sum == 0.0L) throw AudioError("rms of a silent buffer is undefined");
  return 10.0 * std::log10(static_cast<double>(sum / static_cast<long double>(n)));
}

void apply_gain_db(AudioBuffer& buffer, double gain_db) {
  const double g = db_to_gain(gain_db);
  for (auto& ch : buffer.channels)
    for (double& x : ch) x *= g;
}

int count_words(const std::string& text) {
  std::istringstream in(text);
  std::string tok;
  int n = 0;
  while (in >> tok) ++n;
  return n;
}

NormalizationGains normalize_corpus(std::span<const SentenceAsset> assets,
                                    std::span<const AudioBuffer> stories, double headroom_db) {
  if (assets.empty() && stories.empty()) throw AudioError("normalize_corpus needs at least one item");
  std::vector<double> sentence_rms, story_rms;
  for (const auto& a : assets) sentence_rms.push_back(rms_db(a.audio));
  for (const auto& s : stories) story_rms.push_back(rms_db(s));

  double sum = 0.0;
  for (double r : sentence_rms) sum += r;
  for (double r : story_rms) sum += r;
  NormalizationGains g;
  g.target_db = sum / static_cast<double>(sentence_rms.size() + story_rms.size());
  for (double r : sentence_rms) g.sentence_gains_db.push_back(g.target_db - r - headroom_db);
  for (double r : story_rms) g.story_gains_db.push_back(g.target_db - r - headroom_db);
  return g;
}

std::size_t ms_to_samples(double ms, int sample_rate) {
  if (ms < 0.0) throw AudioError("negative duration");
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

AudioBuffer pad_silence(const AudioBuffer& buffer, double pre_ms, double post_ms) {
  const std::size_t pre = ms_to_samples(pre_ms, buffer.sample_rate);
  const std::size_t post = ms_to_samples(post_ms, buffer.sample_rate);
  AudioBuffer out;
  out.sample_rate = buffer.sample_rate;
  for (const auto& ch : buffer.channels) {
    std::vector<double> padded(pre + ch.size() + post, 0.0);
    std::copy(ch.begin(), ch.end(), padded.begin() + static_cast<std::ptrdiff_t>(pre));
    out.channels.push_back(std::move(padded));
  }
  return out;
}

AudioBuffer trim_samples(const AudioBuffer& buffer, std::size_t pre, std::size_t post) {
  if (pre + post > buffer.frames()) throw AudioError("trim exceeds buffer length");
  AudioBuffer out;
  out.sample_rate = buffer.sample_rate;
  for (const auto& ch : buffer.channels)
    out.channels.emplace_back(ch.begin() + static_cast<std::ptrdiff_t>(pre),
                              ch.end() - static_cast<std::ptrdiff_t>(post));
  return out;
}

void Calibration::validate() const {
  for (double v : spl_at_fullscale)
    if (!std::isfinite(v)) throw AudioError("calibration values must be finite");
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n, 0.0);
  if (n < 2) return w;
  const double denom = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    // Mirror the index so the window is exactly symmetric in floating point.
    const std::size_t k = std::min(i, n - 1 - i);
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / denom));
  }
  return w;
}

AudioBuffer synthesize_warning_tone(const Calibration& calibration, double level_spl,
                                    double frequency_hz, double duration_ms, int sample_rate) {
  calibration.validate();
  if (!(duration_ms > 0.0)) throw AudioError("tone duration must be positive");
  if (!(frequency_hz > 0.0) || frequency_hz >= sample_rate / 2.0)
    throw AudioError("tone frequency must lie below Nyquist");
  const std::size_t n = ms_to_samples(duration_ms, sample_rate);
  const auto window = hann_window(n);
  std::vector<double> carrier(n);
  for (std::size_t i = 0; i < n; ++i)
    carrier[i] = std::sin(2.0 * std::numbers::pi * frequency_hz * static_cast<double>(i) / sample_rate) *
                 window[i];
  AudioBuffer out;
  out.sample_rate = sample_rate;
  for (int c = 0; c < 2; ++c) {
    const double amplitude = std::numbers::sqrt2 * db_to_gain(calibration.dbfs_for(level_spl, c));
    std::vector<double> ch(n);
    for (std::size_t i = 0; i < n; ++i) ch[i] = amplitude * carrier[i];
    out.channels.push_back(std::move(ch));
  }
  return out;
}

HrirSet HrirSet::identity(int sample_rate) {
  HrirSet s;
  s.sample_rate = sample_rate;
  for (int az : {0, 90, -90}) s.by_azimuth[az] = {{1.0}, {1.0}};
  return s;
}

void HrirSet::validate() const {
  for (int az : {0, 90, -90}) {
    auto it = by_azimuth.find(az);
    if (it == by_azimuth.end()) throw AudioError("HRIR set lacks azimuth " + std::to_string(az));
    if (it->second.left.empty() || it->second.right.empty())
      throw AudioError("empty impulse response at azimuth " + std::to_string(az));
  }
}

const ImpulseResponsePair& HrirSet::at(int azimuth) const {
  auto it = by_azimuth.find(azimuth);
  if (it == by_azimuth.end()) throw AudioError("no HRIR for azimuth " + std::to_string(azimuth));
  return it->second;
}

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<double> convolve_direct(std::span<const double> x, std::span<const double> h) {
  std::vector<double> y(x.size() + h.size() - 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += x[i] * h[j];
  return y;
}

// Overlap-add with real FFTs.
std::vector<double> convolve_fft(std::span<const double> x, std::span<const double> h) {
  const std::size_t m = h.size();
  const std::size_t n_fft = std::max<std::size_t>(1024, next_pow2(4 * m));
  const std::size_t block = n_fft - m + 1;
  const std::size_t n_bins = n_fft / 2 + 1;

  std::vector<double> time(n_fft);
  std::vector<std::complex<double>> kernel(n_bins), spec(n_bins);
  fftw_plan forward, inverse;
  {
    std::lock_guard lock(fftw_planner_mutex());
    forward = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), time.data(),
                                   reinterpret_cast<fftw_complex*>(spec.data()), FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n_fft),
                                   reinterpret_cast<fftw_complex*>(spec.data()), time.data(),
                                   FFTW_ESTIMATE);
  }

  std::fill(time.begin(), time.end(), 0.0);
  std::copy(h.begin(), h.end(), time.begin());
  fftw_execute(forward);
  kernel = spec;

  std::vector<double> y(x.size() + m - 1, 0.0);
  const double scale = 1.0 / static_cast<double>(n_fft);
  for (std::size_t start = 0; start < x.size(); start += block) {
    const std::size_t len = std::min(block, x.size() - start);
    std::fill(time.begin(), time.end(), 0.0);
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(start),
              x.begin() + static_cast<std::ptrdiff_t>(start + len), time.begin());
    fftw_execute(forward);
    for (std::size_t k = 0; k < n_bins; ++k) spec[k] *= kernel[k];
    fftw_execute(inverse);
    const std::size_t out_len = std::min(len + m - 1, y.size() - start);
    for (std::size_t i = 0; i < out_len; ++i) y[start + i] += time[i] * scale;
  }

  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
  }
  return y;
}

}  // namespace

std::vector<double> convolve(std::span<const double> signal, std::span<const double> kernel) {
  if (signal.empty() || kernel.empty()) return {};
  if (kernel.size() <= 32 || signal.size() * kernel.size() <= 1u << 16)
    return convolve_direct(signal, kernel);
  return convolve_fft(signal, kernel);
}

AudioBuffer spatialize(const AudioBuffer& mono, const HrirSet& hrirs, int azimuth) {
  if (mono.channel_count() != 1) throw AudioError("spatialize expects a mono buffer");
  if (mono.sample_rate != hrirs.sample_rate)
    throw AudioError("sample-rate mismatch between signal and HRIR set");
  const auto& ir = hrirs.at(azimuth);
  auto left = convolve(mono.channels[0], ir.left);
  auto right = convolve(mono.channels[0], ir.right);
  // Ears may carry IRs of different length; pad the shorter one.
  const std::size_t n = std::max(left.size(), right.size());
  left.resize(n, 0.0);
  right.resize(n, 0.0);
  return AudioBuffer::stereo(std::move(left), std::move(right), mono.sample_rate);
}

SpatialCondition SpatialCondition::make(ConditionName name) {
  SpatialCondition c;
  c.name = name;
  const bool spatial = name == ConditionName::SV90 || name == ConditionName::DV90;
  c.distractor_azimuths = spatial ? std::array<int, 2>{90, -90} : std::array<int, 2>{0, 0};
  c.distractors_same_voice = name == ConditionName::SV0 || name == ConditionName::SV90;
  return c;
}

const char* to_string(ConditionName c) {
  switch (c) {
    case ConditionName::SV0: return "SV0";
    case ConditionName::DV0: return "DV0";
    case ConditionName::SV90: return "SV90";
    case ConditionName::DV90: return "DV90";
  }
  return "SV0";
}

ConditionName condition_from_string(const std::string& s) {
  for (auto c : {ConditionName::SV0, ConditionName::DV0, ConditionName::SV90, ConditionName::DV90})
    if (s == to_string(c)) return c;
  throw std::invalid_argument("unknown spatial condition: " + s);
}

namespace {

// Steady-state spatialized excerpt of a story looped forever, starting at
// `offset`, `frames` long.
AudioBuffer looped_stream(const AudioBuffer& story, const HrirSet& hrirs, int azimuth,
                          std::size_t offset, std::size_t frames) {
  const auto& ir = hrirs.at(azimuth);
  const std::size_t lead = std::max(ir.left.size(), ir.right.size()) - 1;
  const auto& src = story.channels.at(0);
  const std::size_t len = src.size();
  std::vector<double> excerpt(frames + lead);
  // offset - lead, modulo the story length
  std::size_t pos = (offset % len + len - lead % len) % len;
  for (double& x : excerpt) {
    x = src[pos];
    if (++pos == len) pos = 0;
  }
  AudioBuffer wet = spatialize(AudioBuffer::mono(std::move(excerpt), story.sample_rate), hrirs, azimuth);
  return trim_samples(wet, lead, wet.frames() - lead - frames);
}

}  // namespace

AudioBuffer assemble_trial(const SentenceAsset& target, std::span<const AudioBuffer> stories,
                           const SpatialCondition& condition, const HrirSet& hrirs,
                           const Calibration& calibration, const TrialRenderRequest& request) {
  calibration.validate();
  if (stories.size() != 2) throw AudioError("a trial needs exactly two competing stories");
  const int fs = target.audio.sample_rate;
  if (hrirs.sample_rate != fs) throw AudioError("sample-rate mismatch with HRIR set");
  for (const auto& s : stories) {
    if (s.sample_rate != fs) throw AudioError("sample-rate mismatch between target and story");
    if (s.channel_count() != 1 || s.frames() == 0) throw AudioError("stories must be non-empty mono");
  }

  const AudioBuffer tone = synthesize_warning_tone(calibration, request.tone_level, 1000.0, 200.0, fs);
  const std::size_t gap = ms_to_samples(request.gap_ms, fs);
  AudioBuffer speech = spatialize(target.audio, hrirs, condition.target_azimuth);
  const std::size_t onset = tone.frames() + gap;
  const std::size_t total = onset + speech.frames();

  AudioBuffer out = AudioBuffer::silence(total, 2, fs);
  for (int c = 0; c < 2; ++c)
    std::copy(tone.channels[c].begin(), tone.channels[c].end(), out.channels[c].begin());

  const double target_spl = request.target_level + target.eq_gain_db;
  bool target_silent = target.audio.peak() == 0.0;
  if (!target_silent) {
    const double source_rms = rms_db(target.audio);
    for (int c = 0; c < 2; ++c) {
      const double g = db_to_gain(calibration.dbfs_for(target_spl, c) - source_rms);
      for (std::size_t i = 0; i < speech.frames(); ++i)
        out.channels[c][onset + i] += g * speech.channels[c][i];
    }
  }

  const std::array<double, 2> story_power{std::pow(10.0, rms_db(stories[0]) / 10.0),
                                          std::pow(10.0, rms_db(stories[1]) / 10.0)};
  for (int s = 0; s < 2; ++s) {
    AudioBuffer stream =
        looped_stream(stories[s], hrirs, condition.distractor_azimuths[s], request.story_offsets[s], total);
    for (int c = 0; c < 2; ++c) {
      const double wanted_power = std::pow(10.0, calibration.dbfs_for(request.competing_level, c) / 10.0);
      const double g = request.competing_mode == CompetingMode::Combined
                           ? std::sqrt(wanted_power / (story_power[0] + story_power[1]))
                           : std::sqrt(wanted_power / story_power[s]);
      for (std::size_t i = 0; i < total; ++i) out.channels[c][i] += g * stream.channels[c][i];
    }
  }

  if (!out.all_finite()) throw ClippingError("trial " + request.trial_label + ": non-finite samples");
  const double peak = out.peak();
  if (peak > 1.0) {
    std::ostringstream msg;
    msg << "trial " << request.trial_label << " clips: peak " << peak << " exceeds full scale";
    throw ClippingError(msg.str());
  }
  return out;
}

}  // namespace lisn
