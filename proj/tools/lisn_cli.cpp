// lisn: corpus preparation, simulation campaigns, analysis and the session API.
//
// Exit codes: 0 success, 2 validation error, 3 runtime failure. Errors are
// reported on stderr as one JSON object.

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "lisn/analysis.hpp"
#include "lisn/corpus.hpp"
#include "lisn/http_api.hpp"
#include "lisn/session_engine.hpp"
#include "lisn/session_service.hpp"
#include "lisn/simulator.hpp"
#include "lisn/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lisn;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

void add_staircase_options(CLI::App* cmd, StaircaseConfig& c, int& max_restarts) {
  cmd->add_option("--competing-level", c.competing_level, "Competing speech level, dB SPL")->capture_default_str();
  cmd->add_option("--training-snr", c.training_snr, "Training SNR, dB")->capture_default_str();
  cmd->add_option("--training-trials", c.training_trials, "Training sentences in block 1")->capture_default_str();
  cmd->add_option("--big-step", c.big_step, "Step before the first reversal, dB")->capture_default_str();
  cmd->add_option("--small-step", c.small_step, "Tracking step, dB")->capture_default_str();
  cmd->add_option("--block-length", c.block_length, "Scored sentences per block")->capture_default_str();
  cmd->add_option("--blocks", c.blocks, "Blocks per session")->capture_default_str();
  cmd->add_option("--next-block-offset", c.next_block_offset, "Start of next block above the SRT, dB")
      ->capture_default_str();
  cmd->add_option("--level-min", c.level_clamp.min, "Lowest presentation level, dB SPL")->capture_default_str();
  cmd->add_option("--level-max", c.level_clamp.max, "Highest presentation level, dB SPL")->capture_default_str();
  cmd->add_option("--min-midpoints", c.min_midpoints, "Midpoints for a valid SRT")->capture_default_str();
  cmd->add_flag("--extend-until-valid", c.extend_until_valid, "Keep tracking until the SRT is valid");
  cmd->add_option("--max-extra-trials", c.max_extra_trials, "Cap on extension trials")->capture_default_str();
  cmd->add_option("--max-restarts", max_restarts, "Training restarts before the session fails")
      ->capture_default_str();
}

SampleFormat parse_format(const std::string& s) {
  if (s == "pcm16") return SampleFormat::Pcm16;
  if (s == "float32") return SampleFormat::Float32;
  throw UsageError("unknown sample format '" + s + "' (pcm16 | float32)");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------- prepare-audio

struct PrepareArgs {
  fs::path corpus, stories, out;
  PrepareOptions options;
  std::string format = "pcm16";
};

int run_prepare(const PrepareArgs& a) {
  PrepareOptions opts = a.options;
  opts.format = parse_format(a.format);
  fs::create_directories(a.out);
  const PrepareResult r = prepare_corpus(load_corpus_manifest(a.corpus), load_story_manifest(a.stories), a.out, opts);
  json report;
  report["target_db"] = r.gains.target_db;
  report["headroom_db"] = opts.headroom_db;
  report["sentences"] = r.corpus.entries.size();
  report["stories"] = r.stories.entries.size();
  json gains = json::object();
  for (std::size_t i = 0; i < r.corpus.entries.size(); ++i)
    gains[r.corpus.entries[i].sentence_id] = r.gains.sentence_gains_db[i];
  for (std::size_t i = 0; i < r.stories.entries.size(); ++i)
    gains[r.stories.entries[i].story_id] = r.gains.story_gains_db[i];
  report["gains_db"] = gains;
  write_text(a.out / "prepare_report.json", report.dump(2) + "\n");
  std::cout << json{{"corpus", (a.out / "corpus.tsv").string()},
                    {"stories", (a.out / "stories.tsv").string()},
                    {"target_db", r.gains.target_db}}
                   .dump()
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  StaircaseConfig config;
  int max_restarts = 5;
  int runs = 200;
  double true_srt = -2.0;
  double slope = 0.5;
  double srt_spread = 0.0;
  double sentence_offset_sd = 0.0;
  std::optional<fs::path> corpus;
  std::size_t story_frames = 120 * 44100;
  std::uint64_t seed = 1;
  fs::path out = "simulation";
};

// 187 sentences: 9, 49, 77, 46 and 6 with three to seven words.
SimulationCorpus synthetic_corpus(std::size_t story_frames) {
  SimulationCorpus c;
  const int counts[] = {9, 49, 77, 46, 6};
  int n = 0;
  for (int w = 3; w <= 7; ++w) {
    for (int i = 0; i < counts[w - 3]; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "s%03d", ++n);
      c.sentence_ids.emplace_back(id);
      c.word_counts.push_back(w);
    }
  }
  c.story_lengths = {story_frames, story_frames};
  return c;
}

double normal_draw(std::mt19937_64& rng) {
  // Box-Muller on 53-bit uniforms keeps draws identical across standard libraries.
  auto u = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  const double u1 = u(), u2 = u();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int run_simulate(const SimulateArgs& a) {
  a.config.validate();
  if (a.runs < 1) throw UsageError("--runs must be >= 1");
  if (!(a.slope > 0.0)) throw UsageError("--slope must be > 0");
  if (a.srt_spread < 0.0 || a.sentence_offset_sd < 0.0) throw UsageError("spreads must be >= 0");

  SimulationCorpus corpus;
  if (a.corpus) {
    const CorpusManifest m = load_corpus_manifest(*a.corpus);
    for (const auto& e : m.entries) {
      corpus.sentence_ids.push_back(e.sentence_id);
      corpus.word_counts.push_back(e.word_count);
    }
    corpus.story_lengths = {a.story_frames, a.story_frames};
  } else {
    corpus = synthetic_corpus(a.story_frames);
  }

  std::mt19937_64 master(a.seed);
  std::map<std::string, double> offsets;
  if (a.sentence_offset_sd > 0.0)
    for (const auto& id : corpus.sentence_ids) offsets[id] = a.sentence_offset_sd * normal_draw(master);

  fs::create_directories(a.out / "logs");
  std::vector<SessionLog> logs;
  std::ostringstream truth;
  truth << "participant\tsession_id\ttrue_srt_snr\tslope_b\n";
  for (int run = 1; run <= a.runs; ++run) {
    char code[16], sid[16];
    std::snprintf(code, sizeof code, "P%04d", run);
    std::snprintf(sid, sizeof sid, "SIM%04d", run);
    SimulatedListener listener;
    listener.true_srt = a.true_srt + (a.srt_spread > 0.0 ? a.srt_spread * normal_draw(master) : 0.0);
    listener.slope_b = a.slope;
    listener.rng_seed = master();
    listener.sentence_offsets = offsets;
    SimulatedSessionSpec spec;
    spec.session_id = sid;
    spec.participant = {{"code", code}};
    spec.config = a.config;
    spec.max_restarts = a.max_restarts;
    spec.session_seed = master();
    logs.push_back(run_simulated_session(spec, listener, corpus));
    write_session_log(a.out / "logs" / (std::string(sid) + ".ndjson"), logs.back());
    truth << code << '\t' << sid << '\t' << std::setprecision(17) << listener.true_srt << '\t' << a.slope << '\n';
  }
  write_text(a.out / "participants.tsv", truth.str());
  if (!offsets.empty()) {
    std::ostringstream o;
    o << "sentence_id\toffset_db\n" << std::setprecision(17);
    for (const auto& [id, v] : offsets) o << id << '\t' << v << '\n';
    write_text(a.out / "sentence_offsets.tsv", o.str());
  }
  const std::string summary = format_summary(summarize_simulations(logs));
  write_text(a.out / "summary.tsv", summary);
  std::cout << summary;
  return kOk;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::vector<fs::path> inputs;
  std::optional<fs::path> table;
  std::optional<fs::path> corpus;
  fs::path out = "analysis";
  AnalysisConfig config;
  std::vector<std::string> exclude_participants, exclude_sentences;
  std::string reference = "block";
  bool no_tukey_participants = false;
  int min_midpoints = 3;
};

std::vector<fs::path> expand_logs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".ndjson") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  return files;
}

int run_analyze(AnalyzeArgs a) {
  if (a.reference == "block") {
    a.config.reference = AtslReference::Block;
  } else if (a.reference == "participant") {
    a.config.reference = AtslReference::Participant;
  } else {
    throw UsageError("--reference must be block or participant");
  }
  a.config.exclude_participants.insert(a.exclude_participants.begin(), a.exclude_participants.end());
  a.config.exclude_sentences.insert(a.exclude_sentences.begin(), a.exclude_sentences.end());
  a.config.tukey_participants = !a.no_tukey_participants;
  if (a.inputs.empty() == !a.table) throw UsageError("give session logs or --table, not both");

  std::vector<BlockData> blocks;
  if (a.table) {
    blocks = load_flat_trial_table(*a.table, a.min_midpoints);
  } else {
    for (const auto& f : expand_logs(a.inputs)) {
      auto b = blocks_from_log(read_session_log(f));
      blocks.insert(blocks.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
    }
  }
  if (blocks.empty()) throw UsageError("no completed blocks in the input");

  const AnalysisReport report = run_analysis(blocks, a.config);
  fs::create_directories(a.out);
  write_fits_table(a.out / "fits.tsv", report);
  write_gain_table(a.out / "gains.tsv", report);
  write_text(a.out / "selection.json", selection_report(report).dump(2) + "\n");
  write_text(a.out / "statistics.json", statistics_report(report).dump(2) + "\n");
  write_flat_trial_table(a.out / "trials.tsv", blocks);
  if (a.corpus) save_corpus_manifest(a.out / "corpus_equalized.tsv", adjusted_manifest(load_corpus_manifest(*a.corpus), report));

  std::cout << json{{"blocks_used", report.blocks_used},
                    {"fits", report.fits.size()},
                    {"selected", report.selection.selected_ids.size()},
                    {"slope_all", report.slope_all},
                    {"slope_equalized", report.slope_equalized}}
                   .dump()
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  fs::path corpus, stories, data_dir = "sessions";
  std::optional<fs::path> hrirs, calibration;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string target_voice;
  std::string competing_mode = "combined";
};

int run_serve(const ServeArgs& a) {
  ServiceResources res = ServiceResources::load(a.corpus, a.stories, a.hrirs, a.calibration);
  res.target_voice = a.target_voice;
  if (a.competing_mode == "combined") {
    res.competing_mode = CompetingMode::Combined;
  } else if (a.competing_mode == "per-stream") {
    res.competing_mode = CompetingMode::PerStream;
  } else {
    throw UsageError("--competing-mode must be combined or per-stream");
  }

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  SessionService service(std::move(res), a.data_dir);
  HttpApi api(service);
  const int port = api.bind(a.host, a.port);
  if (port < 0) throw std::runtime_error("cannot bind " + a.host + ":" + std::to_string(a.port));
  std::cout << json{{"listening", a.host + ":" + std::to_string(port)}, {"data_dir", a.data_dir.string()}}.dump()
            << std::endl;
  std::thread server([&api] { api.listen_after_bind(); });
  int sig = 0;
  sigwait(&set, &sig);
  api.stop();
  server.join();
  return kOk;
}

// ---------------------------------------------------------------- calibrate-check

struct CalibrateArgs {
  fs::path calibration, out = "calibration_check";
  double level = 60.0;
  double tone_hz = 1000.0;
  double tone_ms = 200.0;
  std::optional<fs::path> corpus;
  std::string sentence_id;
  std::optional<fs::path> hrirs;
};

int run_calibrate(const CalibrateArgs& a) {
  const Calibration cal = load_calibration(a.calibration);
  fs::create_directories(a.out);
  json report;
  report["level_db_spl"] = a.level;
  report["spl_at_fullscale"] = {cal.spl_at_fullscale[0], cal.spl_at_fullscale[1]};

  int rate = 44100;
  std::optional<SentenceAsset> sentence;
  if (a.corpus) {
    const auto assets = load_sentence_assets(load_corpus_manifest(*a.corpus));
    if (assets.empty()) throw UsageError("corpus is empty");
    auto it = std::find_if(assets.begin(), assets.end(),
                           [&](const SentenceAsset& s) { return a.sentence_id.empty() || s.sentence_id == a.sentence_id; });
    if (it == assets.end()) throw UsageError("sentence " + a.sentence_id + " not in corpus");
    sentence = *it;
    rate = it->audio.sample_rate;
  }

  const AudioBuffer tone = synthesize_warning_tone(cal, a.level, a.tone_hz, a.tone_ms, rate);
  write_wav(a.out / "tone.wav", tone, SampleFormat::Float32);
  auto channel_spl = [&](const AudioBuffer& b) {
    json per = json::array();
    for (std::size_t ch = 0; ch < b.channel_count(); ++ch) {
      AudioBuffer one = AudioBuffer::mono(b.channels[ch], b.sample_rate);
      per.push_back(rms_db(one) + cal.spl_at_fullscale[ch]);
    }
    return per;
  };
  report["tone"] = {{"file", (a.out / "tone.wav").string()},
                    {"frames", tone.frames()},
                    {"windowed_spl", channel_spl(tone)}};

  if (sentence) {
    const HrirSet hrirs = a.hrirs ? load_hrir_set(*a.hrirs) : HrirSet::identity(rate);
    AudioBuffer s = spatialize(sentence->audio, hrirs, 0);
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const double gain = db_to_gain(a.level + sentence->eq_gain_db - cal.spl_at_fullscale[ch] - rms_db(sentence->audio));
      for (double& x : s.channels[ch]) x *= gain;
    }
    if (s.peak() > 1.0) throw std::runtime_error("reference sentence clips at the requested level");
    write_wav(a.out / "reference_sentence.wav", s, SampleFormat::Float32);
    report["sentence"] = {{"sentence_id", sentence->sentence_id},
                          {"file", (a.out / "reference_sentence.wav").string()},
                          {"spl", channel_spl(s)}};
  }
  write_text(a.out / "calibration_check.json", report.dump(2) + "\n");
  std::cout << report.dump() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive speech-in-noise sessions, corpus preparation and sentence-equivalence analysis"};
  app.set_config("--config", "", "INI/TOML file with option values (sections per subcommand)");
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare-audio", "Pad, normalize and write the corpus");
  p->add_option("--corpus", prep.corpus, "Corpus manifest (TSV)")->required()->check(CLI::ExistingFile);
  p->add_option("--stories", prep.stories, "Story manifest (TSV)")->required()->check(CLI::ExistingFile);
  p->add_option("--out", prep.out, "Output directory")->required();
  p->add_option("--headroom", prep.options.headroom_db, "Attenuation below the mean RMS, dB")->capture_default_str();
  p->add_option("--sentence-pad-ms", prep.options.sentence_pad_ms, "Silence around sentences")->capture_default_str();
  p->add_option("--story-pad-ms", prep.options.story_pad_ms, "Silence around stories")->capture_default_str();
  p->add_option("--format", prep.format, "pcm16 | float32")->capture_default_str();

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run simulated sessions and summarize the SRT estimates");
  add_staircase_options(s, sim.config, sim.max_restarts);
  s->add_option("--runs", sim.runs, "Simulated sessions (one listener each)")->capture_default_str();
  s->add_option("--true-srt", sim.true_srt, "Listener 50% point, dB SNR")->capture_default_str();
  s->add_option("--slope", sim.slope, "Logistic slope b, per dB")->capture_default_str();
  s->add_option("--srt-spread", sim.srt_spread, "SD of listener 50% points across runs, dB")->capture_default_str();
  s->add_option("--sentence-offset-sd", sim.sentence_offset_sd, "SD of per-sentence difficulty, dB")
      ->capture_default_str();
  s->add_option("--corpus", sim.corpus, "Corpus manifest (default: synthetic 187 sentences)")
      ->check(CLI::ExistingFile);
  s->add_option("--story-frames", sim.story_frames, "Story length in samples")->capture_default_str();
  s->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
  s->add_option("--out", sim.out, "Output directory")->capture_default_str();

  AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze", "Fit, gate, select and equalize sentences");
  z->add_option("inputs", an.inputs, "Session logs or directories of *.ndjson")->check(CLI::ExistingPath);
  z->add_option("--table", an.table, "Flat trial table instead of logs")->check(CLI::ExistingFile);
  z->add_option("--corpus", an.corpus, "Corpus manifest to write an equalized copy of")->check(CLI::ExistingFile);
  z->add_option("--out", an.out, "Output directory")->capture_default_str();
  z->add_option("--n-select", an.config.n_select, "Sentences to select")->capture_default_str();
  z->add_option("--r2-min", an.config.r2_min, "Minimum R^2 of a usable fit")->capture_default_str();
  z->add_option("--exclude-participant", an.exclude_participants, "Participant code to drop");
  z->add_option("--exclude-sentence", an.exclude_sentences, "Sentence id to drop");
  z->add_option("--reference", an.reference, "aTSL reference: block | participant")->capture_default_str();
  z->add_flag("--subtract-mean-gain", an.config.subtract_mean_gain, "Center the gains on zero");
  z->add_flag("--no-tukey-participants", an.no_tukey_participants, "Skip pairwise tests between participants");
  z->add_option("--max-iterations", an.config.fit.max_iterations, "Fit iteration cap")->capture_default_str();
  z->add_option("--tolerance", an.config.fit.tolerance, "Fit convergence on parameter delta")->capture_default_str();
  z->add_option("--min-midpoints", an.min_midpoints, "Midpoints for a valid SRT (flat tables)")
      ->capture_default_str();

  ServeArgs sv;
  auto* v = app.add_subcommand("serve", "Run the session HTTP API");
  v->add_option("--corpus", sv.corpus, "Corpus manifest")->required()->check(CLI::ExistingFile);
  v->add_option("--stories", sv.stories, "Story manifest")->required()->check(CLI::ExistingFile);
  v->add_option("--hrirs", sv.hrirs, "HRIR manifest (default: identity)")->check(CLI::ExistingFile);
  v->add_option("--calibration", sv.calibration, "Calibration JSON")->check(CLI::ExistingFile);
  v->add_option("--data-dir", sv.data_dir, "Session storage")->capture_default_str();
  v->add_option("--host", sv.host, "Bind address")->capture_default_str();
  v->add_option("--port", sv.port, "Port (0 = any)")->capture_default_str();
  v->add_option("--target-voice", sv.target_voice, "Voice tag of the target talker");
  v->add_option("--competing-mode", sv.competing_mode, "combined | per-stream")->capture_default_str();

  CalibrateArgs cc;
  auto* c = app.add_subcommand("calibrate-check", "Render the warning tone and a sentence at a stated level");
  c->add_option("--calibration", cc.calibration, "Calibration JSON")->required()->check(CLI::ExistingFile);
  c->add_option("--level", cc.level, "Level, dB SPL")->capture_default_str();
  c->add_option("--tone-hz", cc.tone_hz, "Warning tone frequency")->capture_default_str();
  c->add_option("--tone-ms", cc.tone_ms, "Warning tone duration")->capture_default_str();
  c->add_option("--corpus", cc.corpus, "Corpus manifest for the reference sentence")->check(CLI::ExistingFile);
  c->add_option("--sentence-id", cc.sentence_id, "Reference sentence (default: first)");
  c->add_option("--hrirs", cc.hrirs, "HRIR manifest")->check(CLI::ExistingFile);
  c->add_option("--out", cc.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return kValidation;
  }

  try {
    if (p->parsed()) return run_prepare(prep);
    if (s->parsed()) return run_simulate(sim);
    if (z->parsed()) return run_analyze(an);
    if (v->parsed()) return run_serve(sv);
    if (c->parsed()) return run_calibrate(cc);
  } catch (const UsageError& e) {
    report_error("validation", e.what());
    return kValidation;
  } catch (const std::invalid_argument& e) {
    report_error("validation", e.what());
    return kValidation;
  } catch (const ManifestError& e) {
    report_error("manifest", e.what());
    return kValidation;
  } catch (const LogFormatError& e) {
    report_error("log_format", e.what());
    return kValidation;
  } catch (const ValidationError& e) {
    report_error("validation", e.what());
    return kValidation;
  } catch (const ConfigurationError& e) {
    report_error("configuration", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return kRuntime;
  }
  return kValidation;
}
