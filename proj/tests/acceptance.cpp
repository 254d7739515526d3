// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "lisn/audio.hpp"
#include "lisn/corpus.hpp"
#include "lisn/psychometrics.hpp"
#include "lisn/session_service.hpp"
#include "lisn/simulator.hpp"
#include "lisn/staircase.hpp"
#include "lisn/statistics.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace lisn;
namespace fs = std::filesystem;

namespace tol {
constexpr double kSrtExact = 1e-12;
constexpr double kConvergenceMean = 1.0;  // dB
constexpr double kConvergenceSd = 2.5;    // dB
constexpr double kRecoveryR = 0.5;        // dB
constexpr double kRecoveryB = 0.20;       // relative
constexpr double kRecoveryShare = 0.95;
constexpr double kShift = 1e-6;
constexpr double kEqualizedR = 0.25;  // dB
constexpr double kAnovaRel = 1e-9;
constexpr double kTukeyAbs = 1e-3;
constexpr double kRmsSpread = 0.05;  // dB
constexpr double kHeadroom = 1e-9;   // dB
constexpr double kConvolution = 1e-6;
}  // namespace tol

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

Outcome hand_trace() {
  StaircaseConfig cfg;
  cfg.block_length = 13;
  StaircaseState s = init_block(cfg, 1, std::nullopt);
  std::vector<double> training;
  for (int i = 0; i < cfg.training_trials; ++i) {
    training.push_back(propose_level(s));
    record_response(s, {"t", 5, 5});
  }
  std::vector<double> levels;
  for (char c : std::string("ccfccffcccffc")) {
    levels.push_back(propose_level(s));
    record_response(s, {"s", 5, c == 'c' ? 4 : 1});
  }
  const std::vector<double> want_levels{72, 68, 64, 66, 64, 62, 64, 66, 64, 62, 60, 62, 64};
  const auto est = compute_srt(s);
  const bool ok = training == std::vector<double>(3, 72.0) && levels == want_levels &&
                  s.reversals.front().level == 64 && s.reversals.front().kind == ReversalKind::Positive &&
                  est.midpoints == std::vector<double>{65, 64, 62} && est.valid &&
                  std::abs(est.value - 191.0 / 3.0) < tol::kSrtExact;
  return {ok, "SRT " + num(est.value, 6) + " from midpoints 65, 64, 62"};
}

Outcome convergence() {
  SimulationCorpus corpus;
  for (int i = 0; i < 187; ++i) {
    corpus.sentence_ids.push_back("s" + std::to_string(i));
    corpus.word_counts.push_back(3 + i % 5);
  }
  std::vector<SessionLog> logs;
  for (int run = 0; run < 200; ++run) {
    SimulatedSessionSpec spec;
    spec.session_id = "A" + std::to_string(run);
    spec.config.blocks = 1;
    spec.session_seed = 10000 + run;
    SimulatedListener l;
    l.true_srt = -2.0;
    l.slope_b = 0.5;
    l.rng_seed = 20000 + run;
    logs.push_back(run_simulated_session(spec, l, corpus));
  }
  const auto s = summarize_simulations(logs);
  const bool ok = s.blocks == 200 && std::abs(s.mean_srt - 63.0) <= tol::kConvergenceMean &&
                  s.sd_srt <= tol::kConvergenceSd;
  return {ok, "mean " + num(s.mean_srt) + " dB SPL, SD " + num(s.sd_srt) + " dB over " +
                  std::to_string(s.valid_blocks) + "/" + std::to_string(s.blocks) + " valid blocks"};
}

std::vector<double> design(double r, double b, int n, std::mt19937_64& rng) {
  std::vector<double> xs(n);
  for (auto& x : xs) x = r - 4.0 / b + 8.0 / b * oracle::uniform01(rng);
  return xs;
}

Outcome fit_recovery() {
  std::mt19937_64 rng(2024);
  int good = 0;
  double worst_shift = 0.0;
  const int n = 187;
  for (int i = 0; i < n; ++i) {
    const double b = 0.4 + 0.8 * oracle::uniform01(rng);
    const double r = -3.0 + 6.0 * oracle::uniform01(rng);
    auto obs = oracle::generate("s", -b * r, b, design(r, b, 160, rng), 5, rng);
    const auto fit = fit_logistic(obs);
    if (fit.converged && std::abs(fit.r - r) <= tol::kRecoveryR && std::abs(fit.b - b) <= tol::kRecoveryB * b)
      ++good;
    const double shift = -10.0 + 20.0 * oracle::uniform01(rng);
    for (auto& o : obs) o.atsl += shift;
    const auto moved = fit_logistic(obs);
    worst_shift = std::max({worst_shift, std::abs(moved.r - fit.r - shift), std::abs(moved.b - fit.b)});
  }
  const bool ok = good >= tol::kRecoveryShare * n && worst_shift <= tol::kShift;
  return {ok, std::to_string(good) + "/" + std::to_string(n) + " recovered (800 words each), shift error " +
                  num(worst_shift, 2)};
}

PsychometricFit fake_fit(const std::string& id, double r, double s, double r2) {
  PsychometricFit f;
  f.sentence_id = id;
  f.r = r;
  f.s = s;
  f.b = 4 * s;
  f.a = -f.b * r;
  f.r_squared = r2;
  f.converged = true;
  return f;
}

Outcome selection_oracle() {
  std::mt19937_64 rng(77);
  int instances = 0, agree = 0, rectangular = 0;
  while (instances < 100) {
    const int m = 3 + static_cast<int>(rng() % 13);
    std::vector<PsychometricFit> fits;
    for (int i = 0; i < m; ++i) {
      char id[8];
      std::snprintf(id, sizeof id, "s%02d", i);
      const double r = std::round((-3 + 6 * oracle::uniform01(rng)) * 4) / 4;
      const double s = std::round((0.05 + 0.2 * oracle::uniform01(rng)) * 40) / 40;
      fits.push_back(fake_fit(id, r, s, oracle::uniform01(rng) < 0.15 ? 0.3 : 0.8));
    }
    int passing = 0;
    for (const auto& f : fits) passing += f.r_squared >= 0.5;
    if (passing < 3) continue;
    ++instances;
    const int n = 1 + static_cast<int>(rng() % (passing - 1));
    const auto sel = select_sentences(fits, n, 0.5);
    auto got = sel.selected_ids;
    std::sort(got.begin(), got.end());
    agree += got == oracle::brute_force_selection(fits, n, 0.5);
    // Selected iff both z-bounds hold, up to ties on the boundary.
    bool rect = true;
    for (const auto& c : sel.candidates) {
      const bool inside = std::abs(c.z_r) <= sel.threshold && std::abs(c.z_s) <= sel.threshold;
      if (c.selected && !inside) rect = false;
      if (!c.selected && inside && c.distance < sel.threshold) rect = false;
    }
    rectangular += rect;
  }
  return {agree == 100 && rectangular == 100,
          std::to_string(agree) + "/100 match exhaustive ranking, " + std::to_string(rectangular) +
              "/100 rectangular"};
}

Outcome equalization() {
  std::mt19937_64 rng(55);
  const int n = 187, trials = 2000;
  std::vector<double> true_r(n), true_b(n);
  std::vector<std::vector<double>> xs(n);
  std::vector<PsychometricFit> fits;
  for (int i = 0; i < n; ++i) {
    true_b[i] = 0.3 + 0.7 * oracle::uniform01(rng);
    true_r[i] = -3 + 6 * oracle::uniform01(rng);
    xs[i] = design(true_r[i], true_b[i], trials, rng);
    char id[8];
    std::snprintf(id, sizeof id, "s%03d", i);
    fits.push_back(fit_logistic(oracle::generate(id, -true_b[i] * true_r[i], true_b[i], xs[i], 5, rng)));
  }
  const auto sel = select_sentences(fits, 120, 0.5);
  const auto gains = equalization_gains(sel, fits);
  std::vector<PsychometricFit> refits;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& id = fits[i].sentence_id;
    if (!sel.is_selected(id)) continue;
    std::vector<double> effective = xs[i];
    for (auto& x : effective) x += gains.at(id);
    auto obs = oracle::generate(id, -true_b[i] * true_r[i], true_b[i], effective, 5, rng);
    for (std::size_t j = 0; j < obs.size(); ++j) obs[j].atsl = xs[i][j];
    refits.push_back(fit_logistic(obs));
    worst = std::max(worst, std::abs(refits.back().r));
  }
  const double before = averaged_curve_slope(fits);
  const double after = averaged_curve_slope(refits);
  return {worst < tol::kEqualizedR && after > before,
          "max |R'| " + num(worst, 3) + " dB over 120; averaged slope " + num(before, 4) + " -> " +
              num(after, 4) + " per dB"};
}

Outcome statistics_oracle() {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 2 + static_cast<int>(rng() % 5);
    std::vector<Group> gs(k);
    for (int g = 0; g < k; ++g) {
      const int m = 2 + static_cast<int>(rng() % 11);
      for (int i = 0; i < m; ++i) gs[g].push_back(50.0 + 3.0 * z(rng) + (rep % 3 ? 0.0 : g * 0.8));
    }
    const auto r = anova_oneway(gs);
    const auto o = oracle::ss_anova(gs);
    worst = std::max({worst, std::abs(r.f - o.f) / std::abs(o.f), std::abs(r.p_value - o.p) / std::abs(o.p)});
  }
  std::vector<Group> two(2);
  for (int i = 0; i < 10856; ++i) two[i % 2].push_back(63.0 + z(rng));
  const auto big = anova_oneway(two);
  const bool layout = big.df_between == 1 && big.df_within == 10854;

  std::vector<Group> gs(4);
  const double shifts[] = {0.0, 0.6, 1.5, -0.4};
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 8; ++i) gs[g].push_back(shifts[g] + z(rng));
  const auto t = tukey_hsd(gs);
  std::vector<double> means;
  double ssw = 0.0;
  for (const auto& g : gs) {
    double m = 0;
    for (double x : g) m += x;
    m /= g.size();
    means.push_back(m);
    for (double x : g) ssw += (x - m) * (x - m);
  }
  const double df = 28.0;
  double tukey_err = 0.0;
  for (const auto& p : t.pairs) {
    const double se = std::sqrt(ssw / df / 2.0 * (2.0 / 8.0));
    const double q = std::abs(means[p.first] - means[p.second]) / se;
    tukey_err = std::max(tukey_err, std::abs(p.p_adjusted - (1.0 - oracle::studentized_range_cdf(q, 4, df))));
  }
  return {worst <= tol::kAnovaRel && layout && tukey_err <= tol::kTukeyAbs,
          "ANOVA max rel error " + num(worst, 2) + "; F(" + std::to_string(big.df_between) + ", " +
              std::to_string(big.df_within) + "); Tukey max p error " + num(tukey_err, 2)};
}

Outcome audio_exactness() {
  const auto pad100 = pad_silence(AudioBuffer::mono(std::vector<double>(1000, 0.1)), 100.0, 0.0);
  const auto pad500 = pad_silence(AudioBuffer::mono(std::vector<double>(1000, 0.1)), 0.0, 500.0);
  const bool padding = pad100.frames() == 1000 + 4410 && pad500.frames() == 1000 + 22050;

  std::mt19937_64 rng(5);
  std::vector<SentenceAsset> assets;
  std::vector<AudioBuffer> stories;
  auto direct_db = [](const std::vector<double>& x) {
    long double ss = 0;
    for (double v : x) ss += static_cast<long double>(v) * v;
    return 10.0 * std::log10(static_cast<double>(ss / x.size()));
  };
  std::vector<double> before;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> x(4000 + 100 * i);
    for (auto& v : x) v = (0.02 + 0.01 * i) * (2 * oracle::uniform01(rng) - 1);
    before.push_back(direct_db(x));
    SentenceAsset a;
    a.sentence_id = "s" + std::to_string(i);
    a.audio = AudioBuffer::mono(x);
    a.rms_db = rms_db(a.audio);
    assets.push_back(std::move(a));
  }
  for (int i = 0; i < 2; ++i) {
    std::vector<double> x(20000);
    for (auto& v : x) v = 0.3 * (2 * oracle::uniform01(rng) - 1);
    before.push_back(direct_db(x));
    stories.push_back(AudioBuffer::mono(x));
  }
  double mean = 0;
  for (double v : before) mean += v;
  mean /= before.size();
  const auto gains = normalize_corpus(assets, stories, 7.0);
  double lo = 1e9, hi = -1e9, worst_target = 0.0;
  auto visit = [&](AudioBuffer b, double g) {
    apply_gain_db(b, g);
    const double level = direct_db(b.channels[0]);
    lo = std::min(lo, level);
    hi = std::max(hi, level);
    worst_target = std::max(worst_target, std::abs(level - (mean - 7.0)));
  };
  for (std::size_t i = 0; i < assets.size(); ++i) visit(assets[i].audio, gains.sentence_gains_db[i]);
  for (std::size_t i = 0; i < stories.size(); ++i) visit(stories[i], gains.story_gains_db[i]);

  const auto tone = synthesize_warning_tone(Calibration{});
  const double amp = std::sqrt(2.0) * std::pow(10.0, (60.0 - 100.0) / 20.0);
  double tone_err = 0.0;
  for (std::size_t i = 0; i < tone.frames(); ++i) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (tone.frames() - 1)));
    const double want = w * amp * std::sin(2.0 * std::numbers::pi * 1000.0 * i / 44100.0);
    tone_err = std::max(tone_err, std::abs(tone.channels[0][i] - want));
  }
  const bool tone_ok = tone.frames() == 8820 && tone.channels[0].front() == 0.0 && tone.channels[0].back() == 0.0 &&
                       tone.channels[0] == tone.channels[1] && tone_err < 1e-12;

  std::vector<double> sig(5000), hl(200), hr(200);
  for (auto& v : sig) v = 2 * oracle::uniform01(rng) - 1;
  for (std::size_t i = 0; i < hl.size(); ++i) {
    hl[i] = std::exp(-0.03 * i) * (2 * oracle::uniform01(rng) - 1);
    hr[i] = std::exp(-0.05 * i) * (2 * oracle::uniform01(rng) - 1);
  }
  HrirSet set = HrirSet::identity();
  set.by_azimuth[90] = {hl, hr};
  set.by_azimuth[-90] = {hr, hl};
  const auto out = spatialize(AudioBuffer::mono(sig), set, 90);
  const auto wl = oracle::naive_convolve(sig, hl), wr = oracle::naive_convolve(sig, hr);
  double conv_err = 0.0;
  for (std::size_t i = 0; i < wl.size(); ++i)
    conv_err = std::max({conv_err, std::abs(out.channels[0][i] - wl[i]), std::abs(out.channels[1][i] - wr[i])});
  const bool conv_ok = out.frames() == wl.size() && conv_err < tol::kConvolution;

  const bool ok = padding && hi - lo < tol::kRmsSpread && worst_target < tol::kHeadroom &&
                  std::abs(gains.target_db - mean) < tol::kHeadroom && tone_ok && conv_ok;
  return {ok, "pads 4410/22050, RMS spread " + num(hi - lo, 2) + " dB at mean-7 (err " + num(worst_target, 2) +
                  "), tone 8820 samples, convolution error " + num(conv_err, 2)};
}

int run_cli(const fs::path& cwd, const std::string& args, std::string* out) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" LISN_CLI_PATH "' " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return -1;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0)
    if (out) out->append(buf, n);
  const int status = ::pclose(p);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// One live session through the service, exported next to the simulated logs.
void export_live_session(const fs::path& sim_dir) {
  const auto first = read_session_log(sim_dir / "logs/SIM0001.ndjson");
  std::map<std::string, double> offsets;
  {
    std::ifstream in(sim_dir / "sentence_offsets.tsv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      offsets[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
    }
  }
  ServiceResources res;
  for (std::size_t i = 0; i < first.header.sentence_pool.size(); ++i) {
    SentenceAsset a;
    a.sentence_id = first.header.sentence_pool[i];
    a.word_count = first.header.sentence_words[i];
    a.audio = AudioBuffer::mono(std::vector<double>(400, 0.01), 8000);
    res.sentences.push_back(std::move(a));
  }
  res.stories.push_back({"a", "v", AudioBuffer::mono(std::vector<double>(4000, 0.01), 8000)});
  res.stories.push_back({"b", "v", AudioBuffer::mono(std::vector<double>(4000, 0.01), 8000)});
  res.hrirs = HrirSet::identity(8000);
  res.calibration = Calibration{};
  testutil::TempDir data("acceptance-service");
  SessionService svc(std::move(res), data.path());
  CreateSessionRequest req;
  req.participant = {{"code", "LIVE01"}};
  req.seed = 4242;
  const std::string id = svc.create_session(req)["session_id"];
  SimulatedListener l;
  l.true_srt = -2.0;
  l.slope_b = 0.8;
  l.rng_seed = 4243;
  l.sentence_offsets = offsets;
  ListenerSimulator sim(l);
  auto state = svc.get_state(id);
  while (state["status"] == "active") {
    const auto& p = state["pending"];
    const int k = sim.respond(p["level"].get<double>(), 65.0, p["words_total"].get<int>(),
                              p["sentence_id"].get<std::string>());
    state = svc.submit_trial_result(id, k, p["key"].get<std::string>())["state"];
  }
  testutil::spit(sim_dir / "logs/LIVE01.ndjson", svc.export_session(id));
}

Outcome end_to_end() {
  testutil::TempDir dir("acceptance-e2e");
  std::string out;
  const int sim = run_cli(dir.path(),
                          "simulate --runs 60 --slope 0.8 --srt-spread 1.5 --sentence-offset-sd 1.5 --seed 3 --out sim",
                          &out);
  if (sim != 0) return {false, "simulate exited " + std::to_string(sim) + ": " + out};
  export_live_session(dir / "sim");
  out.clear();
  const int an = run_cli(dir.path(), "analyze sim/logs --out analysis", &out);
  if (an != 0) return {false, "analyze exited " + std::to_string(an) + ": " + out};
  const auto j = nlohmann::json::parse(out);
  const auto sel = nlohmann::json::parse(testutil::slurp(dir / "analysis/selection.json"));
  std::ifstream fits(dir / "analysis/fits.tsv");
  std::string line;
  int rows = 0, marked = 0;
  std::getline(fits, line);
  while (std::getline(fits, line)) {
    ++rows;
    std::istringstream f(line);
    std::vector<std::string> cols;
    for (std::string c; std::getline(f, c, '\t');) cols.push_back(c);
    marked += cols.at(8) == "1";
  }
  const bool ok = rows == 187 && marked == 120 && j["selected"] == 120 && sel["selected_ids"].size() == 120;
  return {ok, std::to_string(rows) + " fitted sentences, " + std::to_string(marked) + " selected, from " +
                  std::to_string(j["blocks_used"].get<int>()) + " blocks (60 simulated + 1 exported live session)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"staircase hand-trace", hand_trace},
      {"simulated convergence", convergence},
      {"fit recovery", fit_recovery},
      {"selection oracle", selection_oracle},
      {"equalization", equalization},
      {"statistics oracle", statistics_oracle},
      {"audio bit-exactness", audio_exactness},
      {"end-to-end", end_to_end},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
