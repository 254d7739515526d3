#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "lisn/wav.hpp"
#include "testutil.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI in `cwd`, capturing stdout; stderr is folded in on request.
Run cli(const fs::path& cwd, const std::string& args, bool with_stderr = false) {
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" LISN_CLI_PATH "' " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::map<std::string, std::string> read_summary(const fs::path& p) {
  std::map<std::string, std::string> m;
  std::istringstream in(testutil::slurp(p));
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos) m[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return m;
}

void write_raw_corpus(const fs::path& dir) {
  fs::create_directories(dir);
  std::string corpus = "sentence_id\ttext\twav\n";
  for (int i = 0; i < 4; ++i) {
    std::vector<double> x(3000 + 500 * i);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = 0.05 * (i + 1) * std::sin(0.03 * (k + 1) * (i + 2));
    const std::string id = "s" + std::to_string(i);
    lisn::write_wav(dir / (id + ".wav"), lisn::AudioBuffer::mono(x), lisn::SampleFormat::Pcm16);
    corpus += id + "\tum dois tres\t" + id + ".wav\n";
  }
  testutil::spit(dir / "corpus.tsv", corpus);
  std::string stories = "story_id\tvoice\twav\n";
  for (int i = 0; i < 2; ++i) {
    std::vector<double> x(20000);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = 0.2 * std::sin(0.011 * k * (i + 1));
    const std::string id = "st" + std::to_string(i);
    lisn::write_wav(dir / (id + ".wav"), lisn::AudioBuffer::mono(x), lisn::SampleFormat::Pcm16);
    stories += id + "\tfemale\t" + id + ".wav\n";
  }
  testutil::spit(dir / "stories.tsv", stories);
}

}  // namespace

TEST_CASE("usage and validation errors exit 2 with a JSON report") {
  testutil::TempDir dir("cli-usage");
  const auto none = cli(dir.path(), "", true);
  CHECK(none.code == 2);
  CHECK(json::parse(none.out)["error"] == "usage");
  CHECK(cli(dir.path(), "frobnicate").code == 2);
  const auto slope = cli(dir.path(), "simulate --runs 2 --slope 0", true);
  CHECK(slope.code == 2);
  CHECK(json::parse(slope.out)["error"] == "validation");
  CHECK(cli(dir.path(), "simulate --runs 2 --block-length 0").code == 2);
  CHECK(cli(dir.path(), "analyze missing_dir").code == 2);
  CHECK(cli(dir.path(), "prepare-audio --corpus nope.tsv --stories nope.tsv --out o").code == 2);
  CHECK(cli(dir.path(), "--help").code == 0);
}

TEST_CASE("simulate converges and is reproducible") {
  testutil::TempDir dir("cli-sim");
  const auto r = cli(dir.path(), "simulate --runs 200 --true-srt -2 --seed 7 --out a");
  REQUIRE(r.code == 0);
  const auto s = read_summary(dir / "a/summary.tsv");
  CHECK(s.at("sessions") == "200");
  CHECK(std::abs(std::stod(s.at("mean_srt_db_spl")) - 63.0) <= 1.0);
  CHECK(std::stod(s.at("sd_srt_db")) <= 2.5);
  CHECK(cli(dir.path(), "simulate --runs 200 --true-srt -2 --seed 7 --out b").code == 0);
  for (const char* f : {"summary.tsv", "participants.tsv", "logs/SIM0001.ndjson", "logs/SIM0200.ndjson"}) {
    REQUIRE(fs::exists(dir / "a" / f));
    CHECK(testutil::slurp(dir / "a" / f) == testutil::slurp(dir / "b" / f));
  }
  CHECK(cli(dir.path(), "simulate --runs 3 --seed 8 --out c").code == 0);
  CHECK(testutil::slurp(dir / "a/logs/SIM0001.ndjson") != testutil::slurp(dir / "c/logs/SIM0001.ndjson"));
}

TEST_CASE("simulate reads a config file") {
  testutil::TempDir dir("cli-config");
  testutil::spit(dir / "sim.ini", "[simulate]\nruns = 4\nblocks = 2\nout = cfg\n");
  REQUIRE(cli(dir.path(), "--config sim.ini simulate").code == 0);
  const auto s = read_summary(dir / "cfg/summary.tsv");
  CHECK(s.at("sessions") == "4");
  CHECK(s.at("blocks") == "8");
}

TEST_CASE("analyze consumes simulate output directly") {
  testutil::TempDir dir("cli-analyze");
  REQUIRE(cli(dir.path(),
               "simulate --runs 30 --slope 0.8 --srt-spread 1.5 --sentence-offset-sd 1.5 --seed 3 --out sim")
              .code == 0);
  const auto r = cli(dir.path(), "analyze sim/logs --n-select 60 --no-tukey-participants --out an");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["fits"] == 187);
  CHECK(j["selected"] == 60);
  for (const char* f : {"fits.tsv", "gains.tsv", "selection.json", "statistics.json", "trials.tsv"})
    CHECK(fs::exists(dir / "an" / f));
  const json sel = json::parse(testutil::slurp(dir / "an/selection.json"));
  CHECK(sel["selected_ids"].size() == 60);

  // Same inputs, same outputs; the flat table reproduces the fits.
  REQUIRE(cli(dir.path(), "analyze sim/logs --n-select 60 --no-tukey-participants --out an2").code == 0);
  CHECK(testutil::slurp(dir / "an/fits.tsv") == testutil::slurp(dir / "an2/fits.tsv"));
  REQUIRE(cli(dir.path(), "analyze --table an/trials.tsv --n-select 60 --no-tukey-participants --out an3").code ==
          0);
  CHECK(testutil::slurp(dir / "an/fits.tsv") == testutil::slurp(dir / "an3/fits.tsv"));

  // More sentences requested than pass the gate: a runtime failure.
  const auto too_many = cli(dir.path(), "analyze sim/logs --n-select 500 --no-tukey-participants --out x", true);
  CHECK(too_many.code == 3);
  CHECK(json::parse(too_many.out).contains("message"));
}

TEST_CASE("prepare-audio is byte-identical across runs") {
  testutil::TempDir dir("cli-prepare");
  write_raw_corpus(dir / "raw");
  const std::string args = "prepare-audio --corpus raw/corpus.tsv --stories raw/stories.tsv --out ";
  REQUIRE(cli(dir.path(), args + "p1").code == 0);
  REQUIRE(cli(dir.path(), args + "p2").code == 0);
  for (const auto& entry : fs::recursive_directory_iterator(dir / "p1")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir / "p1");
    CAPTURE(rel.string());
    CHECK(testutil::slurp(entry.path()) == testutil::slurp(dir / "p2" / rel));
  }
  CHECK(fs::exists(dir / "p1/corpus.tsv"));
  CHECK(fs::exists(dir / "p1/sentences/s3.wav"));
  CHECK(lisn::read_wav(dir / "p1/sentences/s0.wav").frames() == 3000 + 2 * 22050);
  CHECK(lisn::read_wav(dir / "p1/stories/st1.wav").frames() == 20000 + 2 * 4410);
  CHECK(cli(dir.path(), args + "p3 --format mp3").code == 2);
}

TEST_CASE("calibrate-check renders the tone and a reference sentence") {
  testutil::TempDir dir("cli-cal");
  write_raw_corpus(dir / "raw");
  testutil::spit(dir / "cal.json", R"({"spl_at_fullscale": [100.0, 98.0]})");
  const auto r = cli(dir.path(), "calibrate-check --calibration cal.json --level 70 --corpus raw/corpus.tsv --out cc");
  REQUIRE(r.code == 0);
  const auto tone = lisn::read_wav(dir / "cc/tone.wav");
  CHECK(tone.channel_count() == 2);
  CHECK(tone.frames() == 8820);
  CHECK(fs::exists(dir / "cc/reference_sentence.wav"));
  const json report = json::parse(testutil::slurp(dir / "cc/calibration_check.json"));
  CHECK_FALSE(report.empty());
  testutil::spit(dir / "bad.json", R"({"spl_at_fullscale": [100.0]})");
  CHECK(cli(dir.path(), "calibrate-check --calibration bad.json").code == 2);
}
