#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "emoformer/audio.hpp"
#include "emoformer/dataset.hpp"
#include "support/test_support.hpp"

using namespace emoformer;

namespace {

// Runs the installed binary with stdout/stderr captured into files, returns
// the process exit code.
struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const testing::TempDir& dir, const std::string& args) {
  const std::string out_path = dir.file("stdout.txt");
  const std::string err_path = dir.file("stderr.txt");
  const std::string command = std::string(TEST_CLI_PATH) + " " + args + " >" +
                              out_path + " 2>" + err_path;
  const int status = std::system(command.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = slurp(out_path);
  result.err = slurp(err_path);
  return result;
}

}  // namespace

TEST_CASE("--version exits cleanly and names the tool") {
  testing::TempDir dir("cli_version");
  CliResult r = run_cli(dir, "--version");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("emoformer") != std::string::npos);
}

TEST_CASE("--help lists every subcommand") {
  testing::TempDir dir("cli_help");
  CliResult r = run_cli(dir, "--help");
  CHECK(r.exit_code == 0);
  for (const char* name :
       {"audio", "features", "train", "eval", "infer", "model", "gradcheck"})
    CHECK(r.out.find(name) != std::string::npos);
}

TEST_CASE("an unknown flag fails with a usage hint on stderr") {
  testing::TempDir dir("cli_unknown");
  CliResult r = run_cli(dir, "train --definitely-not-a-flag");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("--help") != std::string::npos);
  CHECK(r.out.empty());
}

TEST_CASE("a missing manifest is an i/o failure naming the path") {
  testing::TempDir dir("cli_missing");
  CliResult r = run_cli(dir, "train --manifest " + dir.file("absent.csv") +
                                 " --out-dir " + dir.file("run"));
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("absent.csv") != std::string::npos);
}

TEST_CASE("model macs prints a valid json report") {
  testing::TempDir dir("cli_macs");
  CliResult r = run_cli(dir, "model macs");
  REQUIRE(r.exit_code == 0);
  nlohmann::json j = nlohmann::json::parse(r.out);
  CHECK(j.at("total").get<int64_t>() == 127717072);
  CHECK(j.at("reference_total").get<int64_t>() == 35041444);
  CHECK(j.at("parameter_count").get<int64_t>() == 145015);

  CliResult tokens = run_cli(dir, "model macs --sequence-mode tokens58");
  REQUIRE(tokens.exit_code == 0);
  nlohmann::json jt = nlohmann::json::parse(tokens.out);
  CHECK(jt.at("total").get<int64_t>() == 130274320);
}

TEST_CASE("audio resample converts the rate and refuses to overwrite") {
  testing::TempDir dir("cli_resample");
  AudioClip tone = testing::make_tone(440.0, 1.0, 16000, 0.0, 5);
  save_wav(tone, dir.file("in.wav"));

  const std::string args = "audio resample " + dir.file("in.wav") + " " +
                           dir.file("out.wav") + " --rate 8000";
  CliResult first = run_cli(dir, args);
  CHECK(first.exit_code == 0);
  AudioClip out = load_wav(dir.file("out.wav"));
  CHECK(out.sample_rate == 8000);
  CHECK(out.samples.size() == 8000);

  CliResult refused = run_cli(dir, args);
  CHECK(refused.exit_code == 1);
  CHECK(refused.err.find("--force") != std::string::npos);

  CliResult forced = run_cli(dir, args + " --force");
  CHECK(forced.exit_code == 0);
}

TEST_CASE("gradcheck subcommand reports per-op results and exits zero") {
  testing::TempDir dir("cli_gradcheck");
  CliResult r = run_cli(dir, "gradcheck --seed 3");
  REQUIRE(r.exit_code == 0);
  nlohmann::json j = nlohmann::json::parse(r.out);
  CHECK(j.at("all_passed").get<bool>());
  CHECK(j.at("cases").size() >= 23);
  CHECK(r.err.find("conv2d") != std::string::npos);
}

TEST_CASE("features mfcc writes per-segment files plus an index") {
  testing::TempDir dir("cli_features");
  Manifest manifest = testing::make_tone_corpus(dir.path(), {"anger", "fear"},
                                                2, 1.0, 16000, 15);
  manifest.save_csv(dir.file("manifest.csv"));

  CliResult r = run_cli(dir, "features mfcc --manifest " +
                                 dir.file("manifest.csv") + " --out-dir " +
                                 dir.file("feats") + " --target-seconds 5");
  REQUIRE(r.exit_code == 0);

  nlohmann::json index =
      nlohmann::json::parse(slurp(dir.file("feats/index.json")));
  REQUIRE(index.is_array());
  REQUIRE(index.size() == 4);
  for (const auto& row : index) {
    const std::string file = row.at("file").get<std::string>();
    CHECK(std::filesystem::exists(std::filesystem::path(dir.file("feats")) /
                                  file));
    CHECK(row.contains("label"));
    CHECK(row.contains("parent_id"));
    CHECK(row.contains("segment_index"));
  }
}

TEST_CASE("end-to-end: train, eval and infer on a tiny corpus") {
  testing::TempDir dir("cli_e2e");
  Manifest manifest = testing::make_tone_corpus(
      dir.path(), {"anger", "fear", "neutral"}, 4, 2.0, 16000, 25);
  manifest.save_csv(dir.file("manifest.csv"));

  const std::string run_dir = dir.file("run");
  CliResult trained = run_cli(
      dir, "train --manifest " + dir.file("manifest.csv") + " --out-dir " +
               run_dir +
               " --labels anger fear neutral --epochs 2 --batch-size 8" +
               " --no-augment --seed 5 --quiet");
  REQUIRE(trained.exit_code == 0);
  nlohmann::json summary = nlohmann::json::parse(trained.out);
  CHECK(summary.contains("best_epoch"));
  CHECK(summary.contains("clip_accuracy"));
  std::ifstream report_file(summary.at("report").get<std::string>());
  REQUIRE(report_file.good());
  nlohmann::json report = nlohmann::json::parse(report_file);
  CHECK(report.at("history").at("epochs").size() == 2);

  CliResult refused = run_cli(
      dir, "train --manifest " + dir.file("manifest.csv") + " --out-dir " +
               run_dir + " --labels anger fear neutral --quiet");
  CHECK(refused.exit_code == 1);
  CHECK(refused.err.find("--force") != std::string::npos);

  CliResult evaluated = run_cli(dir, "eval --run-dir " + run_dir +
                                         " --manifest " +
                                         dir.file("manifest.csv"));
  REQUIRE(evaluated.exit_code == 0);
  nlohmann::json eval_json = nlohmann::json::parse(evaluated.out);
  CHECK(eval_json.at("segment_metrics").contains("accuracy"));
  CHECK(eval_json.at("clip_metrics").contains("accuracy"));

  CliResult inferred = run_cli(dir, "infer --run-dir " + run_dir + " " +
                                        manifest.entries[0].path);
  REQUIRE(inferred.exit_code == 0);
  nlohmann::json infer_json = nlohmann::json::parse(inferred.out);
  REQUIRE(infer_json.at("probabilities").size() == 3);
  double sum = 0.0;
  for (const auto& p : infer_json.at("probabilities"))
    sum += p.get<double>();
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  const std::string label = infer_json.at("label").get<std::string>();
  CHECK((label == "anger" || label == "fear" || label == "neutral"));
}
