#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>

#include "cwhar/commands.h"
#include "cwhar/container.h"
#include "cwhar/errors.h"
#include "helpers.h"

using namespace cwhar;
using namespace cwhar::cli;
using cwhar::testing::read_file;
using cwhar::testing::TempDir;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(CWHAR_BIN) + " " + args + " 2>&1";
  Outcome o;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) o.output.append(buf, n);
  const int status = ::pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small enough that a full pretrain / finetune / baseline round takes well under a second.
json tiny_config() {
  json j = read_json_file(fs::path(CWHAR_SOURCE_DIR) / "configs" / "desk.json");
  j.erase("data");
  j.erase("out");
  j["seeds"] = {0};
  j["encoder"]["widths"] = {4, 6, 8};
  j["model"] = {{"projection_dim", 16}, {"hidden_units", 16}, {"fusion", "concat"}};
  for (const char* stage : {"pretrain", "finetune", "baseline"}) j[stage]["epochs"] = 2;
  j["shots"] = {1, 2};
  j["baselines"] = {"csi1"};
  return j;
}

}  // namespace

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ArgumentError("x")) == 2);
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(FormatError("x")) == 3);
  CHECK(exit_code_for(fs::filesystem_error("x", std::error_code())) == 3);
  CHECK(exit_code_for(DataError("x")) == 4);
  CHECK(exit_code_for(ShapeError("x")) == 4);
  CHECK(exit_code_for(NumericError("x")) == 1);
  CHECK(exit_code_for(std::logic_error("x")) == 1);
}

TEST_CASE("experiment config: shipped file loads, unknown keys and bad values are rejected") {
  const ExperimentConfig desk = ExperimentConfig::load(fs::path(CWHAR_SOURCE_DIR) / "configs" / "desk.json");
  CHECK(desk.pretrain.epochs == 40);
  CHECK(desk.resolved_upsample(Modality::csi1) == 1);
  CHECK(desk.seeds.size() == 5);
  CHECK(ExperimentConfig::from_json(desk.to_json()).to_json() == desk.to_json());

  const ExperimentConfig defaults = ExperimentConfig::from_json(json::object());
  CHECK(defaults.resolved_upsample(Modality::csi2) == 2);
  CHECK(defaults.resolved_upsample(Modality::pwr) == 3);
  CHECK(defaults.temperature == 0.5);
  CHECK(defaults.pretrain.epochs == 200);

  CHECK_THROWS_AS(ExperimentConfig::from_json({{"tempreature", 0.5}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"pretrain", {{"epoch", 3}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"encoder", {{"upsample", 4}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"loss", {{"temperature", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"seeds", json::array()}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"pretrain", {{"batch_size", 1}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), FormatError);
}

TEST_CASE("shots and view pair parsing") {
  CHECK(parse_shots("all") == std::nullopt);
  CHECK(parse_shots("5") == std::optional<std::size_t>(5));
  CHECK_THROWS_AS(parse_shots("0"), ArgumentError);
  CHECK_THROWS_AS(parse_shots("five"), ArgumentError);
  CHECK(parse_view_pair("csi1,pwr") == contrastive::ViewPair{Modality::csi1, Modality::pwr});
  CHECK_THROWS_AS(parse_view_pair("csi1"), ArgumentError);
  CHECK_THROWS_AS(parse_view_pair("csi1,csi1"), ArgumentError);
}

TEST_CASE("generate: manifest records the seed, reruns are byte-identical, bad rho exits 2") {
  TempDir dir("gen");
  const auto a = run("generate --out " + q(dir.path() / "a") + " --per-class 50 --seed 7");
  REQUIRE(a.code == 0);
  const json manifest = read_json_file(dir.path() / "a" / kManifestName);
  CHECK(manifest.at("samples").size() == 350);
  CHECK(manifest.at("generator").at("seed") == 7);
  REQUIRE(run("generate --out " + q(dir.path() / "b") + " --per-class 50 --seed 7").code == 0);
  CHECK(read_file(dir.path() / "a" / "data.bin") == read_file(dir.path() / "b" / "data.bin"));
  CHECK(read_file(dir.path() / "a" / kManifestName) == read_file(dir.path() / "b" / kManifestName));

  const auto bad = run("generate --out " + q(dir.path() / "c") + " --rho 1.2");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("rho") != std::string::npos);
  CHECK(bad.output.find("[0, 1]") != std::string::npos);

  CHECK(run("generate --out " + q(dir.path() / "d") + " --no-such-flag").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("generate --out " + q(dir.path() / "e") + " --profile huge").code == 2);
}

TEST_CASE("pipeline through the binary: pretrain, finetune, baseline, report") {
  TempDir dir("pipe");
  const fs::path data = dir.path() / "data", cfg = dir.path() / "tiny.json";
  REQUIRE(run("generate --out " + q(data) + " --per-class 6").code == 0);
  write_json_file(cfg, tiny_config());
  const std::string common = " --config " + q(cfg) + " --data " + q(data);

  REQUIRE(run("pretrain" + common + " --out " + q(dir.path() / "pre")).code == 0);
  CHECK(fs::exists(dir.path() / "pre" / kResolvedConfigFile));
  CHECK(fs::exists(dir.path() / "pre" / "loss.csv"));
  const ExperimentConfig echoed = ExperimentConfig::from_json(read_json_file(dir.path() / "pre" / kResolvedConfigFile));
  CHECK(echoed.pretrain.epochs == 2);

  const fs::path ckpt = dir.path() / "pre" / kCheckpointDir;
  REQUIRE(run("finetune --checkpoint " + q(ckpt) + " --data " + q(data) + " --shots 1 --out " + q(dir.path() / "ft1")).code == 0);
  const json ft = read_json_file(dir.path() / "ft1" / kRunRecordFile);
  CHECK(ft.at("details").at("subset_size") == 7);
  CHECK(ft.at("details").at("subset_ids").size() == 7);
  CHECK(ft.at("details").at("encoder_checksum_before") == ft.at("details").at("encoder_checksum_after"));
  CHECK(ft.at("details").at("checkpoint_encoders_identical") == true);
  CHECK(fs::exists(dir.path() / "ft1" / kMetricsFile));
  CHECK(fs::exists(dir.path() / "ft1" / "confusion.csv"));

  REQUIRE(run("finetune --checkpoint " + q(ckpt) + " --data " + q(data) + " --shots all --out " + q(dir.path() / "ftall")).code == 0);
  // Every training sample of the split.
  const json ftall = read_json_file(dir.path() / "ftall" / kRunRecordFile);
  const json pre = read_json_file(dir.path() / "pre" / kRunRecordFile);
  CHECK(ftall.at("details").at("subset_size") == pre.at("config").at("train_ids").size());

  CHECK(run("finetune --checkpoint " + q(ckpt) + " --data " + q(data) + " --shots 6 --out " + q(dir.path() / "x")).code == 2);

  REQUIRE(run("baseline" + common + " --shots 1 --out " + q(dir.path() / "bl")).code == 0);
  CHECK(read_json_file(dir.path() / "bl" / kRunRecordFile).at("details").at("subset_size") == 7);
  REQUIRE(run("baseline" + common + " --views joint --shots all --out " + q(dir.path() / "blj")).code == 0);

  const std::string runs = " --runs " + q(dir.path() / "ft1") + " " + q(dir.path() / "bl") + " " + q(dir.path() / "pre");
  REQUIRE(run("report" + runs + " --out " + q(dir.path() / "rep1")).code == 0);
  REQUIRE(run("report" + runs + " --out " + q(dir.path() / "rep2")).code == 0);
  for (const char* f : {"comparison.csv", "comparison.json", "curves.csv", "f1_by_method.svg", "f1_vs_shots.svg",
                        "loss_curves.svg", "loss_curves.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(dir.path() / "rep1" / f));
    CHECK(read_file(dir.path() / "rep1" / f) == read_file(dir.path() / "rep2" / f));
  }
  const json cmp = read_json_file(dir.path() / "rep1" / "comparison.json");
  CHECK(cmp.at("published_results").at("reproducible_here") == false);

  fs::create_directories(dir.path() / "empty");
  CHECK(run("report --runs " + q(dir.path() / "empty") + " --out " + q(dir.path() / "rep3")).code == 2);
}

TEST_CASE("pretrain on CSI-1 and PWR routes differently shaped encoders") {
  TempDir dir("pwr");
  const fs::path data = dir.path() / "data", cfg = dir.path() / "tiny.json";
  REQUIRE(run("generate --out " + q(data) + " --per-class 3").code == 0);
  write_json_file(cfg, tiny_config());
  REQUIRE(run("pretrain --config " + q(cfg) + " --data " + q(data) + " --views csi1,pwr --out " + q(dir.path() / "p")).code == 0);
  json meta;
  const nn::ModelBundle b = nn::load_checkpoint(dir.path() / "p" / kCheckpointDir, &meta);
  CHECK(b.config().views[0].modality == Modality::csi1);
  CHECK(b.config().views[1].modality == Modality::pwr);
  CHECK(b.encoder(0).config().input_height == 12);
  CHECK(b.encoder(0).config().input_width == 16);
  CHECK(b.encoder(1).config().input_height == 16);
  CHECK(b.encoder(1).config().input_width == 8);
}

TEST_CASE("broken inputs: truncated container exits 3, missing view exits 4 naming the sample") {
  TempDir dir("broken");
  const fs::path data = dir.path() / "data", cfg = dir.path() / "tiny.json";
  REQUIRE(run("generate --out " + q(data) + " --per-class 3").code == 0);
  write_json_file(cfg, tiny_config());
  const std::string common = " --config " + q(cfg) + " --data " + q(data) + " --out " + q(dir.path() / "run");

  json manifest = read_json_file(data / kManifestName);
  auto& views = manifest["samples"][4]["views"];
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i]["modality"] == "csi2") {
      views.erase(i);
      break;
    }
  }
  write_json_file(data / kManifestName, manifest);
  const auto missing = run("pretrain" + common);
  CHECK(missing.code == 4);
  CHECK(missing.output.find("sample 4") != std::string::npos);

  fs::resize_file(data / "data.bin", fs::file_size(data / "data.bin") / 2);
  CHECK(run("pretrain" + common).code == 3);
  CHECK(run("pretrain --config " + q(cfg) + " --data " + q(dir.path() / "nothing") + " --out " + q(dir.path() / "r")).code == 3);

  write_json_file(cfg, json{{"pretrian", json::object()}});
  CHECK(run("pretrain" + common).code == 2);
}
