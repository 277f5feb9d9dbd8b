#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "elvis/cli.hpp"
#include "elvis/io.hpp"
#include "json.hpp"
#include "temp_dir.hpp"

#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = elvis::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kSmallModel = {
    "--set", "model.hash_dim=64", "--set", "model.hidden=16", "--set", "model.image_dim=16", "--set", "model.text_dim=16",
    "--set", "model.joint_dim=8", "--set", "model.pool_key_dim=8"};

std::vector<std::string> with_model(std::vector<std::string> args) {
  args.insert(args.end(), kSmallModel.begin(), kSmallModel.end());
  return args;
}

}  // namespace

TEST_CASE("gen-data is deterministic") {
  TempDir tmp("cli-gen");
  for (const char* d : {"a", "b"}) {
    const auto r = run({"gen-data", "--seed", "5", "--set", "count=6", "--out", (tmp / d).string()});
    REQUIRE(r.code == elvis::cli::kExitOk);
  }
  for (const auto& e : fs::directory_iterator(tmp / "a"))
    CHECK(elvis::io::read_file(e.path()) == elvis::io::read_file(tmp / "b" / e.path().filename()));
  const std::string manifest = elvis::io::read_file(tmp / "a/run.json");
  CHECK(manifest.find("\"subcommand\": \"gen-data\"") != std::string::npos);
  CHECK(manifest.find("\"code_version\"") != std::string::npos);
}

TEST_CASE("contract violations exit 1 and name the problem") {
  TempDir tmp("cli-bad");
  auto r = run({"pretrain", "--out", tmp.path.string()});
  CHECK(r.code == elvis::cli::kExitInvalid);
  CHECK(r.err.find("dataset") != std::string::npos);

  r = run({"pretrain", "--set", "dataset=/nonexistent/elvis", "--out", tmp.path.string()});
  CHECK(r.code == elvis::cli::kExitInvalid);
  CHECK(r.err.find("/nonexistent/elvis") != std::string::npos);

  r = run({"gen-data", "--set", "countt=3", "--out", tmp.path.string()});
  CHECK(r.code == elvis::cli::kExitInvalid);
  CHECK(r.err.find("countt") != std::string::npos);

  CHECK(run({"gen-data", "--bogus"}).code == elvis::cli::kExitInvalid);
  CHECK(run({"no-such-command"}).code == elvis::cli::kExitInvalid);
  CHECK(run({}).code == elvis::cli::kExitInvalid);
  CHECK(run({"gen-data", "--set", "count=-1", "--out", tmp.path.string()}).code == elvis::cli::kExitInvalid);
  CHECK(run({"pretrain", "--config", (tmp / "missing.cfg").string()}).code == elvis::cli::kExitInvalid);
}

TEST_CASE("help exits 0") {
  const auto r = run({"--help"});
  CHECK(r.code == elvis::cli::kExitOk);
  CHECK(r.out.find("pretrain") != std::string::npos);
}

TEST_CASE("end-to-end: generate, pretrain, evaluate, export") {
  TempDir tmp("cli-e2e");
  const std::string data = (tmp / "data").string(), eval = (tmp / "eval").string();
  REQUIRE(run({"gen-data", "--set", "count=24", "--out", data}).code == 0);
  REQUIRE(run({"gen-data", "--set", "count=8", "--set", "first_index=1000", "--out", eval}).code == 0);

  const std::string run_dir = (tmp / "run").string();
  auto r = run(with_model({"pretrain", "--set", "dataset=" + data, "--set", "epochs=2", "--set", "batch_size=8",
                           "--workers", "2", "--out", run_dir}));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("epoch 1 total") != std::string::npos);
  CHECK(fs::exists(fs::path(run_dir) / "checkpoint.bin"));
  CHECK(fs::exists(fs::path(run_dir) / "metrics.csv"));
  CHECK(fs::exists(fs::path(run_dir) / "run.json"));

  const std::string ckpt = "checkpoint=" + run_dir + "/checkpoint.bin";
  r = run({"eval-grounding", "--set", "dataset=" + eval, "--set", ckpt, "--out", (tmp / "g").string()});
  REQUIRE(r.code == 0);
  for (const char* row : {"Avg,cnr,", "Avg,cnr_abs,", "Single,cnr,", "Multiple,cnr,", "Excluded,count,"})
    CHECK(r.out.find(row) != std::string::npos);
  CHECK(r.out == elvis::io::read_file(tmp / "g/grounding.csv"));

  r = run({"eval-segmentation", "--set", "dataset=" + data, "--set", "eval_dataset=" + eval, "--set", ckpt,
           "--set", "probe.epochs=2", "--out", (tmp / "s").string()});
  REQUIRE(r.code == 0);
  const std::string seg = elvis::io::read_file(tmp / "s/segmentation.csv");
  CHECK(seg.find("mean_dice,") != std::string::npos);
  CHECK(seg.find("pooled_dice,") != std::string::npos);

  r = run({"export-heatmap", "--set", "dataset=" + eval, "--set", ckpt, "--set", "sample=s001000", "--set",
           "query=opacity in the left upper zone", "--set", "upsample=true", "--out", (tmp / "h").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(tmp / "h/s001000.pgm"));
  CHECK(elvis::io::read_file(tmp / "h/s001000.pgm").rfind("P5\n", 0) == 0);
  CHECK(fs::exists(tmp / "h/s001000.csv"));

  r = run({"export-heatmap", "--set", "dataset=" + eval, "--set", ckpt, "--set", "sample=nope", "--out",
           (tmp / "h").string()});
  CHECK(r.code == elvis::cli::kExitInvalid);

  r = run({"eval-grounding", "--set", "dataset=" + eval, "--set", "checkpoint=" + (tmp / "none.bin").string(),
           "--out", (tmp / "g2").string()});
  CHECK(r.code == elvis::cli::kExitInvalid);

  // A corrupt checkpoint is a runtime failure, not a contract violation.
  elvis::io::write_file_atomic(tmp / "bad.bin", "garbage");
  r = run({"eval-grounding", "--set", "dataset=" + eval, "--set", "checkpoint=" + (tmp / "bad.bin").string(),
           "--out", (tmp / "g3").string()});
  CHECK(r.code == elvis::cli::kExitRuntime);
}

TEST_CASE("pretrain resumes from a checkpoint") {
  TempDir tmp("cli-resume");
  const std::string data = (tmp / "data").string();
  REQUIRE(run({"gen-data", "--set", "count=12", "--out", data}).code == 0);
  const auto base = with_model({"pretrain", "--set", "dataset=" + data, "--set", "epochs=2", "--set", "batch_size=4"});
  auto full = base;
  full.insert(full.end(), {"--out", (tmp / "full").string()});
  REQUIRE(run(full).code == 0);
  auto resumed = base;
  resumed.insert(resumed.end(), {"--set", "resume=" + (tmp / "full/checkpoint.bin").string(), "--out",
                                 (tmp / "again").string()});
  const auto r = run(resumed);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("trained 2 epochs") != std::string::npos);

  auto other = base;
  other.insert(other.end(), {"--set", "learning_rate=0.5", "--set",
                             "resume=" + (tmp / "full/checkpoint.bin").string(), "--out", (tmp / "x").string()});
  CHECK(run(other).code == elvis::cli::kExitInvalid);
}

TEST_CASE("grad-check passes") {
  TempDir tmp("cli-grad");
  const auto r = run({"grad-check", "--out", tmp.path.string()});
  CHECK(r.code == elvis::cli::kExitOk);
  const std::string report = elvis::io::read_file(tmp / "gradcheck.txt");
  CHECK(report.find("checked ") != std::string::npos);
  CHECK(report.find("text.head.value") != std::string::npos);
}

TEST_CASE("--seed makes pretraining deterministic and run.json re-executes the run") {
  TempDir tmp("cli-seed");
  const std::string data = (tmp / "data").string();
  REQUIRE(run({"gen-data", "--set", "count=10", "--out", data}).code == 0);
  auto args = with_model({"pretrain", "--seed", "17", "--set", "dataset=" + data, "--set", "epochs=2"});
  for (const char* d : {"a", "b"}) {
    auto a = args;
    a.insert(a.end(), {"--out", (tmp / d).string()});
    REQUIRE(run(a).code == 0);
  }
  CHECK(elvis::io::read_file(tmp / "a/metrics.csv") == elvis::io::read_file(tmp / "b/metrics.csv"));
  CHECK(elvis::io::read_file(tmp / "a/checkpoint.bin") == elvis::io::read_file(tmp / "b/checkpoint.bin"));
  CHECK(elvis::io::read_file(tmp / "a/run.json") == elvis::io::read_file(tmp / "b/run.json"));

  // Replay from the manifest's resolved configuration alone.
  const auto manifest = nlohmann::json::parse(elvis::io::read_file(tmp / "a/run.json"));
  std::string cfg;
  for (const auto& [k, v] : manifest.at("config").items()) cfg += k + "=" + v.get<std::string>() + "\n";
  elvis::io::write_file_atomic(tmp / "replay.cfg", cfg);
  REQUIRE(run({manifest.at("subcommand").get<std::string>(), "--config", (tmp / "replay.cfg").string(), "--out",
               (tmp / "c").string()})
              .code == 0);
  CHECK(elvis::io::read_file(tmp / "c/metrics.csv") == elvis::io::read_file(tmp / "a/metrics.csv"));
  CHECK(elvis::io::read_file(tmp / "c/checkpoint.bin") == elvis::io::read_file(tmp / "a/checkpoint.bin"));

  auto other = args;
  other[2] = "18";
  other.insert(other.end(), {"--out", (tmp / "d").string()});
  REQUIRE(run(other).code == 0);
  CHECK(elvis::io::read_file(tmp / "d/metrics.csv") != elvis::io::read_file(tmp / "a/metrics.csv"));
}
