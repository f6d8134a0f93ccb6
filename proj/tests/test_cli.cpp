// End-to-end exercises of the command-line surface. Each command runs as a
// child process against a temp workspace; exit codes follow the contract
// (0 ok, 1 validation failure, 2 numerical-check failure).
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "fusenas/degrade.hpp"

namespace fs = std::filesystem;

static std::string g_binary;

namespace {

int run(const std::string& args) {
  std::string cmd = g_binary + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::string s((std::istreambuf_iterator<char>(f)),
                std::istreambuf_iterator<char>());
  return s;
}

fs::path base() {
  static fs::path p = [] {
    fs::path q = fs::temp_directory_path() / "fusenas_cli_test";
    fs::remove_all(q);
    fs::create_directories(q);
    return q;
  }();
  return p;
}

}  // namespace

TEST_CASE("faces + synth Test-N: grid cardinality and idempotence") {
  auto dir = base();
  REQUIRE(run("faces --out " + (dir / "clean").string() +
              " --count 2 --seed 4") == 0);
  REQUIRE(fs::exists(dir / "clean" / "face001.png"));

  REQUIRE(run("synth --clean-dir " + (dir / "clean").string() +
              " --testset N --out " + (dir / "n").string() + " --seed 5") ==
          0);
  std::ifstream mf(dir / "n" / "manifest.jsonl");
  int rows = 0;
  std::string line;
  while (std::getline(mf, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2 * 4);  // 2 clean images x (2 sigma_s x 2 sigma_c)

  // identical inputs and seed reproduce the manifest byte for byte
  std::string first = slurp(dir / "n" / "manifest.jsonl");
  REQUIRE(run("synth --clean-dir " + (dir / "clean").string() +
              " --testset N --out " + (dir / "n2").string() + " --seed 5") ==
          0);
  CHECK(slurp(dir / "n2" / "manifest.jsonl") ==
        [&] {
          std::string s = first;
          size_t pos;
          while ((pos = s.find("/n/")) != std::string::npos)
            s.replace(pos, 3, "/n2/");
          return s;
        }());
}

TEST_CASE("synth rejects unknown test sets and missing directories") {
  auto dir = base();
  CHECK(run("synth --clean-dir " + (dir / "clean").string() +
            " --testset Q --out " + (dir / "q").string()) == 1);
  CHECK(run("synth --clean-dir " + (dir / "missing").string() +
            " --testset N --out " + (dir / "q").string()) == 1);
}

TEST_CASE("train (0 iterations) then restore and eval run end to end") {
  auto dir = base();
  REQUIRE(run("synth --clean-dir " + (dir / "clean").string() +
              " --testset train --out " + (dir / "train").string() +
              " --seed 6 --count 4") == 0);

  // 0-iteration training still writes a loadable checkpoint
  REQUIRE(run("train --data " + (dir / "train" / "manifest.jsonl").string() +
              " --out " + (dir / "ckpt.bin").string() +
              " --iterations 0 --batch-size 2 --blocks 1 --cell-channels 4 " +
              "--loss-log " + (dir / "loss.jsonl").string()) == 0);
  REQUIRE(fs::exists(dir / "ckpt.bin"));

  REQUIRE(run("restore --ckpt " + (dir / "ckpt.bin").string() + " --input " +
              (dir / "train" / "degraded").string() + " --identity-dir " +
              (dir / "clean").string() + " --out " +
              (dir / "restored").string()) == 0);
  int restored = 0;
  for (const auto& e : fs::directory_iterator(dir / "restored"))
    if (e.path().extension() == ".png") ++restored;
  CHECK(restored == 4);

  REQUIRE(run("eval --pairs " + (dir / "train" / "manifest.jsonl").string() +
              " --restored " + (dir / "restored").string() + " --report " +
              (dir / "report.jsonl").string()) == 0);
  std::string report = slurp(dir / "report.jsonl");
  CHECK(report.find("\"id\":\"mean\"") != std::string::npos);
  CHECK(report.find("psnr_db") != std::string::npos);
}

TEST_CASE("pretrain validates its task against the dataset labels") {
  auto dir = base();
  // the train split contains mixed labels, so task purity must fail
  CHECK(run("pretrain --task blur --data " +
            (dir / "train" / "manifest.jsonl").string() + " --out " +
            (dir / "enc.bin").string() + " --iterations 1") == 1);
}

TEST_CASE("gradcheck command: single op, full-suite smoke via named op") {
  CHECK(run("gradcheck --op softmax_rows") == 0);
  CHECK(run("gradcheck --op op_fft_op") == 0);
  CHECK(run("gradcheck --op no_such_check") == 1);
}

TEST_CASE("config file values are applied and overridden by flags") {
  auto dir = base();
  std::ofstream cfg(dir / "cfg.txt");
  cfg << "iterations = 0\nbatch_size = 2\nresolution = 32\n";
  cfg.close();
  REQUIRE(run("train --data " + (dir / "train" / "manifest.jsonl").string() +
              " --config " + (dir / "cfg.txt").string() + " --out " +
              (dir / "ckpt2.bin").string() +
              " --blocks 1 --cell-channels 4") == 0);
  CHECK(fs::exists(dir / "ckpt2.bin"));
  // bad config key is a validation failure
  std::ofstream bad(dir / "bad.txt");
  bad << "nonsense = 1\n";
  bad.close();
  CHECK(run("train --data " + (dir / "train" / "manifest.jsonl").string() +
            " --config " + (dir / "bad.txt").string() + " --out " +
            (dir / "x.bin").string()) == 1);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <path to fusenas binary>\n");
    return 1;
  }
  g_binary = argv[1];
  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv + 1);
  return ctx.run();
}
