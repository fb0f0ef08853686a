#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

std::string cli_bin() {
  const char* p = std::getenv("GNV3_CLI_BIN");
  REQUIRE_MESSAGE(p != nullptr, "GNV3_CLI_BIN must point at the gnv3 binary");
  return p;
}

RunResult run(const std::string& args, bool deterministic = true) {
  std::string cmd;
  if (deterministic) cmd += "GNV3_DETERMINISTIC=1 ";
  cmd += cli_bin() + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0)
    r.output.append(buf.data(), got);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("gnv3_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string smoke_config(const TempDir& tmp, const std::string& tag) {
  return "[model]\npreset = mini\nclasses = 5\n"
         "[train]\nepochs = 2\nbatch = 32\nseed = 7\n"
         "out = " + tmp.file("model_" + tag + ".gnv3") + "\n"
         "metrics = " + tmp.file("metrics_" + tag + ".csv") + "\n"
         "[schedule]\nlr_max = 0.02\n"
         "[data]\ntrain = " + tmp.file("train.gds") + "\n"
         "val = " + tmp.file("val.gds") + "\n";
}

}  // namespace

TEST_CASE("usage errors exit nonzero") {
  CHECK(run("").exit_code != 0);
  CHECK(run("train").exit_code != 0);  // --config is required
  CHECK(run("definitely-not-a-command").exit_code != 0);
  RunResult missing = run("train --config /nonexistent/recipe.ini");
  CHECK(missing.exit_code != 0);
}

TEST_CASE("synth then smoke train: files written, budget met, deterministic") {
  TempDir tmp;
  RunResult s1 = run("synth " + tmp.file("train.gds") +
                     " --classes 5 --per-class 20 --height 16 --width 16"
                     " --seed 1 --noise 0.2");
  REQUIRE_MESSAGE(s1.exit_code == 0, s1.output);
  RunResult s2 = run("synth " + tmp.file("val.gds") +
                     " --classes 5 --per-class 8 --height 16 --width 16"
                     " --seed 2 --noise 0.2");
  REQUIRE_MESSAGE(s2.exit_code == 0, s2.output);

  write_text(tmp.file("a.ini"), smoke_config(tmp, "a"));
  write_text(tmp.file("b.ini"), smoke_config(tmp, "b"));

  const auto t0 = std::chrono::steady_clock::now();
  RunResult tr = run("train --config " + tmp.file("a.ini") + " --quiet");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  REQUIRE_MESSAGE(tr.exit_code == 0, tr.output);
  CHECK(secs < 60.0);
  CHECK(fs::exists(tmp.file("model_a.gnv3")));
  CHECK(fs::exists(tmp.file("metrics_a.csv")));
  CHECK(tr.output.find("final val top-1") != std::string::npos);

  // Same seed, same data -> byte-identical metrics and checkpoint.
  RunResult tr2 = run("train --config " + tmp.file("b.ini") + " --quiet");
  REQUIRE_MESSAGE(tr2.exit_code == 0, tr2.output);
  CHECK(read_all(tmp.file("metrics_a.csv")) ==
        read_all(tmp.file("metrics_b.csv")));
  CHECK(read_all(tmp.file("model_a.gnv3")) ==
        read_all(tmp.file("model_b.gnv3")));

  // Metrics CSV carries the documented header.
  std::ifstream mf(tmp.file("metrics_a.csv"));
  std::string header;
  std::getline(mf, header);
  CHECK(header == "epoch,lr,train_loss,val_top1_raw,val_top1_ema");

  SUBCASE("fold, verify, bench, eval on the trained checkpoint") {
    const std::string ckpt = tmp.file("model_a.gnv3");
    const std::string folded = tmp.file("folded.gnv3");

    RunResult fo = run("fold " + ckpt + " " + folded);
    REQUIRE_MESSAGE(fo.exit_code == 0, fo.output);
    CHECK(fo.output.find("params:") != std::string::npos);
    CHECK(fs::exists(folded));

    // Folding a folded checkpoint is byte-stable.
    RunResult fo2 = run("fold " + folded + " " + tmp.file("folded2.gnv3"));
    REQUIRE_MESSAGE(fo2.exit_code == 0, fo2.output);
    CHECK(read_all(folded) == read_all(tmp.file("folded2.gnv3")));

    RunResult ve = run("verify-fold " + ckpt + " " + folded +
                       " --inputs 4 --height 16 --width 16");
    REQUIRE_MESSAGE(ve.exit_code == 0, ve.output);
    CHECK(ve.output.find("PASS") != std::string::npos);

    RunResult self = run("verify-fold " + folded + " " + folded +
                         " --inputs 2 --height 16 --width 16");
    REQUIRE_MESSAGE(self.exit_code == 0, self.output);
    CHECK(self.output.find("0.000000e+00") != std::string::npos);

    // Corrupt the tail of the folded file (inside the last tensor payload):
    // load succeeds, equivalence does not.
    auto bytes = read_all(folded);
    const std::string bad = tmp.file("bad.gnv3");
    bytes[bytes.size() - 2] = 0x7f;
    bytes[bytes.size() - 1] = 0x4f;
    std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
    RunResult corrupt = run("verify-fold " + ckpt + " " + bad +
                            " --inputs 2 --height 16 --width 16");
    CHECK(corrupt.exit_code != 0);

    RunResult be = run("bench " + folded +
                       " --runs 5 --warmup 1 --height 16 --width 16");
    REQUIRE_MESSAGE(be.exit_code == 0, be.output);
    CHECK(be.output.find("median") != std::string::npos);
    CHECK(be.output.find("csv: model,folded,runs,warmup,") != std::string::npos);

    RunResult ev = run("eval " + ckpt + " " + tmp.file("val.gds"));
    REQUIRE_MESSAGE(ev.exit_code == 0, ev.output);
    CHECK(ev.output.find("top-1:") != std::string::npos);
    CHECK(ev.output.find("top-5:") != std::string::npos);

    RunResult ex = run("export-logits " + ckpt + " " + tmp.file("val.gds") +
                       " " + tmp.file("val.gtl"));
    REQUIRE_MESSAGE(ex.exit_code == 0, ex.output);
    CHECK(fs::exists(tmp.file("val.gtl")));
  }
}

TEST_CASE("untrained model scores chance level on a balanced set") {
  TempDir tmp;
  REQUIRE(run("synth " + tmp.file("big.gds") +
              " --classes 10 --per-class 100 --height 16 --width 16 --seed 9")
              .exit_code == 0);

  // lr ~ 0 leaves the random initialization untouched.
  write_text(tmp.file("r.ini"),
             "[model]\npreset = mini\nclasses = 10\n"
             "[train]\nepochs = 1\nbatch = 100\nseed = 1\n"
             "out = " + tmp.file("rand.gnv3") + "\n"
             "metrics = " + tmp.file("rand.csv") + "\n"
             "[schedule]\nlr_max = 1e-12\n"
             "[augment]\nrand_transforms = false\nerasing = false\n"
             "[data]\ntrain = " + tmp.file("big.gds") + "\n"
             "val = " + tmp.file("big.gds") + "\n");
  REQUIRE(run("train --config " + tmp.file("r.ini") + " --quiet").exit_code ==
          0);

  RunResult ev = run("eval " + tmp.file("rand.gnv3") + " " + tmp.file("big.gds"));
  REQUIRE_MESSAGE(ev.exit_code == 0, ev.output);
  const size_t pos = ev.output.find("top-1: ");
  REQUIRE(pos != std::string::npos);
  const double top1 = std::atof(ev.output.c_str() + pos + 7);
  CHECK(top1 >= 5.0);   // 10 classes, 1000 samples: chance is 10 +/- 5
  CHECK(top1 <= 15.0);
}

TEST_CASE("ingest builds a dataset from image directories") {
  TempDir tmp;
  fs::create_directories(tmp.path / "in" / "a");
  fs::create_directories(tmp.path / "in" / "b");
  auto ppm = [&](const std::string& rel, uint8_t fill) {
    std::ofstream out(tmp.path / "in" / rel, std::ios::binary);
    out << "P6\n8 8\n255\n";
    for (int i = 0; i < 192; ++i) out.put(static_cast<char>(fill));
  };
  ppm("a/0.ppm", 10);
  ppm("a/1.ppm", 200);
  ppm("b/0.ppm", 90);

  RunResult in = run("ingest " + (tmp.path / "in").string() + " " +
                     tmp.file("img.gds") + " --height 8 --width 8");
  REQUIRE_MESSAGE(in.exit_code == 0, in.output);
  CHECK(in.output.find("3 samples") != std::string::npos);
  CHECK(in.output.find("2 classes") != std::string::npos);
  CHECK(fs::exists(tmp.file("img.gds")));

  fs::create_directories(tmp.path / "empty");
  CHECK(run("ingest " + (tmp.path / "empty").string() + " " +
            tmp.file("e.gds") + " --height 8 --width 8")
            .exit_code != 0);
}
