#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace odr_test;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(ODR_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  Run r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string line_with(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind(prefix, 0) == 0) return line;
  }
  return {};
}

const char* kTiny =
    "model.input_h = 32\nmodel.input_w = 22\nmodel.crop_rows = 6,12,14\nmodel.conv_channels = 4,8,8\n"
    "model.conv_kernels = 3,3,3\nmodel.padding = same\nmodel.fc_width = 32\nrank.eta = 4\nrank.k = 23\n"
    "synth.height = 32\nsynth.width = 22\nsynth.n = 10\ntrain.batch_size = 4\ntrain.epochs = 1\n";

}  // namespace

TEST_CASE("synth is reproducible and rejects empty sets") {
  TempDir dir("cli_synth");
  const std::string a = (dir.path / "a").string();
  const std::string b = (dir.path / "b").string();
  REQUIRE(run("synth --out " + a + " --n 6 --size 32x22 --seed 3").code == 0);
  REQUIRE(run("synth --out " + b + " --n 6 --size 32x22 --seed 3").code == 0);
  CHECK(slurp(dir.path / "a/manifest.csv") == slurp(dir.path / "b/manifest.csv"));
  CHECK(slurp(dir.path / "a/images/00005.pgm") == slurp(dir.path / "b/images/00005.pgm"));
  CHECK(run("synth --out " + a + " --n 0").code == 2);
  CHECK(run("synth --size 32by22").code == 2);
}

TEST_CASE("usage errors exit with 2") {
  TempDir dir("cli_usage");
  CHECK(run("").code == 2);
  CHECK(run("eval --checkpoint " + (dir.path / "none.bin").string()).code == 2);
  CHECK(run("train --loss hinge --out " + dir.path.string()).code == 2);
}

TEST_CASE("train then eval on a tiny run") {
  TempDir dir("cli_run");
  {
    std::ofstream cfg(dir.path / "tiny.cfg");
    cfg << kTiny;
  }
  const std::string run_dir = (dir.path / "run").string();
  const Run t = run("train --config " + (dir.path / "tiny.cfg").string() + " --out " + run_dir + " --seed 4");
  INFO(t.out);
  REQUIRE(t.code == 0);
  for (const char* name : {"config.txt", "epochs.csv", "checkpoint.bin", "val_report.txt", "val_report.json",
                           "val_report_cs.csv", "data/manifest.csv"}) {
    CHECK(std::filesystem::exists(dir.path / "run" / name));
  }
  const std::string epochs = slurp(dir.path / "run/epochs.csv");
  CHECK(epochs.rfind("epoch,ce,emd,total,train_mae,val_mae,lr\n", 0) == 0);

  const std::string ckpt = (dir.path / "run/checkpoint.bin").string();
  const Run e1 = run("eval --checkpoint " + ckpt + " --split test");
  REQUIRE(e1.code == 0);
  const std::string logged = line_with(slurp(dir.path / "run/val_report.txt"), "mae ");
  CHECK(!logged.empty());
  CHECK(line_with(e1.out, "mae ") == logged);

  const Run e2 = run("eval --checkpoint " + ckpt + " --split test");
  CHECK(e2.out == e1.out);
  CHECK(slurp(dir.path / "run/eval_test.json") == slurp(dir.path / "run/val_report.json"));
  CHECK(run("eval --checkpoint " + ckpt + " --split all").code == 0);
  CHECK(run("eval --checkpoint " + ckpt + " --split middle").code == 2);
}

TEST_CASE("gradcheck exit codes") {
  CHECK(run("gradcheck --component emd2").code == 0);
  const Run strict = run("gradcheck --component sigmoid --threshold 1e-14");
  CHECK(strict.code == 1);
  CHECK(strict.out.find("FAIL") != std::string::npos);
  CHECK(run("gradcheck --component nothing").code == 2);
}
