#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "helpers.hpp"

using cac::test::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cac_run(const std::string& args) {
  const std::string cmd = std::string(CAC_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

TEST_CASE("exit codes") {
  TempDir dir;
  const std::string d = dir.path().string();
  CHECK(cac_run("--help").code == 0);
  CHECK(cac_run("train --help").code == 0);
  CHECK(cac_run("").code == 2);
  CHECK(cac_run("frobnicate").code == 2);
  CHECK(cac_run("eval --data " + d + " --split val --bogus").code == 2);
  CHECK(cac_run("eval --data " + d + "/missing --split val --baseline mean").code == 3);
  CHECK(cac_run("infer --checkpoint " + d + "/none.safetensors --image x.png").code == 3);
  CHECK(cac_run("synth --out " + d + "/s --n 10 --set train.nope=1").code == 3);
  CHECK(cac_run("synth --out " + d + "/s --n 10").code == 0);
  CHECK(cac_run("synth --out " + d + "/s --n 10").code == 2);
  CHECK(cac_run("synth --out " + d + "/s --n 10 --force").code == 0);
}

TEST_CASE("synthesize, train, evaluate and infer") {
  TempDir dir;
  const std::string d = dir.path().string();
  REQUIRE(cac_run("synth --out " + d + "/data --n 10 --seed 2").code == 0);
  std::ofstream(dir / "run.cfg") << "backbone.arch=tiny\nbackbone.init=random\ntrain.epochs=1\ntrain.lr=1e-3\n";
  const Run train = cac_run("train --data " + d + "/data --out " + d + "/run --config " + d + "/run.cfg");
  REQUIRE(train.code == 0);
  CHECK(train.out.find("val mae=") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "run" / "final.safetensors"));
  CHECK(std::filesystem::exists(dir / "run" / "steps.jsonl"));
  CHECK(std::filesystem::exists(dir / "run" / "config.txt"));

  const Run ev = cac_run("eval --data " + d + "/data --split test --checkpoint " + d +
                         "/run/final.safetensors --report " + d + "/r.json");
  CHECK(ev.code == 0);
  CHECK(ev.out.find("split=test") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "r.json"));
  CHECK(cac_run("eval --data " + d + "/data --split test").code == 2);

  const Run inf = cac_run("infer --checkpoint " + d + "/run/final.safetensors --image " + d +
                          "/data/images/dots_00000.png");
  CHECK(inf.code == 0);
  CHECK(std::count(inf.out.begin(), inf.out.end(), '\n') == 1);
  CHECK(std::isfinite(std::stod(inf.out)));
  CHECK(cac_run("infer --checkpoint " + d + "/run/final.safetensors --image " + d + "/data/manifest.json").code == 3);

  const Run viz = cac_run("visualize --checkpoint " + d + "/run/final.safetensors --images " + d +
                          "/data/images/dots_00000.png " + d + "/data/images/dots_00001.png --out " + d + "/viz");
  CHECK(viz.code == 0);
  CHECK(std::filesystem::exists(dir / "viz" / "grid.png"));
}
