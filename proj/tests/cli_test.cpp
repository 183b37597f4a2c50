#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"

namespace fs = std::filesystem;
using stpn_test::TempDir;

namespace {

const std::string kCli = STPN_CLI_PATH;

int run(const std::string& args, const std::string& stdout_file = "/dev/null",
        const std::string& env = "") {
  const std::string cmd = env + kCli + " " + args + " >" + stdout_file + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::vector<std::string> lines_of(const fs::path& path) {
  const std::string text = stpn_test::slurp(path);
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    out.push_back(text.substr(pos, eol - pos));
    pos = eol + 1;
  }
  return out;
}

// One pipeline pass with small sizes; returns the run directory.
void run_pipeline(const fs::path& dir, const std::string& seed_data,
                  const std::string& seed_rgb, const std::string& seed_flow) {
  const std::string data = (dir / "data").string();
  REQUIRE(run("synth --out " + data +
              " --videos 6 --classes 2 --dim 8 --raw-t 30 --seed " + seed_data) == 0);
  const std::string manifest = data + "/manifest.json";
  const std::string common =
      " --epochs 4 --t-out 10 --hidden 6 --lr 0.001 --manifest " + manifest;
  REQUIRE(run("train --stream rgb --out " + (dir / "rgb.ckpt").string() + common +
              " --seed " + seed_rgb, (dir / "train_rgb.out").string()) == 0);
  REQUIRE(run("train --stream flow --out " + (dir / "flow.ckpt").string() + common +
              " --seed " + seed_flow) == 0);
  REQUIRE(run("localize --manifest " + manifest + " --rgb " + (dir / "rgb.ckpt").string() +
              " --flow " + (dir / "flow.ckpt").string() + " --out " +
              (dir / "dets.csv").string() + " --t-out 10 --class-reject 0.0") == 0);
  REQUIRE(run("eval --manifest " + manifest + " --detections " + (dir / "dets.csv").string() +
              " --iou 0.1,0.5 --out " + (dir / "report.csv").string()) == 0);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("no arguments prints usage and fails") { CHECK(run("") == 1); }

TEST_CASE("help exits cleanly") {
  TempDir dir;
  CHECK(run("--help", (dir / "help.out").string()) == 0);
  const std::string text = stpn_test::slurp(dir / "help.out");
  CHECK(text.find("synth") != std::string::npos);
  CHECK(text.find("localize") != std::string::npos);
  CHECK(run("train --help") == 0);
}

TEST_CASE("unknown flags and bad values are usage errors") {
  TempDir dir;
  CHECK(run("synth --out " + (dir / "d").string() + " --bogus 3") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("synth --out " + (dir / "d").string() + " --classes 0") == 1);
  CHECK(run("train --stream sideways --manifest m --out o") == 1);
  // Values the parser accepts but the library rejects are runtime failures.
  CHECK(run("synth --out " + (dir / "d").string() + " --classes 1") == 2);
}

TEST_CASE("missing inputs are runtime errors, not usage errors") {
  TempDir dir;
  CHECK(run("train --manifest " + (dir / "absent.json").string() +
            " --stream rgb --out " + (dir / "o.ckpt").string()) == 2);
  CHECK(run("eval --manifest " + (dir / "absent.json").string() + " --detections " +
            (dir / "d.csv").string() + " --out " + (dir / "r.csv").string()) == 2);
  CHECK(run("report --run " + (dir / "norun").string()) == 2);
}

TEST_CASE("iou lists are validated before any work happens") {
  TempDir dir;
  const std::string base = "eval --manifest m.json --detections d.csv --out r.csv --iou ";
  CHECK(run(base + "0.0,0.5") == 1);
  CHECK(run(base + "1.5") == 1);
  CHECK(run(base + "abc") == 1);
  CHECK(run(base + "''") == 1);
}

TEST_CASE("the full pipeline runs end to end") {
  TempDir dir;
  run_pipeline(dir.path(), "11", "1", "2");

  CHECK(fs::exists(dir / "data" / "manifest.json"));
  CHECK(fs::exists(dir / "data" / "synth.meta.json"));
  CHECK(fs::exists(dir / "rgb.ckpt"));
  CHECK(fs::exists(dir / "rgb.ckpt.meta.json"));
  CHECK(fs::exists(dir / "rgb.ckpt.train.csv"));
  CHECK(fs::exists(dir / "dets.csv"));
  CHECK(fs::exists(dir / "dets.csv.meta.json"));
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(fs::exists(dir / "report.csv.meta.json"));

  const std::vector<std::string> progress = lines_of(dir / "train_rgb.out");
  REQUIRE(progress.size() == 5);  // header + one line per epoch
  CHECK(progress[0] == "epoch,loss_class,loss_sparsity,loss_total,mean_lambda");
  CHECK(progress[1].rfind("1,", 0) == 0);
  CHECK(progress[4].rfind("4,", 0) == 0);

  const std::vector<std::string> report = lines_of(dir / "report.csv");
  CHECK(report[0] == "iou,class,ap");
  REQUIRE(report.size() == 7);  // 2 thresholds x (2 classes + summary)
  CHECK(report[3].rfind("0.1,__mAP__,", 0) == 0);
  CHECK(report[6].rfind("0.5,__mAP__,", 0) == 0);

  SUBCASE("report renders figures for everything it finds") {
    REQUIRE(run("report --run " + dir.path().string()) == 0);
    CHECK(fs::exists(dir / "rgb.ckpt.loss.svg"));
    CHECK(fs::exists(dir / "flow.ckpt.loss.svg"));
    CHECK(fs::exists(dir / "report.map.csv"));
    CHECK(fs::exists(dir / "report.map.svg"));
    CHECK(fs::exists(dir / "report.meta.json"));
  }

  SUBCASE("report traces a chosen video when given the model context") {
    REQUIRE(run("report --run " + dir.path().string() + " --manifest " +
                (dir / "data" / "manifest.json").string() + " --rgb " +
                (dir / "rgb.ckpt").string() + " --flow " + (dir / "flow.ckpt").string() +
                " --video v0002 --t-out 10") == 0);
    CHECK(fs::exists(dir / "v0002.trace.csv"));
    CHECK(fs::exists(dir / "v0002.trace.svg"));
  }

  SUBCASE("trace flags are all or nothing") {
    CHECK(run("report --run " + dir.path().string() + " --video v0002") == 1);
  }
}

TEST_CASE("one seed gives byte-identical artifacts") {
  TempDir da, db;
  run_pipeline(da.path(), "11", "1", "2");
  run_pipeline(db.path(), "11", "1", "2");
  for (const char* name : {"rgb.ckpt", "flow.ckpt", "dets.csv", "report.csv",
                           "rgb.ckpt.train.csv"}) {
    CHECK(stpn_test::slurp(da / name) == stpn_test::slurp(db / name));
  }
  CHECK(stpn_test::slurp(da / "data" / "manifest.json") ==
        stpn_test::slurp(db / "data" / "manifest.json"));

  TempDir dc;
  run_pipeline(dc.path(), "11", "3", "2");  // different rgb training seed
  CHECK(stpn_test::slurp(da / "rgb.ckpt") != stpn_test::slurp(dc / "rgb.ckpt"));
}

TEST_CASE("the seed environment variable feeds the seed option") {
  TempDir da, db;
  REQUIRE(run("synth --out " + (da / "d").string() +
              " --videos 2 --classes 2 --dim 6 --raw-t 10 --seed 77") == 0);
  REQUIRE(run("synth --out " + (db / "d").string() + " --videos 2 --classes 2 --dim 6 --raw-t 10",
              "/dev/null", "STPN_SEED=77 ") == 0);
  CHECK(stpn_test::slurp(da / "d" / "manifest.json") ==
        stpn_test::slurp(db / "d" / "manifest.json"));
}

}  // TEST_SUITE
