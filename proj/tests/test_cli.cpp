#include <cstdlib>
#include <fstream>

#include <doctest.h>

#include "helpers.hpp"
#include "ipt/degrade.hpp"
#include "ipt/image.hpp"

using namespace ipt;
using ipt::testing::TempDir;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(IPT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("help exits 0; missing flags exit 1; runtime failures exit 2") {
  CHECK(run("--help") == 0);
  CHECK(run("synth --help") == 0);
  CHECK(run("eval") == 1);                         // missing --ckpt
  CHECK(run("eval --ckpt x --data y --bogus z") == 1);  // unknown flag
  CHECK(run("nosuchcommand") == 1);
  CHECK(run("viz --ckpt /nonexistent.iptc --out /tmp/nowhere_ipt") == 2);
}

TEST_CASE("synth then a one-epoch pretrain, infer, and viz work end to end") {
  TempDir tmp("cli");
  std::filesystem::create_directories(tmp.path / "clean");
  Rng rng(91);
  for (int i = 0; i < 2; ++i) {
    ImageBuffer img(20, 20);
    for (double& p : img.pixels) p = rng.next_uniform();
    save_image(img, (tmp.path / "clean" / ("c" + std::to_string(i) + ".png")).string());
  }
  const std::string root = tmp.path.string();
  CHECK(run("synth --clean " + root + "/clean --out " + root + "/ds --tasks sr2,noise30 --seed 3") == 0);
  CHECK(std::filesystem::exists(tmp.path / "ds" / "manifest.json"));

  CHECK(run("pretrain --manifest " + root + "/ds/manifest.json --out " + root +
            "/run --epochs 2 --decay-epoch 1 --batch 2 --steps-per-epoch 1 --crop 16 "
            "--channels 4 --patch 2 --enc-layers 1 --dec-layers 1 --heads 2") == 0);
  const std::string ckpt = root + "/run/ckpt_final.iptc";
  REQUIRE(std::filesystem::exists(ckpt));

  CHECK(run("infer --ckpt " + ckpt + " --task sr2 --in " + root + "/ds/corrupted/c0_sr2.png"
            " --out " + root + "/up.png") == 0);
  ImageBuffer up = load_image(root + "/up.png");
  CHECK(up.height == 20);  // 10x10 corrupted input restored at 2x
  CHECK(up.width == 20);

  CHECK(run("viz --ckpt " + ckpt + " --out " + root + "/viz") == 0);
  CHECK(std::filesystem::exists(tmp.path / "viz" / "position_embeddings.png"));

  CHECK(run("eval --ckpt " + ckpt + " --task noise30 --data " + root + "/ds --report " +
            root + "/report.json") == 0);
  CHECK(std::filesystem::exists(tmp.path / "report.json"));
}

TEST_SUITE_END();
