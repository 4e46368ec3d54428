#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "spats/data.hpp"
#include "spats/model.hpp"
#include "spats/synth.hpp"

using namespace spats;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPATS_CLI_PATH) + " " + args +
                          " >/tmp/spats_cli_stdout.txt 2>/tmp/spats_cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string fresh_dir(const char* name) {
  std::string dir = std::string("/tmp/spats_cli_") + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_scene_spec(const std::string& path, int size, int frames) {
  SyntheticSceneSpec spec;
  spec.width = size;
  spec.height = size;
  spec.frames = frames;
  spec.occ_radius_px = size * 0.2;
  spec.occ_center_px[0] = size / 2.0;
  spec.occ_center_px[1] = size / 2.0;
  spec.occ_amp_px[0] = size * 0.08;
  spec.occ_amp_px[1] = size * 0.05;
  spec.save_file(path);
}

}  // namespace

TEST_CASE("cli: synth is deterministic and its flows parse back exactly") {
  const std::string dir = fresh_dir("synth");
  write_scene_spec(dir + "/scene.txt", 24, 4);
  REQUIRE(run_cli("synth --spec " + dir + "/scene.txt --out " + dir + "/a") == 0);
  REQUIRE(run_cli("synth --spec " + dir + "/scene.txt --out " + dir + "/b") == 0);

  VideoTensor va = load_video(dir + "/a");
  VideoTensor vb = load_video(dir + "/b");
  REQUIRE(va.t_count() == 4);
  for (int k = 0; k < 4; ++k) CHECK(va.frames[k].v == vb.frames[k].v);

  // round trip of the emitted flow files
  auto spec = SyntheticSceneSpec::parse_file(dir + "/scene.txt");
  auto scene = synth_scene(spec, 1);
  for (int k = 0; k < 3; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/a/flow_fwd_%05d.flo", k);
    Image parsed = load_flo(dir + buf);
    CHECK(parsed.v == scene.flows.forward[k].v);
  }
}

TEST_CASE("cli: synth usage errors") {
  CHECK(run_cli("synth --out /tmp/x") == 2);          // missing --spec
  CHECK(run_cli("synth --spec /nonexistent.txt --out /tmp/x") == 2);
}

TEST_CASE("cli: fit smoke run writes all artifacts and is resumable") {
  const std::string dir = fresh_dir("fit");
  write_scene_spec(dir + "/scene.txt", 16, 3);
  REQUIRE(run_cli("synth --spec " + dir + "/scene.txt --out " + dir + "/data") == 0);

  const std::string cfg =
      " --set total_iters=40 --set batch_size=64 --set mlp_width=16"
      " --set mlp_layers=3 --set mlp_skip=1 --set enc_freqs_spatial=3"
      " --set mask_k=3 --set eval_every=20 --set checkpoint_every=20"
      " --set log_every=10 --set seed=5";
  REQUIRE(run_cli("fit --data " + dir + "/data --out " + dir + "/run" + cfg) == 0);

  CHECK(fs::exists(dir + "/run/config.snapshot"));
  CHECK(fs::exists(dir + "/run/manifest.json"));
  CHECK(fs::exists(dir + "/run/logs/train.csv"));
  CHECK(fs::exists(dir + "/run/logs/eval.csv"));
  CHECK(fs::exists(dir + "/run/model.spats"));
  CHECK(fs::exists(dir + "/run/checkpoints/ckpt_000020.spats"));
  CHECK(fs::exists(dir + "/run/previews/iter_000000.png"));

  // manifest sanity
  std::ifstream mf(dir + "/run/manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["inputs"].size() > 0);
  CHECK(manifest["combined_hash"].get<std::string>().size() == 64);

  // resume continues the counter
  REQUIRE(run_cli("fit --data " + dir + "/data --out " + dir + "/run2" + cfg +
                  " --resume " + dir + "/run/checkpoints/ckpt_000020.spats") == 0);
  std::ifstream log(dir + "/run2/logs/train.csv");
  std::string line, first_data;
  std::getline(log, line);  // header
  std::getline(log, first_data);
  CHECK(first_data.substr(0, 3) == "20,");
}

TEST_CASE("cli: fit rejects bad config with exit code 2") {
  const std::string dir = fresh_dir("fitbad");
  write_scene_spec(dir + "/scene.txt", 16, 3);
  REQUIRE(run_cli("synth --spec " + dir + "/scene.txt --out " + dir + "/data") == 0);
  CHECK(run_cli("fit --data " + dir + "/data --out " + dir + "/run"
                " --set lambda_mxe=-1 --set total_iters=5") == 2);
  CHECK(run_cli("fit --data " + dir + "/data --out " + dir + "/run"
                " --set no_such_key=1") == 2);
  CHECK(run_cli("fit --data " + dir + "/missing --out " + dir + "/run") == 3);
}

TEST_CASE("cli: render composite, layers, canonical from an init checkpoint") {
  const std::string dir = fresh_dir("render");
  auto scene = init_scene<float>(
      ModelConfig{.n_control = 3, .enc_freqs_spatial = 2, .enc_freqs_time = 1,
                  .mlp_layers = 3, .mlp_width = 8, .mlp_skip = 1},
      1);
  save_checkpoint(dir + "/init.spats", scene);

  REQUIRE(run_cli("render --checkpoint " + dir + "/init.spats --out " + dir +
                  "/frames --what composite --t-count 3 --height 8 --width 8") == 0);
  Image f0 = read_png(dir + "/frames/frame_00000.png");
  for (float v : f0.v) CHECK(v == doctest::Approx(0.5f).epsilon(0.01));

  REQUIRE(run_cli("render --checkpoint " + dir + "/init.spats --out " + dir +
                  "/layers --what layers --t-count 3 --height 8 --width 8"
                  " --frames 1:2") == 0);
  CHECK(fs::exists(dir + "/layers/alpha_00001.png"));
  CHECK(fs::exists(dir + "/layers/fg_00002.png"));
  CHECK_FALSE(fs::exists(dir + "/layers/fg_00000.png"));

  REQUIRE(run_cli("render --checkpoint " + dir + "/init.spats --out " + dir +
                  "/canon --what canonical --t-count 3 --height 8 --width 8") == 0);
  Image base = read_npy(dir + "/canon/canon_base_fg.npy");
  for (float v : base.v) CHECK(v == 0.5f);
  Image dl = read_npy(dir + "/canon/canon_dlogit_bg_00001.npy");
  for (float v : dl.v) CHECK(v == 0.f);

  CHECK(run_cli("render --checkpoint " + dir + "/init.spats --out " + dir +
                "/x --what nonsense") == 2);
  CHECK(run_cli("render --checkpoint " + dir + "/init.spats --out " + dir +
                "/x --what composite --t-count 3 --frames 0:9") == 2);
}

TEST_CASE("cli: motion-edit factor 1 reproduces the plain rendering") {
  const std::string dir = fresh_dir("medit");
  auto scene = init_scene<float>(
      ModelConfig{.n_control = 3, .enc_freqs_spatial = 2, .enc_freqs_time = 1,
                  .mlp_layers = 3, .mlp_width = 8, .mlp_skip = 1},
      2);
  Rng rng(3);
  for (auto* p : scene.params())
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c)
        p->value(r, c) = float(rng.uniform(-0.2, 0.2));
  save_checkpoint(dir + "/m.spats", scene);
  {
    std::ofstream f(dir + "/edit.txt");
    f << "amplify = 1.0\n";
  }
  REQUIRE(run_cli("motion-edit --checkpoint " + dir + "/m.spats --spec " + dir +
                  "/edit.txt --out " + dir + "/out --t-count 3 --height 8"
                  " --width 8") == 0);
  REQUIRE(run_cli("render --checkpoint " + dir + "/m.spats --out " + dir +
                  "/ref --what composite --t-count 3 --height 8 --width 8") == 0);
  for (int k = 0; k < 3; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/frame_%05d.png", k);
    Image a = read_png(dir + "/out" + buf);
    Image b = read_png(dir + "/ref" + buf);
    CHECK(a.v == b.v);
  }
}

TEST_CASE("cli: numerical abort exits with code 4") {
  const std::string dir = fresh_dir("nanfit");
  write_scene_spec(dir + "/scene.txt", 16, 3);
  REQUIRE(run_cli("synth --spec " + dir + "/scene.txt --out " + dir + "/data") == 0);
  // an absurd learning rate explodes the parameters into non-finite range
  CHECK(run_cli("fit --data " + dir + "/data --out " + dir + "/run"
                " --set total_iters=200 --set batch_size=64"
                " --set mlp_width=16 --set mlp_layers=3 --set mlp_skip=1"
                " --set enc_freqs_spatial=3 --set mask_k=3"
                " --set eval_every=1000 --set checkpoint_every=0"
                " --set lr0=1e38") == 4);
}

TEST_CASE("cli: eval emits warping-consistency metrics JSON") {
  const std::string dir = fresh_dir("eval");
  write_scene_spec(dir + "/scene.txt", 32, 6);
  REQUIRE(run_cli("synth --spec " + dir + "/scene.txt --out " + dir + "/data") == 0);
  REQUIRE(run_cli("eval --video " + dir + "/data --flows " + dir +
                  "/data --n 2 --out " + dir + "/metrics.json") == 0);
  std::ifstream f(dir + "/metrics.json");
  nlohmann::json j = nlohmann::json::parse(f);
  CHECK(j["n"] == 2);
  CHECK(j["psnr_mean"].get<double>() > 20.0);
  CHECK(j["valid_fraction"].get<double>() > 0.3);
  CHECK(j.contains("ssim_mean"));
}
