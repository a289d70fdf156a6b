#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

std::string binary() {
  const char* env = std::getenv("MMALIGN_BIN");
  REQUIRE(env != nullptr);
  return env;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) output += buf.data();
  const int status = pclose(pipe);
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = output;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small end-to-end configuration: 6 studies, 16x16 nets-free sizes.
std::string tiny_overrides(const fs::path& root) {
  std::ostringstream ss;
  ss << " --set dataset.root=" << (root / "ds").string()
     << " --set dataset.size=32"
     << " --set dataset.studies_train=2 --set dataset.studies_val=1 --set dataset.studies_test=2"
     << " --set dataset.slices_per_study=2"
     << " --set model.recon_cascades=1 --set model.recon_base=4 --set model.recon_levels=2"
     << " --set model.align_base=4 --set model.align_levels=2"
     << " --set model.synth_base=4 --set model.synth_levels=2"
     << " --set model.disc_base=4 --set model.disc_depth=1"
     << " --set train.max_iterations=6 --set train.validation_interval=3"
     << " --set train.batch_size=2";
  return ss.str();
}

}  // namespace

TEST_CASE("cli: simulate is reproducible and split counts match the config") {
  const fs::path root = fresh_dir("mmalign_cli_sim");
  const std::string common = tiny_overrides(root);

  auto r1 = run("simulate" + common);
  CHECK(r1.exit_code == 0);
  const std::string manifest1 = slurp(root / "ds" / "manifest.json");

  // re-running without --force refuses
  auto r2 = run("simulate" + common);
  CHECK(r2.exit_code != 0);

  auto r3 = run("simulate" + common + " --force");
  CHECK(r3.exit_code == 0);
  CHECK(slurp(root / "ds" / "manifest.json") == manifest1);

  // split sizes: 2/1/2 studies x 2 slices
  int train_files = 0, test_files = 0;
  for (int s = 0; s < 2; ++s)
    for (const auto& e : fs::directory_iterator(root / "ds" / ("s000" + std::to_string(s))))
      train_files += e.path().extension() == ".f32" ? 1 : 0;
  for (int s = 3; s < 5; ++s)
    for (const auto& e : fs::directory_iterator(root / "ds" / ("s000" + std::to_string(s))))
      test_files += e.path().extension() == ".f32" ? 1 : 0;
  CHECK(train_files == 2 * 2 * 2);  // target + reference per slice
  CHECK(test_files == 2 * 2 * 2);
  fs::remove_all(root);
}

TEST_CASE("cli: bad mask config fails with a nonzero exit") {
  const fs::path root = fresh_dir("mmalign_cli_bad");
  auto r = run("simulate" + tiny_overrides(root) + " --set mask.low_freq_fraction=0.99");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("error") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("cli: eval without a checkpoint exits with code 2") {
  const fs::path root = fresh_dir("mmalign_cli_nockpt");
  auto sim = run("simulate" + tiny_overrides(root));
  REQUIRE(sim.exit_code == 0);
  auto r = run("eval" + tiny_overrides(root) + " --set eval.checkpoint=" +
               (root / "missing.ckpt").string() + " --out " + (root / "eval").string());
  CHECK(r.exit_code == 2);
  fs::remove_all(root);
}

TEST_CASE("cli: simulate -> train -> eval end to end, reproducible metrics") {
  const fs::path root = fresh_dir("mmalign_cli_e2e");
  const std::string common = tiny_overrides(root);

  REQUIRE(run("simulate" + common).exit_code == 0);
  auto tr = run("train" + common + " --set train.mode=single_modal --out " +
                (root / "run1").string());
  REQUIRE(tr.exit_code == 0);
  CHECK(fs::exists(root / "run1" / "best.ckpt"));
  CHECK(fs::exists(root / "run1" / "train_log.ndjson"));

  const std::string eval_args = common + " --set eval.checkpoint=" +
                                (root / "run1" / "best.ckpt").string();
  REQUIRE(run("eval" + eval_args + " --out " + (root / "eval1").string()).exit_code == 0);
  REQUIRE(run("eval" + eval_args + " --out " + (root / "eval2").string()).exit_code == 0);
  CHECK(slurp(root / "eval1" / "metrics.json") == slurp(root / "eval2" / "metrics.json"));

  // a second identical training run produces byte-identical metrics
  auto tr2 = run("train" + common + " --set train.mode=single_modal --out " +
                 (root / "run2").string());
  REQUIRE(tr2.exit_code == 0);
  REQUIRE(run("eval" + common + " --set eval.checkpoint=" + (root / "run2" / "best.ckpt").string() +
              " --out " + (root / "eval3").string())
              .exit_code == 0);
  CHECK(slurp(root / "eval1" / "metrics.json") == slurp(root / "eval3" / "metrics.json"));

  // report over two runs emits comparison table with t-test columns
  auto rep = run("report" + common + " --out " + (root / "report").string() + " " +
                 (root / "eval1" / "metrics.json").string() + " " +
                 (root / "eval2" / "metrics.json").string());
  REQUIRE(rep.exit_code == 0);
  CHECK(fs::exists(root / "report" / "comparisons.csv"));
  const std::string csv = slurp(root / "report" / "comparisons.csv");
  CHECK(csv.find("method_a,method_b,metric,t,p") != std::string::npos);
  CHECK(fs::exists(root / "report" / "psnr_box.bmp"));

  fs::remove_all(root);
}

TEST_CASE("cli: sweep runs on frozen checkpoints") {
  const fs::path root = fresh_dir("mmalign_cli_sweep");
  const std::string common = tiny_overrides(root);
  REQUIRE(run("simulate" + common).exit_code == 0);
  REQUIRE(run("train" + common + " --set train.mode=multi_modal --out " +
              (root / "mm").string())
              .exit_code == 0);
  auto sw = run("sweep" + common + " --set eval.sweep_sigmas=[0.0,1.0]" +
                " --checkpoint multi_modal=" + (root / "mm" / "best.ckpt").string() + " --out " +
                (root / "sweep").string());
  REQUIRE(sw.exit_code == 0);
  CHECK(fs::exists(root / "sweep" / "sweep.json"));
  CHECK(fs::exists(root / "sweep" / "sweep.csv"));
  CHECK(fs::exists(root / "sweep" / "sweep_psnr.bmp"));
  fs::remove_all(root);
}
