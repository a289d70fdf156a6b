#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mmalign/data.hpp"
#include "mmalign/models.hpp"
#include "mmalign/rng.hpp"
#include "mmalign/training.hpp"

using namespace mmalign;
namespace fs = std::filesystem;

namespace {

models::ModelSizes tiny_sizes() {
  models::ModelSizes s;
  s.recon_cascades = 2;
  s.recon_base = 5;
  s.recon_levels = 2;
  s.align_base = 5;
  s.align_levels = 2;
  s.synth_base = 5;
  s.synth_levels = 2;
  s.disc_base = 5;
  s.disc_depth = 2;
  return s;
}

training::TrainConfig tiny_config(models::TrainingMode mode) {
  training::TrainConfig cfg;
  cfg.mode = mode;
  cfg.mask.acceleration = 4;
  cfg.mask.pattern = kspace::MaskPattern::kEquispaced;
  cfg.batch_size = 2;
  cfg.max_iterations = 4;
  cfg.validation_interval = 2;
  cfg.augment = false;
  cfg.seed = 9;
  cfg.sizes = tiny_sizes();
  return cfg;
}

std::vector<data::SlicePair> tiny_batch(int count, int size = 32) {
  std::vector<data::SlicePair> out;
  for (int i = 0; i < count; ++i) {
    auto p = data::generate_phantom_pair(static_cast<std::uint64_t>(100 + i), size, 5);
    p.study_id = "s" + std::to_string(i);
    p = data::inject_misalignment(
        p, geometry::DeformationSpec::defaults_for_size(size, 1.0,
                                                        static_cast<std::uint64_t>(50 + i)));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Tensor> snapshot(const models::ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.var->value);
  return out;
}

bool bitwise_same(const std::vector<Tensor>& a, const models::ParamList& b) {
  for (size_t i = 0; i < b.size(); ++i)
    if (!a[i].bitwise_equal(b[i].var->value)) return false;
  return true;
}

}  // namespace

TEST_CASE("train_step is deterministic given the seed") {
  const auto batch = tiny_batch(2);
  const auto cfg = tiny_config(models::TrainingMode::kProposed);

  auto run_once = [&] {
    auto bundle = models::ModelBundle::make(cfg.mode, cfg.sizes, cfg.seed);
    training::Trainer trainer(bundle, cfg);
    trainer.train_step(batch);
    return snapshot(bundle.all_params());
  };
  const auto p1 = run_once();
  const auto p2 = run_once();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].bitwise_equal(p2[i]));
}

TEST_CASE("multi-modal mode leaves alignment/synthesis/discriminator untouched") {
  const auto batch = tiny_batch(2);
  const auto cfg = tiny_config(models::TrainingMode::kMultiModal);
  auto bundle = models::ModelBundle::make(cfg.mode, cfg.sizes, cfg.seed);
  training::Trainer trainer(bundle, cfg);

  const auto t_before = snapshot(bundle.align->params());
  const auto g_before = snapshot(bundle.synth->params());
  const auto d_before = snapshot(bundle.disc->params());
  const auto r_before = snapshot(bundle.recon.params());
  for (int i = 0; i < 3; ++i) trainer.train_step(batch);
  CHECK(bitwise_same(t_before, bundle.align->params()));
  CHECK(bitwise_same(g_before, bundle.synth->params()));
  CHECK(bitwise_same(d_before, bundle.disc->params()));
  CHECK(!bitwise_same(r_before, bundle.recon.params()));
}

TEST_CASE("proposed mode updates all four parameter groups") {
  const auto batch = tiny_batch(2);
  const auto cfg = tiny_config(models::TrainingMode::kProposed);
  auto bundle = models::ModelBundle::make(cfg.mode, cfg.sizes, cfg.seed);
  training::Trainer trainer(bundle, cfg);

  const auto t_before = snapshot(bundle.align->params());
  const auto g_before = snapshot(bundle.synth->params());
  const auto d_before = snapshot(bundle.disc->params());
  const auto r_before = snapshot(bundle.recon.params());
  const auto rec = trainer.train_step(batch);
  CHECK(!bitwise_same(t_before, bundle.align->params()));
  CHECK(!bitwise_same(g_before, bundle.synth->params()));
  CHECK(!bitwise_same(d_before, bundle.disc->params()));
  CHECK(!bitwise_same(r_before, bundle.recon.params()));
  CHECK(std::isfinite(rec.l_rec));
  CHECK(std::isfinite(rec.loss_d));
  CHECK(rec.loss_d >= 0.0);
}

TEST_CASE("rec_only drops the synthesis path, reg_only freezes in stage 2") {
  const auto batch = tiny_batch(2);

  {
    const auto cfg = tiny_config(models::TrainingMode::kRecOnly);
    auto bundle = models::ModelBundle::make(cfg.mode, cfg.sizes, cfg.seed);
    training::Trainer trainer(bundle, cfg);
    const auto g_before = snapshot(bundle.synth->params());
    const auto d_before = snapshot(bundle.disc->params());
    const auto t_before = snapshot(bundle.align->params());
    const auto rec = trainer.train_step(batch);
    CHECK(bitwise_same(g_before, bundle.synth->params()));
    CHECK(bitwise_same(d_before, bundle.disc->params()));
    CHECK(!bitwise_same(t_before, bundle.align->params()));
    CHECK(rec.l_reg == 0.0);
    CHECK(rec.loss_d == 0.0);
  }

  {
    auto cfg = tiny_config(models::TrainingMode::kRegOnly);
    cfg.max_iterations = 4;  // stage 1 = iterations 0,1; stage 2 = 2,3
    auto bundle = models::ModelBundle::make(cfg.mode, cfg.sizes, cfg.seed);
    training::Trainer trainer(bundle, cfg);

    CHECK(trainer.regime() == losses::Regime::kRegOnlyStage1);
    const auto r_before = snapshot(bundle.recon.params());
    trainer.train_step(batch);
    trainer.train_step(batch);
    // theta untouched during stage 1
    CHECK(bitwise_same(r_before, bundle.recon.params()));

    CHECK(trainer.regime() == losses::Regime::kRegOnlyStage2);
    const auto t_frozen = snapshot(bundle.align->params());
    trainer.train_step(batch);
    trainer.train_step(batch);
    CHECK(bitwise_same(t_frozen, bundle.align->params()));
    CHECK(!bitwise_same(r_before, bundle.recon.params()));
  }
}

TEST_CASE("adam takes no step on zero gradients with zero moments") {
  Rng rng(81);
  models::Conv2d conv = models::Conv2d::make(2, 2, 3, 1, 1, rng);
  models::ParamList params;
  conv.collect("c", params);
  training::AdamGroup group(params, 1e-3);
  const auto before = snapshot(params);
  group.harvest();  // no gradients allocated anywhere
  group.step();
  CHECK(bitwise_same(before, params));
}

TEST_CASE("train: zero iterations returns the initialized checkpoint and empty log") {
  const fs::path root = fs::temp_directory_path() / "mmalign_train_zero";
  fs::remove_all(root);

  // write a miniature dataset
  data::DatasetManifest manifest;
  manifest.height = 32;
  manifest.width = 32;
  manifest.deformation = geometry::DeformationSpec::defaults_for_size(32, 1.0, 1);
  std::vector<data::SlicePair> pairs;
  for (int s = 0; s < 2; ++s) {
    data::StudyEntry e;
    e.study_id = "s" + std::to_string(s);
    e.slice_count = 1;
    manifest.studies.push_back(e);
    manifest.split[s == 0 ? "train" : "val"].push_back(e.study_id);
    auto p = data::generate_phantom_pair(static_cast<std::uint64_t>(s), 32, 5);
    p.study_id = e.study_id;
    pairs.push_back(std::move(p));
  }
  data::write_dataset(manifest, pairs, (root / "ds").string());

  training::TrainConfig cfg = tiny_config(models::TrainingMode::kSingleModal);
  cfg.max_iterations = 0;
  cfg.dataset_root = (root / "ds").string();
  cfg.out_dir = (root / "run").string();
  const auto result = training::train(cfg);
  CHECK(result.log.empty());
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(fs::exists(result.best_checkpoint));
  const auto bundle = models::load_checkpoint(result.final_checkpoint);
  CHECK(bundle.iteration == 0);
  fs::remove_all(root);
}

TEST_CASE("short overfit run decreases the reconstruction loss") {
  // proposed mode on a handful of pairs; the training loss must drop by 50%
  // from its initial moving average
  auto cfg = tiny_config(models::TrainingMode::kProposed);
  cfg.batch_size = 2;
  auto bundle = models::ModelBundle::make(cfg.mode, cfg.sizes, cfg.seed);
  training::Trainer trainer(bundle, cfg);
  const auto pairs = tiny_batch(4, 32);

  std::vector<double> lrec;
  Rng rng(17);
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<data::SlicePair> batch;
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(pairs[static_cast<size_t>(rng.uniform_int(pairs.size()))]);
    lrec.push_back(trainer.train_step(batch).l_rec);
  }
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) head += lrec[static_cast<size_t>(i)];
  for (int i = 0; i < 10; ++i) tail += lrec[lrec.size() - 1 - static_cast<size_t>(i)];
  head /= 10.0;
  tail /= 10.0;
  // losses are negative SSIM: "decreases by 50%" relative to the gap to -1
  const double improvement = (tail - head) / (-1.0 - head);
  CHECK(improvement >= 0.5);
}
