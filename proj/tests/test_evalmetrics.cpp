#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mmalign/data.hpp"
#include "mmalign/evalmetrics.hpp"
#include "mmalign/rng.hpp"
#include "mmalign/training.hpp"

using namespace mmalign;
namespace fs = std::filesystem;

TEST_CASE("psnr: sentinel, closed form, hand MSE") {
  Tensor a({8, 8});
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = 0.3 + 0.01 * static_cast<double>(i);
  CHECK(std::isinf(evalmetrics::psnr(a, a, 1.0)));

  Tensor b = a;
  for (std::int64_t i = 0; i < b.numel(); ++i) b[i] += 0.1;
  CHECK(evalmetrics::psnr(b, a, 1.0) == doctest::Approx(20.0).epsilon(1e-12));

  Rng rng(91);
  Tensor x({6, 6}), y({6, 6});
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    x[i] = rng.uniform(0.0, 1.0);
    y[i] = rng.uniform(0.0, 1.0);
  }
  double mse = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
  mse /= static_cast<double>(x.numel());
  const double want = 10.0 * std::log10(1.0 / mse);
  CHECK(std::fabs(evalmetrics::psnr(x, y, 1.0) - want) < 1e-9);
}

TEST_CASE("paired t-test: frozen oracle, symmetry, degenerate variance") {
  const std::vector<double> a = {0.12, 0.25, 0.31, 0.45, 0.52, 0.61,
                                 0.72, 0.81, 0.93, 1.01, 1.12, 1.25};
  const std::vector<double> d = {0.05, -0.02, 0.08, 0.01, -0.03, 0.06,
                                 0.02, 0.09, -0.01, 0.04, 0.07, 0.03};
  std::vector<double> b(a.size());
  for (size_t i = 0; i < a.size(); ++i) b[i] = a[i] - d[i];

  const auto res = evalmetrics::paired_t_test(a, b);
  CHECK(res.t == doctest::Approx(2.845055293424278).epsilon(1e-9));
  CHECK(res.p == doctest::Approx(0.015937086466279424).epsilon(1e-9));

  const auto swapped = evalmetrics::paired_t_test(b, a);
  CHECK(swapped.t == doctest::Approx(-res.t).epsilon(1e-12));
  CHECK(swapped.p == doctest::Approx(res.p).epsilon(1e-12));

  // constant shift: zero-variance differences are degenerate
  std::vector<double> c(a.size());
  for (size_t i = 0; i < a.size(); ++i) c[i] = a[i] + 1.0;
  CHECK_THROWS(evalmetrics::paired_t_test(c, a));
  CHECK_THROWS(evalmetrics::paired_t_test({1.0}, {2.0}));
}

TEST_CASE("method report aggregation averages slices within studies first") {
  std::vector<evalmetrics::SliceMetrics> slices = {
      {"s1", 0, 30.0, 0.90}, {"s1", 1, 34.0, 0.94}, {"s2", 0, 40.0, 0.98}};
  const auto rep = evalmetrics::build_method_report(slices);
  REQUIRE(rep.per_subject.size() == 2);
  CHECK(rep.per_subject[0].psnr == doctest::Approx(32.0));
  CHECK(rep.per_subject[1].psnr == doctest::Approx(40.0));
  CHECK(rep.aggregate.psnr_mean_subject == doctest::Approx(36.0));
  CHECK(rep.aggregate.psnr_mean_slice == doctest::Approx((30.0 + 34.0 + 40.0) / 3));

  // permutation invariance of slice order
  std::vector<evalmetrics::SliceMetrics> shuffled = {slices[2], slices[0], slices[1]};
  const auto rep2 = evalmetrics::build_method_report(shuffled);
  CHECK(rep2.aggregate.psnr_mean_subject == doctest::Approx(rep.aggregate.psnr_mean_subject));
  CHECK(rep2.aggregate.psnr_std_subject == doctest::Approx(rep.aggregate.psnr_std_subject));
}

TEST_CASE("gain histogram: zeros, hand case, fraction bounds") {
  evalmetrics::MethodReport a, b;
  for (int i = 0; i < 3; ++i) {
    const std::string id = "s" + std::to_string(i);
    a.per_subject.push_back({id, 30.0 + i, 0.9});
    b.per_subject.push_back({id, 30.0 + i, 0.9});
  }
  const auto zero = evalmetrics::gain_histogram(a, b);
  CHECK(zero.fraction_positive_psnr == 0.0);
  for (double g : zero.psnr_gain) CHECK(g == 0.0);

  a.per_subject[0].psnr = 31.5;  // +1.5
  a.per_subject[1].psnr = 30.5;  // -0.5
  a.per_subject[2].psnr = 33.0;  // +1.0
  const auto gain = evalmetrics::gain_histogram(a, b);
  CHECK(gain.psnr_gain[0] == doctest::Approx(1.5));
  CHECK(gain.psnr_gain[1] == doctest::Approx(-0.5));
  CHECK(gain.psnr_gain[2] == doctest::Approx(1.0));
  CHECK(gain.fraction_positive_psnr == doctest::Approx(2.0 / 3.0));
  CHECK(gain.fraction_positive_psnr >= 0.0);
  CHECK(gain.fraction_positive_psnr <= 1.0);

  evalmetrics::MethodReport c;
  c.per_subject.push_back({"other", 1.0, 1.0});
  CHECK_THROWS(evalmetrics::gain_histogram(a, c));
}

namespace {

std::string write_tiny_dataset(const std::string& name, double sigma) {
  const fs::path root = fs::temp_directory_path() / name;
  fs::remove_all(root);
  data::DatasetManifest manifest;
  manifest.height = 32;
  manifest.width = 32;
  manifest.deformation = geometry::DeformationSpec::defaults_for_size(32, sigma, 2);
  std::vector<data::SlicePair> pairs;
  for (int s = 0; s < 3; ++s) {
    data::StudyEntry e;
    e.study_id = "t" + std::to_string(s);
    e.slice_count = 2;
    manifest.studies.push_back(e);
    manifest.split["test"].push_back(e.study_id);
    for (int i = 0; i < 2; ++i) {
      auto p = data::generate_phantom_pair(static_cast<std::uint64_t>(10 * s + i), 32, 5);
      p.study_id = e.study_id;
      p.slice_index = i;
      if (sigma > 0.0)
        p = data::inject_misalignment(
            p, geometry::DeformationSpec::defaults_for_size(
                   32, sigma, static_cast<std::uint64_t>(10 * s + i)));
      pairs.push_back(std::move(p));
    }
  }
  data::write_dataset(manifest, pairs, root.string());
  return root.string();
}

}  // namespace

TEST_CASE("evaluate: baseline row, determinism, report round trip") {
  const std::string root = write_tiny_dataset("mmalign_eval_ds", 1.0);
  const auto dataset = data::Dataset::open(root);

  models::ModelSizes sizes;
  sizes.recon_cascades = 2;
  sizes.recon_base = 5;
  sizes.recon_levels = 2;
  sizes.align_base = 5;
  sizes.align_levels = 2;
  sizes.synth_base = 5;
  sizes.synth_levels = 2;
  sizes.disc_base = 5;
  sizes.disc_depth = 2;
  const auto bundle = models::ModelBundle::make(models::TrainingMode::kProposed, sizes, 4);

  config::MaskConfig mask;
  const auto rep1 = evalmetrics::evaluate(bundle, dataset, "test", mask, 5);
  CHECK(rep1.methods.count("zero_filled") == 1);
  CHECK(rep1.methods.count("proposed") == 1);
  CHECK(rep1.methods.at("proposed").per_slice.size() == 6);
  CHECK(rep1.methods.at("proposed").per_subject.size() == 3);

  const auto rep2 = evalmetrics::evaluate(bundle, dataset, "test", mask, 5);
  CHECK(rep1.to_json() == rep2.to_json());

  const auto back = evalmetrics::MetricsReport::from_json(rep1.to_json());
  CHECK(back.to_json() == rep1.to_json());

  CHECK_THROWS(evalmetrics::evaluate(bundle, dataset, "train", mask, 5));  // empty split

  fs::remove_all(root);
}

TEST_CASE("misalignment sweep: sigma 0 equals plain evaluate, single-modal row constant") {
  const std::string root = write_tiny_dataset("mmalign_sweep_ds", 0.0);
  const auto dataset = data::Dataset::open(root);

  models::ModelSizes sizes;
  sizes.recon_cascades = 1;
  sizes.recon_base = 4;
  sizes.recon_levels = 2;
  sizes.align_base = 4;
  sizes.align_levels = 2;
  sizes.synth_base = 4;
  sizes.synth_levels = 2;
  sizes.disc_base = 4;
  sizes.disc_depth = 1;
  const auto single = models::ModelBundle::make(models::TrainingMode::kSingleModal, sizes, 6);
  const auto multi = models::ModelBundle::make(models::TrainingMode::kMultiModal, sizes, 6);

  config::MaskConfig mask;
  const std::map<std::string, const models::ModelBundle*> bundles = {
      {"single_modal", &single}, {"multi_modal", &multi}};
  const auto sweep =
      evalmetrics::misalignment_sweep(bundles, {0.0, 1.0}, dataset, "test", mask, 7);
  REQUIRE(sweep.sweep.size() == 2);

  const auto plain = evalmetrics::evaluate(multi, dataset, "test", mask, 7);
  CHECK(sweep.sweep[0].methods.at("multi_modal").first ==
        doctest::Approx(plain.methods.at("multi_modal").aggregate.psnr_mean_slice)
            .epsilon(1e-12));

  // the single-modal row never sees the reference: exactly constant across sigma
  CHECK(sweep.sweep[0].methods.at("single_modal").first ==
        sweep.sweep[1].methods.at("single_modal").first);
  CHECK(sweep.sweep[0].methods.at("single_modal").second ==
        sweep.sweep[1].methods.at("single_modal").second);

  fs::remove_all(root);
}
