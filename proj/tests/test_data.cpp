#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmalign/data.hpp"
#include "mmalign/rng.hpp"

using namespace mmalign;
namespace fs = std::filesystem;

namespace {

fs::path temp_root(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("generate_phantom_pair: determinism, shared support, correlation") {
  const auto a = data::generate_phantom_pair(7, 64, 7);
  const auto b = data::generate_phantom_pair(7, 64, 7);
  CHECK(a.target.bitwise_equal(b.target));
  CHECK(a.reference.bitwise_equal(b.reference));

  // identical support masks
  for (std::int64_t i = 0; i < a.target.numel(); ++i)
    CHECK((a.target[i] != 0.0) == (a.reference[i] != 0.0));

  // magnitudes normalized to [0,1]
  CHECK(a.target.min() >= 0.0);
  CHECK(a.target.max() <= 1.0 + 1e-12);
  CHECK(a.target.max() == doctest::Approx(1.0));

  // positive but imperfect correlation between contrasts on tissue pixels
  std::vector<double> xs, ys;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = data::generate_phantom_pair(seed, 64, 7);
    for (std::int64_t i = 0; i < p.target.numel(); ++i)
      if (p.target[i] > 0.0) {
        xs.push_back(p.target[i]);
        ys.push_back(p.reference[i]);
      }
  }
  const double r = pearson(xs, ys);
  CHECK(r > 0.0);
  CHECK(r < 0.99);

  CHECK_THROWS(data::generate_phantom_pair(0, 16, 7));
  CHECK_THROWS(data::generate_phantom_pair(0, 64, 2));
}

TEST_CASE("inject_misalignment: sigma 0 no-op, sigma 1 moves, truth recorded") {
  auto pair = data::generate_phantom_pair(3, 64, 6);
  pair.study_id = "s0";

  const auto zero_spec = geometry::DeformationSpec::defaults_for_size(64, 0.0, 9);
  const auto same = data::inject_misalignment(pair, zero_spec);
  CHECK(same.reference.bitwise_equal(pair.reference));
  REQUIRE(same.truth_misalignment.has_value());
  CHECK(same.truth_misalignment->abs_max() == 0.0);

  const auto spec = geometry::DeformationSpec::defaults_for_size(64, 1.0, 9);
  const auto moved = data::inject_misalignment(pair, spec);
  REQUIRE(moved.truth_misalignment.has_value());
  CHECK(geometry::endpoint_error(*moved.truth_misalignment, Tensor({2, 64, 64})) > 0.0);
  CHECK(!moved.reference.bitwise_equal(pair.reference));
  // target untouched
  CHECK(moved.target.bitwise_equal(pair.target));

  // double injection: stored truth is the second field only
  const auto spec2 = geometry::DeformationSpec::defaults_for_size(64, 1.0, 77);
  const auto twice = data::inject_misalignment(moved, spec2);
  const Tensor expect_second = geometry::random_deformation(spec2, 64, 64);
  CHECK(twice.truth_misalignment->bitwise_equal(expect_second));
  // and the reference is the composition of both warps
  const Tensor manual = geometry::warp(moved.reference, expect_second);
  CHECK(twice.reference.bitwise_equal(manual));
}

TEST_CASE("augment: identity at sigma 0, same field on both, truth consistency") {
  auto pair = data::generate_phantom_pair(4, 64, 6);
  const auto zero_spec = geometry::DeformationSpec::defaults_for_size(64, 0.0, 11);
  const auto same = data::augment(pair, zero_spec);
  CHECK(same.target.bitwise_equal(pair.target));
  CHECK(same.reference.bitwise_equal(pair.reference));

  // the same sampled field warps target and reference: check via coordinate images
  const auto spec = geometry::DeformationSpec::defaults_for_size(64, 0.5, 12);
  data::SlicePair grid;
  grid.target = Tensor({64, 64});
  grid.reference = Tensor({64, 64});
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      grid.target.at(r, c) = r * 64 + c;
      grid.reference.at(r, c) = r * 64 + c;
    }
  const auto warped = data::augment(grid, spec);
  CHECK(warped.target.bitwise_equal(warped.reference));

  // warp-consistency: warping the augmented *target geometry* by the carried
  // truth field lands on the augmented reference geometry (small-deformation
  // composition, interpolation-level tolerance).
  const auto mis_spec = geometry::DeformationSpec::defaults_for_size(64, 0.2, 13);
  auto aug_spec = geometry::DeformationSpec::defaults_for_size(64, 0.2, 14);
  data::SlicePair coords;
  coords.target = Tensor({64, 64});
  coords.reference = Tensor({64, 64});
  // use smooth coordinate ramps to measure displacement error in pixels
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      coords.target.at(r, c) = c;
      coords.reference.at(r, c) = c;
    }
  auto mis = data::inject_misalignment(coords, mis_spec);
  auto aug = data::augment(mis, aug_spec);
  const Tensor mapped = geometry::warp(aug.target, *aug.truth_misalignment);
  double err = 0.0;
  int count = 0;
  for (int r = 8; r < 56; ++r)
    for (int c = 8; c < 56; ++c) {
      err += std::fabs(mapped.at(r, c) - aug.reference.at(r, c));
      ++count;
    }
  CHECK(err / count < 2e-2);
}

TEST_CASE("synthesize_multicoil: RSS identity, single coil, smooth maps") {
  auto pair = data::generate_phantom_pair(5, 64, 6);

  const auto same = data::synthesize_multicoil(pair, 1, 3);
  CHECK(!same.coil_data.has_value());

  const auto multi = data::synthesize_multicoil(pair, 4, 3);
  REQUIRE(multi.coil_data.has_value());
  const Tensor& coils = *multi.coil_data;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      double rss = 0.0;
      for (int k = 0; k < 4; ++k)
        rss += coils.at(k, 0, r, c) * coils.at(k, 0, r, c) +
               coils.at(k, 1, r, c) * coils.at(k, 1, r, c);
      CHECK(std::fabs(std::sqrt(rss) - pair.target.at(r, c)) < 1e-5);
    }

  // maps spatially smooth: bounded finite differences
  const Tensor maps = data::synthetic_coil_maps(4, 64, 64, 3);
  double max_grad = 0.0;
  for (int k = 0; k < 4; ++k)
    for (int p = 0; p < 2; ++p)
      for (int r = 0; r + 1 < 64; ++r)
        for (int c = 0; c + 1 < 64; ++c) {
          max_grad = std::max(max_grad, std::fabs(maps.at(k, p, r + 1, c) - maps.at(k, p, r, c)));
          max_grad = std::max(max_grad, std::fabs(maps.at(k, p, r, c + 1) - maps.at(k, p, r, c)));
        }
  CHECK(max_grad < 0.1);
}

TEST_CASE("dataset write/read round trip and error paths") {
  const fs::path root = temp_root("mmalign_test_ds");

  data::DatasetManifest manifest;
  manifest.height = 64;
  manifest.width = 64;
  manifest.seed = 5;
  manifest.deformation = geometry::DeformationSpec::defaults_for_size(64, 1.0, 5);
  std::vector<data::SlicePair> pairs;
  for (int s = 0; s < 3; ++s) {
    data::StudyEntry entry;
    entry.study_id = "s" + std::to_string(s);
    entry.slice_count = 2;
    manifest.studies.push_back(entry);
    manifest.split[s == 0 ? "train" : s == 1 ? "val" : "test"].push_back(entry.study_id);
    for (int i = 0; i < 2; ++i) {
      auto p = data::generate_phantom_pair(static_cast<std::uint64_t>(s * 2 + i), 64, 5);
      p.study_id = entry.study_id;
      p.slice_index = i;
      p = data::inject_misalignment(p, geometry::DeformationSpec::defaults_for_size(
                                           64, 1.0, static_cast<std::uint64_t>(s * 2 + i)));
      pairs.push_back(std::move(p));
    }
  }
  data::write_dataset(manifest, pairs, root.string());

  const auto ds = data::Dataset::open(root.string());
  CHECK(ds.manifest().studies.size() == 3);
  CHECK(ds.slices_of("train").size() == 2);
  const auto loaded = ds.load("s1", 1);
  const auto& original = pairs[3];
  REQUIRE(loaded.target.same_shape(original.target));
  for (std::int64_t i = 0; i < loaded.target.numel(); ++i) {
    CHECK(loaded.target[i] == doctest::Approx(static_cast<float>(original.target[i])));
    CHECK(loaded.reference[i] == doctest::Approx(static_cast<float>(original.reference[i])));
  }
  REQUIRE(loaded.truth_misalignment.has_value());

  // missing file: error names the study
  fs::remove(root / "s2" / "0001_target.f32");
  try {
    ds.load("s2", 1);
    CHECK(false);
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("s2") != std::string::npos);
  }

  // split disjointness enforced on read
  {
    std::ifstream f(root / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    f.close();
    const auto pos = text.find("\"val\": [\n      \"s1\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("\"val\": [\n      \"s1\"").size(), "\"val\": [\n      \"s0\"");
    std::ofstream out(root / "manifest.json");
    out << text;
  }
  CHECK_THROWS(data::Dataset::open(root.string()));

  fs::remove_all(root);
}
