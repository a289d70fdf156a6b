#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmalign/geometry.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::data {

// One training/eval sample. Magnitudes are normalized to [0,1] per slice at
// generation time. truth_misalignment is the field that was applied to the
// reference (warp convention: misaligned = warp(aligned, truth)).
struct SlicePair {
  Tensor target;     // [h,w]
  Tensor reference;  // [h,w]
  std::optional<Tensor> coil_data;           // [coils,2,h,w]
  std::optional<Tensor> truth_misalignment;  // [2,h,w]
  std::string study_id;
  int slice_index = 0;

  int height() const { return target.dim(0); }
  int width() const { return target.dim(1); }
};

struct StudyEntry {
  std::string study_id;
  int slice_count = 0;
  std::vector<std::string> modalities = {"target", "reference"};
  int coil_count = 1;
};

struct DatasetManifest {
  std::vector<StudyEntry> studies;
  std::map<std::string, std::vector<std::string>> split;  // train/val/test -> study ids
  std::uint64_t seed = 0;
  geometry::DeformationSpec deformation;  // spec used for stored misalignment
  int height = 0, width = 0;

  const StudyEntry& study(const std::string& id) const;
  void validate() const;  // disjoint splits, known studies
};

// Shared anatomy rendered through two tissue-intensity lookup tables.
SlicePair generate_phantom_pair(std::uint64_t seed, int size, int tissue_count);

// Warps the reference only; truth_misalignment records the applied field
// (re-injecting replaces the stored truth with the newest field).
SlicePair inject_misalignment(const SlicePair& pair, const geometry::DeformationSpec& spec);

// Warps target and reference with one shared field; a stored truth field is
// carried along by warping it with the same field (first-order composition).
// Coil data is dropped; re-synthesize after augmenting.
SlicePair augment(const SlicePair& pair, const geometry::DeformationSpec& spec);

// Adds smooth, RSS-normalized synthetic coil maps; coil_count == 1 returns
// the pair unchanged.
SlicePair synthesize_multicoil(const SlicePair& pair, int coil_count, std::uint64_t seed);
Tensor synthetic_coil_maps(int coil_count, int h, int w, std::uint64_t seed);  // [coils,2,h,w]

void write_dataset(const DatasetManifest& manifest, const std::vector<SlicePair>& pairs,
                   const std::string& root);

class Dataset {
 public:
  static Dataset open(const std::string& root);

  const DatasetManifest& manifest() const { return manifest_; }
  SlicePair load(const std::string& study_id, int slice_index) const;
  // (study_id, slice_index) pairs of a split, in manifest order.
  std::vector<std::pair<std::string, int>> slices_of(const std::string& split_name) const;

 private:
  std::string root_;
  DatasetManifest manifest_;
};

}  // namespace mmalign::data
