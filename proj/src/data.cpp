#include "mmalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmalign/rng.hpp"

namespace mmalign::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = (ca * dx + sa * dy) / rx;
    const double v = (-sa * dx + ca * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

// 3x3 binomial blur, same kernel for both contrasts so supports stay equal.
Tensor blur3(const Tensor& img) {
  const int h = img.dim(0), w = img.dim(1);
  Tensor out({h, w});
  static const double k[3] = {0.25, 0.5, 0.25};
  Tensor tmp({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -1; t <= 1; ++t) {
        const int jj = std::clamp(j + t, 0, w - 1);
        acc += k[t + 1] * img.at(i, jj);
      }
      tmp.at(i, j) = acc;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -1; t <= 1; ++t) {
        const int ii = std::clamp(i + t, 0, h - 1);
        acc += k[t + 1] * tmp.at(ii, j);
      }
      out.at(i, j) = acc;
    }
  return out;
}

void normalize01(Tensor& img) {
  const double m = img.max();
  if (m > 0.0) img.scale(1.0 / m);
}

void write_f32_file(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Tensor read_f32_file(const std::string& path, std::vector<int> shape) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("dataset: missing file " + path);
  Tensor t(std::move(shape));
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("dataset: truncated file " + path);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = buf[static_cast<size_t>(i)];
  return t;
}

// Complex arrays: interleaved re/im float32 per pixel, row-major, from the
// plane-separated [*,2,h,w] layout used in memory.
void write_c64_file(const std::string& path, const Tensor& t) {
  if (t.ndim() != 4 || t.dim(1) != 2) throw std::invalid_argument("write_c64: expected [c,2,h,w]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
  const int coils = t.dim(0), h = t.dim(2), w = t.dim(3);
  std::vector<float> buf;
  buf.reserve(static_cast<size_t>(t.numel()));
  for (int c = 0; c < coils; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        buf.push_back(static_cast<float>(t.at(c, 0, i, j)));
        buf.push_back(static_cast<float>(t.at(c, 1, i, j)));
      }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Tensor read_c64_file(const std::string& path, int coils, int h, int w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("dataset: missing file " + path);
  std::vector<float> buf(static_cast<size_t>(coils) * 2 * h * w);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("dataset: truncated file " + path);
  Tensor t({coils, 2, h, w});
  size_t k = 0;
  for (int c = 0; c < coils; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        t.at(c, 0, i, j) = buf[k++];
        t.at(c, 1, i, j) = buf[k++];
      }
  return t;
}

std::string slice_stem(int slice_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", slice_index);
  return buf;
}

json deformation_to_json(const geometry::DeformationSpec& d) {
  return json{{"rotation_range", d.rotation_range},
              {"translation_range", d.translation_range},
              {"grid_size", d.grid_size},
              {"control_displacement_range", d.control_displacement_range},
              {"sigma", d.sigma},
              {"seed", d.seed}};
}

geometry::DeformationSpec deformation_from_json(const json& j) {
  geometry::DeformationSpec d;
  d.rotation_range = j.at("rotation_range").get<double>();
  d.translation_range = j.at("translation_range").get<double>();
  d.grid_size = j.at("grid_size").get<int>();
  d.control_displacement_range = j.at("control_displacement_range").get<double>();
  d.sigma = j.at("sigma").get<double>();
  d.seed = j.at("seed").get<std::uint64_t>();
  return d;
}

}  // namespace

const StudyEntry& DatasetManifest::study(const std::string& id) const {
  for (const auto& s : studies)
    if (s.study_id == id) return s;
  throw std::runtime_error("dataset: unknown study " + id);
}

void DatasetManifest::validate() const {
  std::set<std::string> known;
  for (const auto& s : studies) {
    if (!known.insert(s.study_id).second)
      throw std::runtime_error("dataset manifest: duplicate study " + s.study_id);
  }
  std::set<std::string> assigned;
  for (const auto& [name, ids] : split) {
    for (const auto& id : ids) {
      if (!known.count(id))
        throw std::runtime_error("dataset manifest: split references unknown study " + id);
      if (!assigned.insert(id).second)
        throw std::runtime_error("dataset manifest: study " + id +
                                 " assigned to more than one split");
    }
  }
}

SlicePair generate_phantom_pair(std::uint64_t seed, int size, int tissue_count) {
  if (size < 32) throw std::invalid_argument("generate_phantom_pair: size must be >= 32");
  if (tissue_count < 3) throw std::invalid_argument("generate_phantom_pair: need >= 3 tissues");
  Rng rng(seed);

  const double s = size;
  Ellipse head;
  head.cy = (0.5 + 0.03 * rng.uniform(-1.0, 1.0)) * s;
  head.cx = (0.5 + 0.03 * rng.uniform(-1.0, 1.0)) * s;
  head.ry = rng.uniform(0.36, 0.44) * s;
  head.rx = rng.uniform(0.30, 0.40) * s;
  head.angle = rng.uniform(-0.15, 0.15);

  std::vector<Ellipse> blobs;
  for (int k = 0; k < tissue_count; ++k) {
    Ellipse e;
    const double rad = rng.uniform(0.0, 0.55);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    e.cy = head.cy + rad * head.ry * std::sin(theta);
    e.cx = head.cx + rad * head.rx * std::cos(theta);
    e.ry = rng.uniform(0.06, 0.20) * s;
    e.rx = rng.uniform(0.06, 0.20) * s;
    e.angle = rng.uniform(0.0, M_PI);
    blobs.push_back(e);
  }

  // Per-tissue base values; the reference contrast is a monotone remap with
  // jitter, so the two contrasts correlate without being identical.
  std::vector<double> v_tgt(static_cast<size_t>(tissue_count) + 1);
  std::vector<double> v_ref(static_cast<size_t>(tissue_count) + 1);
  for (int k = 0; k <= tissue_count; ++k) {
    const double v = rng.uniform(0.25, 0.95);
    const double jitter = rng.uniform(-1.0, 1.0);
    v_tgt[static_cast<size_t>(k)] = v;
    v_ref[static_cast<size_t>(k)] =
        std::clamp(0.12 + 0.8 * std::pow(v, 1.6) + 0.1 * jitter, 0.08, 1.0);
  }

  Tensor tgt({size, size});
  Tensor ref({size, size});
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      if (!head.contains(i, j)) continue;
      int label = 0;  // head base tissue
      for (int k = 0; k < tissue_count; ++k)
        if (blobs[static_cast<size_t>(k)].contains(i, j)) label = k + 1;
      tgt.at(i, j) = v_tgt[static_cast<size_t>(label)];
      ref.at(i, j) = v_ref[static_cast<size_t>(label)];
    }

  tgt = blur3(tgt);
  ref = blur3(ref);

  // Multiplicative noise preserves the (shared) support exactly.
  for (std::int64_t i = 0; i < tgt.numel(); ++i) {
    const double n1 = rng.normal();
    const double n2 = rng.normal();
    if (tgt[i] > 0.0) tgt[i] *= std::max(0.0, 1.0 + 0.02 * n1);
    if (ref[i] > 0.0) ref[i] *= std::max(0.0, 1.0 + 0.02 * n2);
  }
  normalize01(tgt);
  normalize01(ref);

  SlicePair pair;
  pair.target = std::move(tgt);
  pair.reference = std::move(ref);
  return pair;
}

SlicePair inject_misalignment(const SlicePair& pair, const geometry::DeformationSpec& spec) {
  spec.validate();
  SlicePair out = pair;
  const Tensor f = geometry::random_deformation(spec, pair.height(), pair.width());
  out.reference = geometry::warp(pair.reference, f);
  out.truth_misalignment = f;
  return out;
}

SlicePair augment(const SlicePair& pair, const geometry::DeformationSpec& spec) {
  spec.validate();
  SlicePair out = pair;
  const Tensor a = geometry::random_deformation(spec, pair.height(), pair.width());
  out.target = geometry::warp(pair.target, a);
  out.reference = geometry::warp(pair.reference, a);
  if (pair.truth_misalignment)
    out.truth_misalignment = geometry::warp(*pair.truth_misalignment, a);
  out.coil_data.reset();
  return out;
}

Tensor synthetic_coil_maps(int coil_count, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor maps({coil_count, 2, h, w});
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  const double ring = 0.6 * std::max(h, w);
  const double width2 = std::pow(0.55 * std::max(h, w), 2.0);
  std::vector<double> phase_x(static_cast<size_t>(coil_count));
  std::vector<double> phase_y(static_cast<size_t>(coil_count));
  std::vector<double> angle(static_cast<size_t>(coil_count));
  for (int c = 0; c < coil_count; ++c) {
    angle[static_cast<size_t>(c)] = 2.0 * M_PI * c / coil_count + rng.uniform(-0.1, 0.1);
    phase_x[static_cast<size_t>(c)] = rng.uniform(-0.02, 0.02);
    phase_y[static_cast<size_t>(c)] = rng.uniform(-0.02, 0.02);
  }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double rss = 0.0;
      std::vector<double> re(static_cast<size_t>(coil_count)), im(static_cast<size_t>(coil_count));
      for (int c = 0; c < coil_count; ++c) {
        const double ccy = cy + ring * std::sin(angle[static_cast<size_t>(c)]);
        const double ccx = cx + ring * std::cos(angle[static_cast<size_t>(c)]);
        const double d2 = (i - ccy) * (i - ccy) + (j - ccx) * (j - ccx);
        const double mag = std::exp(-d2 / (2.0 * width2));
        const double ph = phase_x[static_cast<size_t>(c)] * j + phase_y[static_cast<size_t>(c)] * i;
        re[static_cast<size_t>(c)] = mag * std::cos(ph);
        im[static_cast<size_t>(c)] = mag * std::sin(ph);
        rss += mag * mag;
      }
      rss = std::sqrt(rss);
      for (int c = 0; c < coil_count; ++c) {
        maps.at(c, 0, i, j) = re[static_cast<size_t>(c)] / rss;
        maps.at(c, 1, i, j) = im[static_cast<size_t>(c)] / rss;
      }
    }
  return maps;
}

SlicePair synthesize_multicoil(const SlicePair& pair, int coil_count, std::uint64_t seed) {
  if (coil_count == 1) return pair;
  if (coil_count < 1) throw std::invalid_argument("synthesize_multicoil: coil_count must be >= 1");
  const int h = pair.height(), w = pair.width();
  const Tensor maps = synthetic_coil_maps(coil_count, h, w, seed);
  SlicePair out = pair;
  Tensor coil({coil_count, 2, h, w});
  for (int c = 0; c < coil_count; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        coil.at(c, 0, i, j) = maps.at(c, 0, i, j) * pair.target.at(i, j);
        coil.at(c, 1, i, j) = maps.at(c, 1, i, j) * pair.target.at(i, j);
      }
  out.coil_data = std::move(coil);
  return out;
}

void write_dataset(const DatasetManifest& manifest, const std::vector<SlicePair>& pairs,
                   const std::string& root) {
  manifest.validate();
  fs::create_directories(root);

  json j;
  json studies = json::array();
  for (const auto& s : manifest.studies)
    studies.push_back(json{{"study_id", s.study_id},
                           {"slice_count", s.slice_count},
                           {"modalities", s.modalities},
                           {"coil_count", s.coil_count}});
  j["studies"] = studies;
  j["split"] = manifest.split;
  j["seed"] = manifest.seed;
  j["deformation"] = deformation_to_json(manifest.deformation);
  j["height"] = manifest.height;
  j["width"] = manifest.width;

  for (const auto& p : pairs) {
    const fs::path dir = fs::path(root) / p.study_id;
    fs::create_directories(dir);
    const std::string stem = slice_stem(p.slice_index);
    write_f32_file((dir / (stem + "_target.f32")).string(), p.target);
    write_f32_file((dir / (stem + "_reference.f32")).string(), p.reference);
    if (p.truth_misalignment)
      geometry::write_field((dir / (stem + "_misalign.field")).string(), *p.truth_misalignment);
    if (p.coil_data)
      write_c64_file((dir / (stem + "_coils.c64")).string(), *p.coil_data);
  }

  std::ofstream f(fs::path(root) / "manifest.json");
  if (!f) throw std::runtime_error("write_dataset: cannot write manifest under " + root);
  f << j.dump(2) << "\n";
}

Dataset Dataset::open(const std::string& root) {
  std::ifstream f(fs::path(root) / "manifest.json");
  if (!f) throw std::runtime_error("dataset: missing manifest.json under " + root);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("dataset: corrupt manifest: ") + e.what());
  }

  Dataset d;
  d.root_ = root;
  for (const auto& s : j.at("studies")) {
    StudyEntry e;
    e.study_id = s.at("study_id").get<std::string>();
    e.slice_count = s.at("slice_count").get<int>();
    e.modalities = s.at("modalities").get<std::vector<std::string>>();
    e.coil_count = s.at("coil_count").get<int>();
    d.manifest_.studies.push_back(std::move(e));
  }
  d.manifest_.split =
      j.at("split").get<std::map<std::string, std::vector<std::string>>>();
  d.manifest_.seed = j.at("seed").get<std::uint64_t>();
  d.manifest_.deformation = deformation_from_json(j.at("deformation"));
  d.manifest_.height = j.at("height").get<int>();
  d.manifest_.width = j.at("width").get<int>();
  d.manifest_.validate();
  return d;
}

SlicePair Dataset::load(const std::string& study_id, int slice_index) const {
  const StudyEntry& entry = manifest_.study(study_id);
  if (slice_index < 0 || slice_index >= entry.slice_count)
    throw std::runtime_error("dataset: slice index out of range for study " + study_id);
  const fs::path dir = fs::path(root_) / study_id;
  const std::string stem = slice_stem(slice_index);
  SlicePair p;
  p.study_id = study_id;
  p.slice_index = slice_index;
  const std::vector<int> shape = {manifest_.height, manifest_.width};
  try {
    p.target = read_f32_file((dir / (stem + "_target.f32")).string(), shape);
    p.reference = read_f32_file((dir / (stem + "_reference.f32")).string(), shape);
  } catch (const std::exception& e) {
    throw std::runtime_error("dataset: study " + study_id + ": " + e.what());
  }
  const fs::path mis = dir / (stem + "_misalign.field");
  if (fs::exists(mis)) p.truth_misalignment = geometry::read_field(mis.string());
  const fs::path coils = dir / (stem + "_coils.c64");
  if (fs::exists(coils))
    p.coil_data = read_c64_file(coils.string(), entry.coil_count, manifest_.height,
                                manifest_.width);
  return p;
}

std::vector<std::pair<std::string, int>> Dataset::slices_of(const std::string& split_name) const {
  auto it = manifest_.split.find(split_name);
  if (it == manifest_.split.end())
    throw std::runtime_error("dataset: unknown split " + split_name);
  std::vector<std::pair<std::string, int>> out;
  for (const auto& id : it->second) {
    const StudyEntry& e = manifest_.study(id);
    for (int s = 0; s < e.slice_count; ++s) out.emplace_back(id, s);
  }
  return out;
}

}  // namespace mmalign::data
