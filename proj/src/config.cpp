#include "mmalign/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mmalign::config {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

json to_json_obj(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["dataset"] = {{"root", c.dataset.root},
                  {"size", c.dataset.size},
                  {"studies_train", c.dataset.studies_train},
                  {"studies_val", c.dataset.studies_val},
                  {"studies_test", c.dataset.studies_test},
                  {"slices_per_study", c.dataset.slices_per_study},
                  {"tissue_count", c.dataset.tissue_count},
                  {"coil_count", c.dataset.coil_count},
                  {"misalignment_sigma", c.dataset.misalignment_sigma}};
  j["mask"] = {{"pattern", kspace::to_string(c.mask.pattern)},
               {"acceleration", c.mask.acceleration},
               {"low_freq_fraction", c.mask.low_freq_fraction}};
  j["train"] = {{"mode", c.train.mode},
                {"batch_size", c.train.batch_size},
                {"max_iterations", c.train.max_iterations},
                {"validation_interval", c.train.validation_interval},
                {"augment", c.train.augment},
                {"augment_sigma", c.train.augment_sigma},
                {"lambda_smooth", c.train.weights.lambda_smooth},
                {"alpha_reg", c.train.weights.alpha_reg},
                {"beta_adv", c.train.weights.beta_adv},
                {"learning_rate", c.train.weights.learning_rate}};
  j["model"] = {{"recon_cascades", c.model.recon_cascades},
                {"recon_base", c.model.recon_base},
                {"recon_levels", c.model.recon_levels},
                {"align_base", c.model.align_base},
                {"align_levels", c.model.align_levels},
                {"synth_base", c.model.synth_base},
                {"synth_levels", c.model.synth_levels},
                {"disc_base", c.model.disc_base},
                {"disc_depth", c.model.disc_depth}};
  j["eval"] = {{"split", c.eval.split},
               {"checkpoint", c.eval.checkpoint},
               {"sweep_sigmas", c.eval.sweep_sigmas}};
  return j;
}

ExperimentConfig from_json_obj(const json& j) {
  check_keys(j, {"seed", "dataset", "mask", "train", "model", "eval"}, "root");
  ExperimentConfig c;
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d,
               {"root", "size", "studies_train", "studies_val", "studies_test",
                "slices_per_study", "tissue_count", "coil_count", "misalignment_sigma"},
               "dataset");
    if (d.contains("root")) c.dataset.root = d.at("root").get<std::string>();
    if (d.contains("size")) c.dataset.size = d.at("size").get<int>();
    if (d.contains("studies_train")) c.dataset.studies_train = d.at("studies_train").get<int>();
    if (d.contains("studies_val")) c.dataset.studies_val = d.at("studies_val").get<int>();
    if (d.contains("studies_test")) c.dataset.studies_test = d.at("studies_test").get<int>();
    if (d.contains("slices_per_study"))
      c.dataset.slices_per_study = d.at("slices_per_study").get<int>();
    if (d.contains("tissue_count")) c.dataset.tissue_count = d.at("tissue_count").get<int>();
    if (d.contains("coil_count")) c.dataset.coil_count = d.at("coil_count").get<int>();
    if (d.contains("misalignment_sigma"))
      c.dataset.misalignment_sigma = d.at("misalignment_sigma").get<double>();
  }
  if (j.contains("mask")) {
    const json& m = j.at("mask");
    check_keys(m, {"pattern", "acceleration", "low_freq_fraction"}, "mask");
    if (m.contains("pattern"))
      c.mask.pattern = kspace::mask_pattern_from_string(m.at("pattern").get<std::string>());
    if (m.contains("acceleration")) c.mask.acceleration = m.at("acceleration").get<int>();
    if (m.contains("low_freq_fraction"))
      c.mask.low_freq_fraction = m.at("low_freq_fraction").get<double>();
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"mode", "batch_size", "max_iterations", "validation_interval", "augment",
                "augment_sigma", "lambda_smooth", "alpha_reg", "beta_adv", "learning_rate"},
               "train");
    if (t.contains("mode")) c.train.mode = t.at("mode").get<std::string>();
    if (t.contains("batch_size")) c.train.batch_size = t.at("batch_size").get<int>();
    if (t.contains("max_iterations"))
      c.train.max_iterations = t.at("max_iterations").get<std::int64_t>();
    if (t.contains("validation_interval"))
      c.train.validation_interval = t.at("validation_interval").get<int>();
    if (t.contains("augment")) c.train.augment = t.at("augment").get<bool>();
    if (t.contains("augment_sigma")) c.train.augment_sigma = t.at("augment_sigma").get<double>();
    if (t.contains("lambda_smooth"))
      c.train.weights.lambda_smooth = t.at("lambda_smooth").get<double>();
    if (t.contains("alpha_reg")) c.train.weights.alpha_reg = t.at("alpha_reg").get<double>();
    if (t.contains("beta_adv")) c.train.weights.beta_adv = t.at("beta_adv").get<double>();
    if (t.contains("learning_rate"))
      c.train.weights.learning_rate = t.at("learning_rate").get<double>();
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m,
               {"recon_cascades", "recon_base", "recon_levels", "align_base", "align_levels",
                "synth_base", "synth_levels", "disc_base", "disc_depth"},
               "model");
    if (m.contains("recon_cascades")) c.model.recon_cascades = m.at("recon_cascades").get<int>();
    if (m.contains("recon_base")) c.model.recon_base = m.at("recon_base").get<int>();
    if (m.contains("recon_levels")) c.model.recon_levels = m.at("recon_levels").get<int>();
    if (m.contains("align_base")) c.model.align_base = m.at("align_base").get<int>();
    if (m.contains("align_levels")) c.model.align_levels = m.at("align_levels").get<int>();
    if (m.contains("synth_base")) c.model.synth_base = m.at("synth_base").get<int>();
    if (m.contains("synth_levels")) c.model.synth_levels = m.at("synth_levels").get<int>();
    if (m.contains("disc_base")) c.model.disc_base = m.at("disc_base").get<int>();
    if (m.contains("disc_depth")) c.model.disc_depth = m.at("disc_depth").get<int>();
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"split", "checkpoint", "sweep_sigmas"}, "eval");
    if (e.contains("split")) c.eval.split = e.at("split").get<std::string>();
    if (e.contains("checkpoint")) c.eval.checkpoint = e.at("checkpoint").get<std::string>();
    if (e.contains("sweep_sigmas"))
      c.eval.sweep_sigmas = e.at("sweep_sigmas").get<std::vector<double>>();
  }
  // Basic sanity, before any work happens.
  if (c.train.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (c.train.weights.lambda_smooth < 0 || c.train.weights.alpha_reg < 0 ||
      c.train.weights.beta_adv < 0 || c.train.weights.learning_rate < 0)
    throw std::invalid_argument("config: loss weights must be nonnegative");
  models::training_mode_from_string(c.train.mode);
  return c;
}

}  // namespace

std::string ExperimentConfig::to_json(int indent) const { return to_json_obj(*this).dump(indent); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  return from_json_obj(json::parse(text));
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

void ExperimentConfig::apply_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key.path=value: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);

  json j = to_json_obj(*this);
  json* cursor = &j;
  size_t pos = 0;
  for (;;) {
    const size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!cursor->contains(part))
      throw std::invalid_argument("override: unknown config key '" + key + "'");
    cursor = &(*cursor)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  // Interpret the value with the same type as the existing entry.
  if (cursor->is_string())
    *cursor = value;
  else if (cursor->is_boolean())
    *cursor = (value == "true" || value == "1");
  else if (cursor->is_number_integer() || cursor->is_number_unsigned())
    *cursor = json::parse(value);
  else if (cursor->is_number_float())
    *cursor = std::stod(value);
  else if (cursor->is_array())
    *cursor = json::parse(value);
  else
    throw std::invalid_argument("override: unsupported target for key '" + key + "'");
  *this = from_json_obj(j);
}

std::string ExperimentConfig::hash() const {
  const std::string s = to_json();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mmalign::config
