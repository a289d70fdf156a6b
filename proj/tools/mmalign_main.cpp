#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmalign/config.hpp"
#include "mmalign/data.hpp"
#include "mmalign/evalmetrics.hpp"
#include "mmalign/models.hpp"
#include "mmalign/report.hpp"
#include "mmalign/rng.hpp"
#include "mmalign/threads.hpp"
#include "mmalign/training.hpp"

namespace fs = std::filesystem;
using namespace mmalign;
using nlohmann::json;

namespace {

// Exit code 2: a required upstream artifact (dataset, checkpoint) is absent.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
};

config::ExperimentConfig load_config(const CommonArgs& args) {
  config::ExperimentConfig cfg = args.config_path.empty()
                                     ? config::ExperimentConfig{}
                                     : config::ExperimentConfig::load(args.config_path);
  for (const auto& kv : args.overrides) cfg.apply_override(kv);
  return cfg;
}

// Run directory: --out pins it exactly; otherwise runs/<confighash>-<stamp>.
fs::path run_dir_for(const CommonArgs& args, const config::ExperimentConfig& cfg,
                     const std::string& command) {
  fs::path dir;
  if (!args.out.empty())
    dir = args.out;
  else
    dir = fs::path("runs") / (command + "-" + cfg.hash() + "-" + timestamp());
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (text.empty() || text.back() != '\n') f << "\n";
}

int cmd_simulate(const CommonArgs& args) {
  const config::ExperimentConfig cfg = load_config(args);
  const auto& d = cfg.dataset;

  // Validate the mask settings against this image size before any work.
  kspace::make_mask(d.size, cfg.mask.acceleration, cfg.mask.pattern, cfg.mask.low_freq_fraction,
                    cfg.seed);

  if (fs::exists(fs::path(d.root) / "manifest.json") && !args.force)
    throw std::runtime_error("dataset already exists at " + d.root + " (use --force)");
  if (args.force) fs::remove_all(d.root);

  data::DatasetManifest manifest;
  manifest.seed = cfg.seed;
  manifest.height = d.size;
  manifest.width = d.size;
  manifest.deformation =
      geometry::DeformationSpec::defaults_for_size(d.size, d.misalignment_sigma, cfg.seed);

  std::vector<data::SlicePair> pairs;
  const int total_studies = d.studies_train + d.studies_val + d.studies_test;
  int global_index = 0;
  for (int s = 0; s < total_studies; ++s) {
    char name[16];
    std::snprintf(name, sizeof(name), "s%04d", s);
    data::StudyEntry entry;
    entry.study_id = name;
    entry.slice_count = d.slices_per_study;
    entry.coil_count = d.coil_count;
    manifest.studies.push_back(entry);
    const char* split = s < d.studies_train                  ? "train"
                        : s < d.studies_train + d.studies_val ? "val"
                                                               : "test";
    manifest.split[split].push_back(name);
    for (int i = 0; i < d.slices_per_study; ++i, ++global_index) {
      data::SlicePair pair =
          data::generate_phantom_pair(mix_seed(cfg.seed, static_cast<std::uint64_t>(global_index)),
                                      d.size, d.tissue_count);
      pair.study_id = name;
      pair.slice_index = i;
      if (d.misalignment_sigma > 0.0) {
        geometry::DeformationSpec spec = geometry::DeformationSpec::defaults_for_size(
            d.size, d.misalignment_sigma,
            mix_seed(cfg.seed, 0x4d495341ULL + static_cast<std::uint64_t>(global_index)));
        pair = data::inject_misalignment(pair, spec);
      }
      if (d.coil_count > 1)
        pair = data::synthesize_multicoil(
            pair, d.coil_count,
            mix_seed(cfg.seed, 0x434f494cULL + static_cast<std::uint64_t>(global_index)));
      pairs.push_back(std::move(pair));
    }
  }
  data::write_dataset(manifest, pairs, d.root);
  std::cout << "dataset written to " << d.root << " (" << pairs.size() << " pairs)\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const config::ExperimentConfig cfg = load_config(args);
  if (!fs::exists(fs::path(cfg.dataset.root) / "manifest.json"))
    throw MissingArtifact("dataset not found at " + cfg.dataset.root + " (run simulate first)");
  const fs::path dir = run_dir_for(args, cfg, "train");
  write_text(dir / "resolved_config.json", cfg.to_json(2));

  training::TrainConfig tcfg = training::TrainConfig::from_experiment(cfg);
  tcfg.out_dir = dir.string();
  const training::TrainResult result = training::train(tcfg);

  json summary;
  summary["best_checkpoint"] = result.best_checkpoint;
  summary["final_checkpoint"] = result.final_checkpoint;
  summary["best_val_ssim"] = result.best_val_ssim;
  summary["best_iteration"] = result.best_iteration;
  summary["iterations"] = cfg.train.max_iterations;
  write_text(dir / "train_summary.json", summary.dump(2));
  std::cout << "trained " << cfg.train.mode << ": best val SSIM " << result.best_val_ssim
            << " at iteration " << result.best_iteration << "\n"
            << "checkpoints under " << dir.string() << "\n";
  return 0;
}

models::ModelBundle load_bundle_or_die(const std::string& path) {
  if (path.empty()) throw MissingArtifact("no checkpoint given (eval.checkpoint)");
  if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path);
  return models::load_checkpoint(path);
}

int cmd_eval(const CommonArgs& args) {
  const config::ExperimentConfig cfg = load_config(args);
  if (!fs::exists(fs::path(cfg.dataset.root) / "manifest.json"))
    throw MissingArtifact("dataset not found at " + cfg.dataset.root);
  const models::ModelBundle bundle = load_bundle_or_die(cfg.eval.checkpoint);
  const data::Dataset dataset = data::Dataset::open(cfg.dataset.root);

  const fs::path dir = run_dir_for(args, cfg, "eval");
  write_text(dir / "resolved_config.json", cfg.to_json(2));

  evalmetrics::MetricsReport rep =
      evalmetrics::evaluate(bundle, dataset, cfg.eval.split, cfg.mask, cfg.seed);
  write_text(dir / "metrics.json", rep.to_json(2));
  report::write_method_csv((dir / "metrics.csv").string(), rep);
  std::cout << "evaluated " << models::to_string(bundle.mode) << " on " << cfg.eval.split << ": ";
  for (const auto& [name, m] : rep.methods)
    std::cout << name << " psnr=" << m.aggregate.psnr_mean_slice
              << " ssim=" << m.aggregate.ssim_mean_slice << "  ";
  std::cout << "\nreport under " << dir.string() << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::vector<std::string>& checkpoint_args) {
  const config::ExperimentConfig cfg = load_config(args);
  if (!fs::exists(fs::path(cfg.dataset.root) / "manifest.json"))
    throw MissingArtifact("dataset not found at " + cfg.dataset.root);
  if (checkpoint_args.empty())
    throw MissingArtifact("sweep needs --checkpoint name=path (repeatable)");

  std::vector<models::ModelBundle> bundles;
  std::map<std::string, const models::ModelBundle*> by_name;
  bundles.reserve(checkpoint_args.size());
  for (const auto& spec : checkpoint_args) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--checkpoint must look like name=path: " + spec);
    bundles.push_back(load_bundle_or_die(spec.substr(eq + 1)));
    by_name[spec.substr(0, eq)] = &bundles.back();
  }

  const data::Dataset dataset = data::Dataset::open(cfg.dataset.root);
  const fs::path dir = run_dir_for(args, cfg, "sweep");
  write_text(dir / "resolved_config.json", cfg.to_json(2));

  evalmetrics::MetricsReport rep = evalmetrics::misalignment_sweep(
      by_name, cfg.eval.sweep_sigmas, dataset, cfg.eval.split, cfg.mask, cfg.seed);
  write_text(dir / "sweep.json", rep.to_json(2));
  report::write_sweep_csv((dir / "sweep.csv").string(), rep);
  report::render_sweep_plot((dir / "sweep_psnr.bmp").string(), rep);
  std::cout << "sweep over " << rep.sweep.size() << " sigmas written under " << dir.string()
            << "\n";
  return 0;
}

int cmd_report(const CommonArgs& args, const std::vector<std::string>& inputs) {
  if (inputs.size() < 2) throw std::runtime_error("report needs at least two metrics.json files");
  const config::ExperimentConfig cfg = load_config(args);
  const fs::path dir = run_dir_for(args, cfg, "report");

  // Merge method tables from all reports; names collide last-wins.
  evalmetrics::MetricsReport merged;
  for (const auto& path : inputs) {
    if (!fs::exists(path)) throw MissingArtifact("metrics file not found: " + path);
    std::ifstream f(path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const evalmetrics::MetricsReport rep = evalmetrics::MetricsReport::from_json(ss.str());
    for (const auto& [name, m] : rep.methods) merged.methods[name] = m;
  }

  std::vector<std::string> names;
  for (const auto& [name, m] : merged.methods) names.push_back(name);
  for (size_t i = 0; i < names.size(); ++i)
    for (size_t j = i + 1; j < names.size(); ++j) {
      try {
        const auto cmp = evalmetrics::compare_methods(names[i], merged.methods[names[i]],
                                                      names[j], merged.methods[names[j]]);
        merged.comparisons.insert(merged.comparisons.end(), cmp.begin(), cmp.end());
      } catch (const std::exception&) {
        // Reports over different subject sets are merely listed, not compared.
      }
    }

  write_text(dir / "report.json", merged.to_json(2));
  report::write_method_csv((dir / "methods.csv").string(), merged);
  report::write_comparison_csv((dir / "comparisons.csv").string(), merged.comparisons);

  std::vector<std::pair<std::string, std::vector<double>>> psnr_series;
  for (const auto& name : names) {
    std::vector<double> vals;
    for (const auto& s : merged.methods[name].per_subject) vals.push_back(s.psnr);
    psnr_series.emplace_back(name, std::move(vals));
  }
  report::render_box_summary((dir / "psnr_box.bmp").string(), psnr_series, "psnr");

  if (names.size() >= 2) {
    try {
      const auto gain = evalmetrics::gain_histogram(merged.methods[names[0]],
                                                    merged.methods[names[1]]);
      report::write_gain_csv((dir / "gain.csv").string(), gain);
      report::render_gain_histogram((dir / "gain_psnr.bmp").string(), gain);
    } catch (const std::exception&) {
    }
  }
  std::cout << "report with " << merged.comparisons.size() << " comparisons under "
            << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap_from_env();

  CLI::App app{"multi-modal MRI reconstruction with a spatial alignment network"};
  app.require_subcommand(1);

  CommonArgs common;
  std::vector<std::string> report_inputs;
  std::vector<std::string> sweep_checkpoints;

  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config JSON");
    sub->add_option("--set", common.overrides, "override, key.path=value (repeatable)");
    sub->add_option("--out", common.out, "output directory (default: runs/<hash>-<time>)");
    sub->add_flag("--force", common.force, "overwrite existing outputs");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "generate the synthetic dataset");
  add_common(simulate);
  CLI::App* train = app.add_subcommand("train", "train a model bundle");
  add_common(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  CLI::App* sweep = app.add_subcommand("sweep", "misalignment-degree sweep over checkpoints");
  add_common(sweep);
  sweep->add_option("--checkpoint", sweep_checkpoints, "name=path (repeatable)");
  CLI::App* report_cmd = app.add_subcommand("report", "tables and figures from metrics files");
  add_common(report_cmd);
  report_cmd->add_option("inputs", report_inputs, "metrics.json files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(common);
    if (train->parsed()) return cmd_train(common);
    if (eval->parsed()) return cmd_eval(common);
    if (sweep->parsed()) return cmd_sweep(common, sweep_checkpoints);
    if (report_cmd->parsed()) return cmd_report(common, report_inputs);
  } catch (const MissingArtifact& e) {
    json err{{"error", true}, {"code", 2}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    json err{{"error", true}, {"code", 1}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
