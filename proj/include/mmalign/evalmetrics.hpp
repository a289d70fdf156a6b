#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmalign/config.hpp"
#include "mmalign/data.hpp"
#include "mmalign/models.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::evalmetrics {

// 10*log10(data_range^2 / MSE); identical images give +infinity.
double psnr(const Tensor& estimate, const Tensor& truth, double data_range);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
};

// Two-sided paired t-test; throws on zero-variance differences.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct SliceMetrics {
  std::string study;
  int slice = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct SubjectMetrics {
  std::string study;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct Aggregate {
  double psnr_mean_slice = 0.0, psnr_std_slice = 0.0;
  double ssim_mean_slice = 0.0, ssim_std_slice = 0.0;
  double psnr_mean_subject = 0.0, psnr_std_subject = 0.0;
  double ssim_mean_subject = 0.0, ssim_std_subject = 0.0;
};

struct MethodReport {
  std::vector<SliceMetrics> per_slice;
  std::vector<SubjectMetrics> per_subject;  // slices averaged within study first
  Aggregate aggregate;
};

struct Comparison {
  std::string method_a, method_b, metric;
  double t = 0.0, p = 1.0;
};

struct SweepRow {
  double sigma = 0.0;
  // method -> (mean psnr, mean ssim) over slices
  std::map<std::string, std::pair<double, double>> methods;
  double proposed_minus_multimodal_psnr = 0.0;
};

struct MetricsReport {
  std::map<std::string, MethodReport> methods;
  std::vector<Comparison> comparisons;
  std::vector<SweepRow> sweep;

  std::string to_json(int indent = 2) const;
  static MetricsReport from_json(const std::string& text);
};

MethodReport build_method_report(std::vector<SliceMetrics> slices);

// Reconstructs every slice of the split with the bundle, plus the
// zero-filling baseline row. Deterministic.
MetricsReport evaluate(const models::ModelBundle& bundle, const data::Dataset& dataset,
                       const std::string& split, const config::MaskConfig& mask,
                       std::uint64_t seed);

// Frozen-checkpoint sweep: extra misalignment of scale sigma is injected
// into the reference at evaluation time (reference only), per slice,
// deterministic per (seed, study, slice).
MetricsReport misalignment_sweep(const std::map<std::string, const models::ModelBundle*>& bundles,
                                 const std::vector<double>& sigmas, const data::Dataset& dataset,
                                 const std::string& split, const config::MaskConfig& mask,
                                 std::uint64_t seed);

struct GainHistogram {
  std::vector<std::string> studies;
  std::vector<double> psnr_gain;  // a - b per subject
  std::vector<double> ssim_gain;
  double fraction_positive_psnr = 0.0;
  double fraction_positive_ssim = 0.0;
};

GainHistogram gain_histogram(const MethodReport& a, const MethodReport& b);

// Paired t-tests between two methods of (possibly different) reports,
// subject-wise, for both metrics.
std::vector<Comparison> compare_methods(const std::string& name_a, const MethodReport& a,
                                        const std::string& name_b, const MethodReport& b);

}  // namespace mmalign::evalmetrics
