#include "mmalign/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmalign/losses.hpp"
#include "mmalign/rng.hpp"
#include "mmalign/training.hpp"

namespace mmalign::evalmetrics {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSweepStream = 0x73776570ULL;  // "swep"

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Regularized incomplete beta I_x(a,b) by continued fraction.
double betacf(double a, double b, double x) {
  const int kMaxIter = 300;
  const double eps = 3e-14, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

double incbeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                       b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  const double x = dof / (dof + t * t);
  return incbeta(0.5 * dof, 0.5, x);
}

}  // namespace

double psnr(const Tensor& estimate, const Tensor& truth, double data_range) {
  if (!estimate.same_shape(truth)) throw std::invalid_argument("psnr: shape mismatch");
  if (data_range <= 0.0) throw std::invalid_argument("psnr: data_range must be positive");
  double mse = 0.0;
  const std::int64_t n = estimate.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = estimate[i] - truth[i];
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  const size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double md = mean_of(d);
  double var = 0.0;
  for (double x : d) var += (x - md) * (x - md);
  var /= static_cast<double>(n - 1);
  if (var == 0.0)
    throw std::invalid_argument("paired_t_test: zero-variance differences are degenerate");
  TTestResult r;
  r.t = md / std::sqrt(var / static_cast<double>(n));
  r.p = student_t_two_sided_p(r.t, static_cast<double>(n - 1));
  return r;
}

MethodReport build_method_report(std::vector<SliceMetrics> slices) {
  MethodReport rep;
  rep.per_slice = std::move(slices);

  std::vector<double> ps, ss;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_study;
  for (const auto& s : rep.per_slice) {
    ps.push_back(s.psnr);
    ss.push_back(s.ssim);
    by_study[s.study].first.push_back(s.psnr);
    by_study[s.study].second.push_back(s.ssim);
  }
  std::vector<double> sub_ps, sub_ss;
  for (const auto& [study, vals] : by_study) {
    SubjectMetrics sm;
    sm.study = study;
    sm.psnr = mean_of(vals.first);
    sm.ssim = mean_of(vals.second);
    rep.per_subject.push_back(sm);
    sub_ps.push_back(sm.psnr);
    sub_ss.push_back(sm.ssim);
  }
  rep.aggregate.psnr_mean_slice = mean_of(ps);
  rep.aggregate.psnr_std_slice = std_of(ps);
  rep.aggregate.ssim_mean_slice = mean_of(ss);
  rep.aggregate.ssim_std_slice = std_of(ss);
  rep.aggregate.psnr_mean_subject = mean_of(sub_ps);
  rep.aggregate.psnr_std_subject = std_of(sub_ps);
  rep.aggregate.ssim_mean_subject = mean_of(sub_ss);
  rep.aggregate.ssim_std_subject = std_of(sub_ss);
  return rep;
}

namespace {

// Clips +inf PSNR (identical images) to a large finite sentinel inside
// aggregates so JSON stays numeric; per-slice values keep the sentinel.
json slice_to_json(const SliceMetrics& s) {
  json j;
  j["study"] = s.study;
  j["slice"] = s.slice;
  j["psnr"] = std::isfinite(s.psnr) ? json(s.psnr) : json("inf");
  j["ssim"] = s.ssim;
  return j;
}

SliceMetrics slice_from_json(const json& j) {
  SliceMetrics s;
  s.study = j.at("study").get<std::string>();
  s.slice = j.at("slice").get<int>();
  if (j.at("psnr").is_string())
    s.psnr = std::numeric_limits<double>::infinity();
  else
    s.psnr = j.at("psnr").get<double>();
  s.ssim = j.at("ssim").get<double>();
  return s;
}

}  // namespace

std::string MetricsReport::to_json(int indent) const {
  json j;
  json jm = json::object();
  for (const auto& [name, rep] : methods) {
    json r;
    json slices = json::array();
    for (const auto& s : rep.per_slice) slices.push_back(slice_to_json(s));
    r["per_slice"] = slices;
    json subjects = json::array();
    for (const auto& s : rep.per_subject)
      subjects.push_back(json{{"study", s.study}, {"psnr", s.psnr}, {"ssim", s.ssim}});
    r["per_subject"] = subjects;
    r["aggregate"] = json{{"psnr_mean_slice", rep.aggregate.psnr_mean_slice},
                          {"psnr_std_slice", rep.aggregate.psnr_std_slice},
                          {"ssim_mean_slice", rep.aggregate.ssim_mean_slice},
                          {"ssim_std_slice", rep.aggregate.ssim_std_slice},
                          {"psnr_mean_subject", rep.aggregate.psnr_mean_subject},
                          {"psnr_std_subject", rep.aggregate.psnr_std_subject},
                          {"ssim_mean_subject", rep.aggregate.ssim_mean_subject},
                          {"ssim_std_subject", rep.aggregate.ssim_std_subject}};
    jm[name] = r;
  }
  j["methods"] = jm;
  json jc = json::array();
  for (const auto& c : comparisons)
    jc.push_back(json{{"method_a", c.method_a},
                      {"method_b", c.method_b},
                      {"metric", c.metric},
                      {"t", c.t},
                      {"p", c.p}});
  j["comparisons"] = jc;
  json js = json::array();
  for (const auto& row : sweep) {
    json methods_j = json::object();
    for (const auto& [name, pr] : row.methods)
      methods_j[name] = json{{"psnr", pr.first}, {"ssim", pr.second}};
    js.push_back(json{{"sigma", row.sigma},
                      {"methods", methods_j},
                      {"proposed_minus_multimodal_psnr", row.proposed_minus_multimodal_psnr}});
  }
  j["sweep"] = js;
  return j.dump(indent);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  MetricsReport rep;
  for (const auto& [name, r] : j.at("methods").items()) {
    MethodReport m;
    for (const auto& s : r.at("per_slice")) m.per_slice.push_back(slice_from_json(s));
    for (const auto& s : r.at("per_subject")) {
      SubjectMetrics sm;
      sm.study = s.at("study").get<std::string>();
      sm.psnr = s.at("psnr").get<double>();
      sm.ssim = s.at("ssim").get<double>();
      m.per_subject.push_back(sm);
    }
    const json& a = r.at("aggregate");
    m.aggregate.psnr_mean_slice = a.at("psnr_mean_slice").get<double>();
    m.aggregate.psnr_std_slice = a.at("psnr_std_slice").get<double>();
    m.aggregate.ssim_mean_slice = a.at("ssim_mean_slice").get<double>();
    m.aggregate.ssim_std_slice = a.at("ssim_std_slice").get<double>();
    m.aggregate.psnr_mean_subject = a.at("psnr_mean_subject").get<double>();
    m.aggregate.psnr_std_subject = a.at("psnr_std_subject").get<double>();
    m.aggregate.ssim_mean_subject = a.at("ssim_mean_subject").get<double>();
    m.aggregate.ssim_std_subject = a.at("ssim_std_subject").get<double>();
    rep.methods[name] = std::move(m);
  }
  for (const auto& c : j.at("comparisons")) {
    Comparison cc;
    cc.method_a = c.at("method_a").get<std::string>();
    cc.method_b = c.at("method_b").get<std::string>();
    cc.metric = c.at("metric").get<std::string>();
    cc.t = c.at("t").get<double>();
    cc.p = c.at("p").get<double>();
    rep.comparisons.push_back(cc);
  }
  for (const auto& row : j.at("sweep")) {
    SweepRow r;
    r.sigma = row.at("sigma").get<double>();
    for (const auto& [name, pr] : row.at("methods").items())
      r.methods[name] = {pr.at("psnr").get<double>(), pr.at("ssim").get<double>()};
    r.proposed_minus_multimodal_psnr = row.at("proposed_minus_multimodal_psnr").get<double>();
    rep.sweep.push_back(r);
  }
  return rep;
}

MetricsReport evaluate(const models::ModelBundle& bundle, const data::Dataset& dataset,
                       const std::string& split, const config::MaskConfig& mask,
                       std::uint64_t seed) {
  const auto slices = dataset.slices_of(split);
  if (slices.empty()) throw std::runtime_error("evaluate: empty split " + split);

  std::vector<SliceMetrics> model_rows, zf_rows;
  for (const auto& [study, slice] : slices) {
    const data::SlicePair pair = dataset.load(study, slice);
    const kspace::SamplingMask m =
        training::mask_for_eval(mask, pair.width(), seed, study, slice);
    const training::InferenceOutput out = training::infer_pair(bundle, pair, m);
    const double range = std::max(pair.target.max(), 1e-6);
    model_rows.push_back({study, slice, psnr(out.magnitude, pair.target, range),
                          losses::ssim(out.magnitude, pair.target, range)});
    zf_rows.push_back({study, slice, psnr(out.zero_filled, pair.target, range),
                       losses::ssim(out.zero_filled, pair.target, range)});
  }

  MetricsReport rep;
  rep.methods[models::to_string(bundle.mode)] = build_method_report(std::move(model_rows));
  rep.methods["zero_filled"] = build_method_report(std::move(zf_rows));
  return rep;
}

MetricsReport misalignment_sweep(const std::map<std::string, const models::ModelBundle*>& bundles,
                                 const std::vector<double>& sigmas, const data::Dataset& dataset,
                                 const std::string& split, const config::MaskConfig& mask,
                                 std::uint64_t seed) {
  const auto slices = dataset.slices_of(split);
  if (slices.empty()) throw std::runtime_error("misalignment_sweep: empty split " + split);

  MetricsReport rep;
  for (double sigma : sigmas) {
    SweepRow row;
    row.sigma = sigma;
    for (const auto& [name, bundle] : bundles) {
      std::vector<double> ps, ss;
      for (const auto& [study, slice] : slices) {
        data::SlicePair pair = dataset.load(study, slice);
        if (sigma > 0.0) {
          geometry::DeformationSpec spec = geometry::DeformationSpec::defaults_for_size(
              pair.width(), sigma,
              mix_seed(seed, kSweepStream + fnv1a(study) * 131 +
                                 static_cast<std::uint64_t>(slice)));
          pair = data::inject_misalignment(pair, spec);
        }
        const kspace::SamplingMask m =
            training::mask_for_eval(mask, pair.width(), seed, study, slice);
        const training::InferenceOutput out = training::infer_pair(*bundle, pair, m);
        const double range = std::max(pair.target.max(), 1e-6);
        ps.push_back(psnr(out.magnitude, pair.target, range));
        ss.push_back(losses::ssim(out.magnitude, pair.target, range));
      }
      row.methods[name] = {mean_of(ps), mean_of(ss)};
    }
    if (row.methods.count("proposed") && row.methods.count("multi_modal"))
      row.proposed_minus_multimodal_psnr =
          row.methods.at("proposed").first - row.methods.at("multi_modal").first;
    rep.sweep.push_back(row);
  }
  return rep;
}

GainHistogram gain_histogram(const MethodReport& a, const MethodReport& b) {
  if (a.per_subject.size() != b.per_subject.size())
    throw std::invalid_argument("gain_histogram: subject mismatch");
  GainHistogram g;
  int pos_psnr = 0, pos_ssim = 0;
  for (size_t i = 0; i < a.per_subject.size(); ++i) {
    if (a.per_subject[i].study != b.per_subject[i].study)
      throw std::invalid_argument("gain_histogram: subject mismatch at " + a.per_subject[i].study);
    g.studies.push_back(a.per_subject[i].study);
    const double dp = a.per_subject[i].psnr - b.per_subject[i].psnr;
    const double ds = a.per_subject[i].ssim - b.per_subject[i].ssim;
    g.psnr_gain.push_back(dp);
    g.ssim_gain.push_back(ds);
    if (dp > 0.0) ++pos_psnr;
    if (ds > 0.0) ++pos_ssim;
  }
  const double n = static_cast<double>(std::max<size_t>(g.studies.size(), 1));
  g.fraction_positive_psnr = pos_psnr / n;
  g.fraction_positive_ssim = pos_ssim / n;
  return g;
}

std::vector<Comparison> compare_methods(const std::string& name_a, const MethodReport& a,
                                        const std::string& name_b, const MethodReport& b) {
  if (a.per_subject.size() != b.per_subject.size())
    throw std::invalid_argument("compare_methods: subject mismatch");
  std::vector<double> pa, pb, sa, sb;
  for (size_t i = 0; i < a.per_subject.size(); ++i) {
    if (a.per_subject[i].study != b.per_subject[i].study)
      throw std::invalid_argument("compare_methods: subject mismatch at " +
                                  a.per_subject[i].study);
    pa.push_back(a.per_subject[i].psnr);
    pb.push_back(b.per_subject[i].psnr);
    sa.push_back(a.per_subject[i].ssim);
    sb.push_back(b.per_subject[i].ssim);
  }
  std::vector<Comparison> out;
  const TTestResult tp = paired_t_test(pa, pb);
  out.push_back({name_a, name_b, "psnr", tp.t, tp.p});
  const TTestResult ts = paired_t_test(sa, sb);
  out.push_back({name_a, name_b, "ssim", ts.t, ts.p});
  return out;
}

}  // namespace mmalign::evalmetrics
