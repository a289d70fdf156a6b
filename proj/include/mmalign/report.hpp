#pragma once

#include <string>
#include <vector>

#include "mmalign/evalmetrics.hpp"

namespace mmalign::report {

// CSV emitters (plot-ready series).
void write_method_csv(const std::string& path, const evalmetrics::MetricsReport& rep);
void write_comparison_csv(const std::string& path,
                          const std::vector<evalmetrics::Comparison>& comparisons);
void write_sweep_csv(const std::string& path, const evalmetrics::MetricsReport& rep);
void write_gain_csv(const std::string& path, const evalmetrics::GainHistogram& gain);

// Minimal raster plots, written as 24-bit BMP.
void render_sweep_plot(const std::string& path, const evalmetrics::MetricsReport& rep);
void render_gain_histogram(const std::string& path, const evalmetrics::GainHistogram& gain);
void render_box_summary(const std::string& path,
                        const std::vector<std::pair<std::string, std::vector<double>>>& series,
                        const std::string& metric_name);

}  // namespace mmalign::report
