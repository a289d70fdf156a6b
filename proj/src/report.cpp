#include "mmalign/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace mmalign::report {

namespace {

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> rgb;  // row-major, top-down, 3 bytes per pixel

  Canvas(int w_, int h_) : w(w_), h(h_), rgb(static_cast<size_t>(w_) * h_ * 3, 255) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    const size_t i = (static_cast<size_t>(y) * w + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }

  void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void rect(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, r, g, b);
  }

  void marker(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) set(x + dx, y + dy, r, g, b);
  }
};

void write_bmp(const std::string& path, const Canvas& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_bmp: cannot open " + path);
  const int row_bytes = (c.w * 3 + 3) / 4 * 4;
  const std::uint32_t data_size = static_cast<std::uint32_t>(row_bytes) * c.h;
  const std::uint32_t file_size = 54 + data_size;
  std::uint8_t header[54] = {};
  header[0] = 'B';
  header[1] = 'M';
  auto put32 = [&](int off, std::uint32_t v) {
    header[off] = v & 0xff;
    header[off + 1] = (v >> 8) & 0xff;
    header[off + 2] = (v >> 16) & 0xff;
    header[off + 3] = (v >> 24) & 0xff;
  };
  put32(2, file_size);
  put32(10, 54);
  put32(14, 40);
  put32(18, static_cast<std::uint32_t>(c.w));
  put32(22, static_cast<std::uint32_t>(c.h));
  header[26] = 1;
  header[28] = 24;
  put32(34, data_size);
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<std::uint8_t> row(static_cast<size_t>(row_bytes), 0);
  for (int y = c.h - 1; y >= 0; --y) {  // BMP rows are bottom-up, BGR
    for (int x = 0; x < c.w; ++x) {
      const size_t i = (static_cast<size_t>(y) * c.w + x) * 3;
      row[static_cast<size_t>(x) * 3] = c.rgb[i + 2];
      row[static_cast<size_t>(x) * 3 + 1] = c.rgb[i + 1];
      row[static_cast<size_t>(x) * 3 + 2] = c.rgb[i];
    }
    f.write(reinterpret_cast<const char*>(row.data()), row_bytes);
  }
}

struct Palette {
  std::uint8_t r, g, b;
};
const Palette kColors[] = {{214, 110, 30}, {40, 90, 200}, {60, 160, 70},
                           {160, 50, 160}, {20, 20, 20},  {200, 40, 40}};

}  // namespace

void write_method_csv(const std::string& path, const evalmetrics::MetricsReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_method_csv: cannot open " + path);
  f << "method,level,study,slice,psnr,ssim\n";
  for (const auto& [name, m] : rep.methods) {
    for (const auto& s : m.per_slice)
      f << name << ",slice," << s.study << "," << s.slice << "," << s.psnr << "," << s.ssim
        << "\n";
    for (const auto& s : m.per_subject)
      f << name << ",subject," << s.study << ",," << s.psnr << "," << s.ssim << "\n";
    f << name << ",aggregate,,," << m.aggregate.psnr_mean_slice << ","
      << m.aggregate.ssim_mean_slice << "\n";
  }
}

void write_comparison_csv(const std::string& path,
                          const std::vector<evalmetrics::Comparison>& comparisons) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_comparison_csv: cannot open " + path);
  f << "method_a,method_b,metric,t,p\n";
  for (const auto& c : comparisons)
    f << c.method_a << "," << c.method_b << "," << c.metric << "," << c.t << "," << c.p << "\n";
}

void write_sweep_csv(const std::string& path, const evalmetrics::MetricsReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_sweep_csv: cannot open " + path);
  f << "sigma,method,psnr,ssim\n";
  for (const auto& row : rep.sweep)
    for (const auto& [name, pr] : row.methods)
      f << row.sigma << "," << name << "," << pr.first << "," << pr.second << "\n";
}

void write_gain_csv(const std::string& path, const evalmetrics::GainHistogram& gain) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_gain_csv: cannot open " + path);
  f << "study,psnr_gain,ssim_gain\n";
  for (size_t i = 0; i < gain.studies.size(); ++i)
    f << gain.studies[i] << "," << gain.psnr_gain[i] << "," << gain.ssim_gain[i] << "\n";
  f << "fraction_positive," << gain.fraction_positive_psnr << "," << gain.fraction_positive_ssim
    << "\n";
}

void render_sweep_plot(const std::string& path, const evalmetrics::MetricsReport& rep) {
  Canvas c(640, 420);
  const int mx0 = 60, mx1 = 610, my0 = 30, my1 = 380;
  c.line(mx0, my1, mx1, my1, 0, 0, 0);
  c.line(mx0, my0, mx0, my1, 0, 0, 0);
  if (rep.sweep.empty()) {
    write_bmp(path, c);
    return;
  }
  double smin = rep.sweep.front().sigma, smax = rep.sweep.back().sigma;
  if (smax <= smin) smax = smin + 1.0;
  double pmin = std::numeric_limits<double>::infinity(), pmax = -pmin;
  for (const auto& row : rep.sweep)
    for (const auto& [name, pr] : row.methods) {
      pmin = std::min(pmin, pr.first);
      pmax = std::max(pmax, pr.first);
    }
  if (!(pmax > pmin)) pmax = pmin + 1.0;
  const double pad = 0.05 * (pmax - pmin);
  pmin -= pad;
  pmax += pad;
  auto px = [&](double s) {
    return mx0 + static_cast<int>((s - smin) / (smax - smin) * (mx1 - mx0));
  };
  auto py = [&](double p) {
    return my1 - static_cast<int>((p - pmin) / (pmax - pmin) * (my1 - my0));
  };
  int ci = 0;
  std::vector<std::string> names;
  for (const auto& [name, pr] : rep.sweep.front().methods) names.push_back(name);
  for (const auto& name : names) {
    const Palette col = kColors[ci % 6];
    int lastx = -1, lasty = -1;
    for (const auto& row : rep.sweep) {
      const auto it = row.methods.find(name);
      if (it == row.methods.end()) continue;
      const int x = px(row.sigma), y = py(it->second.first);
      c.marker(x, y, col.r, col.g, col.b);
      if (lastx >= 0) c.line(lastx, lasty, x, y, col.r, col.g, col.b);
      lastx = x;
      lasty = y;
    }
    // legend swatch
    c.rect(mx0 + 10, my0 + 12 * ci, mx0 + 30, my0 + 12 * ci + 8, col.r, col.g, col.b);
    ++ci;
  }
  write_bmp(path, c);
}

void render_gain_histogram(const std::string& path, const evalmetrics::GainHistogram& gain) {
  Canvas c(640, 420);
  const int mx0 = 60, mx1 = 610, my0 = 30, my1 = 380;
  c.line(mx0, my1, mx1, my1, 0, 0, 0);
  c.line(mx0, my0, mx0, my1, 0, 0, 0);
  if (!gain.psnr_gain.empty()) {
    double gmin = 0.0, gmax = 0.0;
    for (double g : gain.psnr_gain) {
      gmin = std::min(gmin, g);
      gmax = std::max(gmax, g);
    }
    if (!(gmax > gmin)) gmax = gmin + 1.0;
    const int n = static_cast<int>(gain.psnr_gain.size());
    const int bw = std::max(2, (mx1 - mx0) / std::max(1, n) - 2);
    auto py = [&](double g) {
      return my1 - static_cast<int>((g - gmin) / (gmax - gmin) * (my1 - my0));
    };
    const int zero_y = py(0.0);
    c.line(mx0, zero_y, mx1, zero_y, 150, 150, 150);
    for (int i = 0; i < n; ++i) {
      const int x = mx0 + 4 + i * ((mx1 - mx0) / std::max(1, n));
      const double g = gain.psnr_gain[static_cast<size_t>(i)];
      const Palette col = g >= 0.0 ? kColors[2] : kColors[5];
      c.rect(x, std::min(zero_y, py(g)), x + bw, std::max(zero_y, py(g)), col.r, col.g, col.b);
    }
  }
  write_bmp(path, c);
}

void render_box_summary(const std::string& path,
                        const std::vector<std::pair<std::string, std::vector<double>>>& series,
                        const std::string&) {
  Canvas c(640, 420);
  const int mx0 = 60, mx1 = 610, my0 = 30, my1 = 380;
  c.line(mx0, my1, mx1, my1, 0, 0, 0);
  c.line(mx0, my0, mx0, my1, 0, 0, 0);
  double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
  for (const auto& [name, vals] : series)
    for (double v : vals) {
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
  if (!(vmax > vmin)) {
    write_bmp(path, c);
    return;
  }
  const double pad = 0.05 * (vmax - vmin);
  vmin -= pad;
  vmax += pad;
  auto py = [&](double v) {
    return my1 - static_cast<int>((v - vmin) / (vmax - vmin) * (my1 - my0));
  };
  const int n = static_cast<int>(series.size());
  for (int i = 0; i < n; ++i) {
    std::vector<double> vals = series[static_cast<size_t>(i)].second;
    if (vals.empty()) continue;
    std::sort(vals.begin(), vals.end());
    auto q = [&](double f) {
      const double idx = f * (static_cast<double>(vals.size()) - 1.0);
      const size_t lo = static_cast<size_t>(idx);
      const size_t hi = std::min(lo + 1, vals.size() - 1);
      return vals[lo] + (idx - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
    };
    const int cx = mx0 + (2 * i + 1) * (mx1 - mx0) / (2 * n);
    const int half = std::max(8, (mx1 - mx0) / (4 * n));
    const Palette col = kColors[i % 6];
    c.line(cx, py(q(0.0)), cx, py(q(1.0)), col.r, col.g, col.b);
    c.rect(cx - half, py(q(0.75)), cx + half, py(q(0.25)), col.r, col.g, col.b);
    c.line(cx - half, py(q(0.5)), cx + half, py(q(0.5)), 255, 255, 255);
  }
  write_bmp(path, c);
}

}  // namespace mmalign::report
