#include "mmalign/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace mmalign::kernels {

namespace {

// Valid output range [o0, o1) such that 0 <= o*stride + k - pad < limit.
inline void out_range(int k, int pad, int stride, int limit, int out_limit, int& o0, int& o1) {
  // o*stride >= pad - k  ->  o >= ceil((pad - k) / stride)
  int lo = pad - k;
  o0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  // o*stride <= limit - 1 + pad - k
  int hi = limit - 1 + pad - k;
  o1 = hi < 0 ? 0 : hi / stride + 1;
  o0 = std::max(o0, 0);
  o1 = std::min(o1, out_limit);
}

}  // namespace

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const ConvShape& s) {
  const int hout = s.hout(), wout = s.wout();
  const std::int64_t out_plane = static_cast<std::int64_t>(hout) * wout;
  const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.n; ++n) {
    for (int oc = 0; oc < s.cout; ++oc) {
      double* ydst = y + (static_cast<std::int64_t>(n) * s.cout + oc) * out_plane;
      const double bias = b ? b[oc] : 0.0;
      for (std::int64_t i = 0; i < out_plane; ++i) ydst[i] = bias;
      for (int ic = 0; ic < s.cin; ++ic) {
        const double* xsrc = x + (static_cast<std::int64_t>(n) * s.cin + ic) * in_plane;
        const double* wk = w + ((static_cast<std::int64_t>(oc) * s.cin + ic) * s.kh) * s.kw;
        for (int kh = 0; kh < s.kh; ++kh) {
          int oh0, oh1;
          out_range(kh, s.pad, s.stride, s.h, hout, oh0, oh1);
          for (int kw = 0; kw < s.kw; ++kw) {
            const double wv = wk[kh * s.kw + kw];
            int ow0, ow1;
            out_range(kw, s.pad, s.stride, s.w, wout, ow0, ow1);
            for (int oh = oh0; oh < oh1; ++oh) {
              const int ih = oh * s.stride + kh - s.pad;
              const double* xrow = xsrc + static_cast<std::int64_t>(ih) * s.w;
              double* yrow = ydst + static_cast<std::int64_t>(oh) * wout;
              const int base = kw - s.pad;
              if (s.stride == 1) {
                for (int ow = ow0; ow < ow1; ++ow) yrow[ow] += wv * xrow[ow + base];
              } else {
                for (int ow = ow0; ow < ow1; ++ow) yrow[ow] += wv * xrow[ow * s.stride + base];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_dinput(const double* dy, const double* w, double* dx, const ConvShape& s) {
  const int hout = s.hout(), wout = s.wout();
  const std::int64_t out_plane = static_cast<std::int64_t>(hout) * wout;
  const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.n; ++n) {
    for (int ic = 0; ic < s.cin; ++ic) {
      double* dxdst = dx + (static_cast<std::int64_t>(n) * s.cin + ic) * in_plane;
      for (int oc = 0; oc < s.cout; ++oc) {
        const double* dysrc = dy + (static_cast<std::int64_t>(n) * s.cout + oc) * out_plane;
        const double* wk = w + ((static_cast<std::int64_t>(oc) * s.cin + ic) * s.kh) * s.kw;
        for (int kh = 0; kh < s.kh; ++kh) {
          for (int kw = 0; kw < s.kw; ++kw) {
            const double wv = wk[kh * s.kw + kw];
            int oh0, oh1, ow0, ow1;
            out_range(kh, s.pad, s.stride, s.h, hout, oh0, oh1);
            out_range(kw, s.pad, s.stride, s.w, wout, ow0, ow1);
            for (int oh = oh0; oh < oh1; ++oh) {
              const int ih = oh * s.stride + kh - s.pad;
              double* dxrow = dxdst + static_cast<std::int64_t>(ih) * s.w;
              const double* dyrow = dysrc + static_cast<std::int64_t>(oh) * wout;
              const int base = kw - s.pad;
              if (s.stride == 1) {
                for (int ow = ow0; ow < ow1; ++ow) dxrow[ow + base] += wv * dyrow[ow];
              } else {
                for (int ow = ow0; ow < ow1; ++ow) dxrow[ow * s.stride + base] += wv * dyrow[ow];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_dweight(const double* x, const double* dy, double* dw, double* db,
                    const ConvShape& s) {
  const int hout = s.hout(), wout = s.wout();
  const std::int64_t out_plane = static_cast<std::int64_t>(hout) * wout;
  const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;

#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < s.cout; ++oc) {
    if (db) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* dysrc = dy + (static_cast<std::int64_t>(n) * s.cout + oc) * out_plane;
        for (std::int64_t i = 0; i < out_plane; ++i) acc += dysrc[i];
      }
      db[oc] += acc;
    }
    for (int ic = 0; ic < s.cin; ++ic) {
      for (int kh = 0; kh < s.kh; ++kh) {
        for (int kw = 0; kw < s.kw; ++kw) {
          int oh0, oh1, ow0, ow1;
          out_range(kh, s.pad, s.stride, s.h, hout, oh0, oh1);
          out_range(kw, s.pad, s.stride, s.w, wout, ow0, ow1);
          // Four independent accumulators so the dot products are not
          // latency-bound; the summation order is fixed, so results are
          // reproducible run to run.
          double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const double* dysrc = dy + (static_cast<std::int64_t>(n) * s.cout + oc) * out_plane;
            const double* xsrc = x + (static_cast<std::int64_t>(n) * s.cin + ic) * in_plane;
            for (int oh = oh0; oh < oh1; ++oh) {
              const int ih = oh * s.stride + kh - s.pad;
              const double* dyrow = dysrc + static_cast<std::int64_t>(oh) * wout;
              const double* xrow = xsrc + static_cast<std::int64_t>(ih) * s.w;
              const int base = kw - s.pad;
              int ow = ow0;
              if (s.stride == 1) {
                for (; ow + 3 < ow1; ow += 4) {
                  a0 += dyrow[ow] * xrow[ow + base];
                  a1 += dyrow[ow + 1] * xrow[ow + 1 + base];
                  a2 += dyrow[ow + 2] * xrow[ow + 2 + base];
                  a3 += dyrow[ow + 3] * xrow[ow + 3 + base];
                }
              }
              for (; ow < ow1; ++ow) a0 += dyrow[ow] * xrow[ow * s.stride + base];
            }
          }
          dw[((static_cast<std::int64_t>(oc) * s.cin + ic) * s.kh + kh) * s.kw + kw] +=
              ((a0 + a1) + (a2 + a3));
        }
      }
    }
  }
}

void warp_forward(const double* img, const double* field, double* out, int c, int h, int w) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const double* fx = field;
  const double* fy = field + plane;

#pragma omp parallel for schedule(static)
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const std::int64_t p = static_cast<std::int64_t>(r) * w + col;
      double sx = col + fx[p];
      double sy = r + fy[p];
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      int x0 = std::min(static_cast<int>(sx), w - 2);
      int y0 = std::min(static_cast<int>(sy), h - 2);
      if (w == 1) x0 = 0;
      if (h == 1) y0 = 0;
      const double ax = sx - x0;
      const double ay = sy - y0;
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double w00 = (1.0 - ay) * (1.0 - ax);
      const double w01 = (1.0 - ay) * ax;
      const double w10 = ay * (1.0 - ax);
      const double w11 = ay * ax;
      for (int ch = 0; ch < c; ++ch) {
        const double* src = img + ch * plane;
        out[ch * plane + p] = w00 * src[y0 * w + x0] + w01 * src[y0 * w + x1] +
                              w10 * src[y1 * w + x0] + w11 * src[y1 * w + x1];
      }
    }
  }
}

void warp_backward(const double* img, const double* field, const double* dout, double* dimg,
                   double* dfield, int c, int h, int w) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const double* fx = field;
  const double* fy = field + plane;

  // dfield is data-parallel over pixels; dimg is a scatter, so it is
  // accumulated serially below.
  if (dfield) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const std::int64_t p = static_cast<std::int64_t>(r) * w + col;
        const double sxr = col + fx[p];
        const double syr = r + fy[p];
        const bool in_x = sxr > 0.0 && sxr < static_cast<double>(w - 1);
        const bool in_y = syr > 0.0 && syr < static_cast<double>(h - 1);
        const double sx = std::clamp(sxr, 0.0, static_cast<double>(w - 1));
        const double sy = std::clamp(syr, 0.0, static_cast<double>(h - 1));
        int x0 = std::min(static_cast<int>(sx), w - 2);
        int y0 = std::min(static_cast<int>(sy), h - 2);
        if (w == 1) x0 = 0;
        if (h == 1) y0 = 0;
        const double ax = sx - x0;
        const double ay = sy - y0;
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        double gx = 0.0, gy = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double* src = img + ch * plane;
          const double g = dout[ch * plane + p];
          const double v00 = src[y0 * w + x0], v01 = src[y0 * w + x1];
          const double v10 = src[y1 * w + x0], v11 = src[y1 * w + x1];
          // d(out)/d(sx), d(out)/d(sy); zero where the clamp is active.
          gx += g * ((1.0 - ay) * (v01 - v00) + ay * (v11 - v10));
          gy += g * ((1.0 - ax) * (v10 - v00) + ax * (v11 - v01));
        }
        if (in_x) dfield[p] += gx;
        if (in_y) dfield[plane + p] += gy;
      }
    }
  }

  if (dimg) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const std::int64_t p = static_cast<std::int64_t>(r) * w + col;
        double sx = col + fx[p];
        double sy = r + fy[p];
        sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
        sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        int x0 = std::min(static_cast<int>(sx), w - 2);
        int y0 = std::min(static_cast<int>(sy), h - 2);
        if (w == 1) x0 = 0;
        if (h == 1) y0 = 0;
        const double ax = sx - x0;
        const double ay = sy - y0;
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        for (int ch = 0; ch < c; ++ch) {
          double* dst = dimg + ch * plane;
          const double g = dout[ch * plane + p];
          dst[y0 * w + x0] += g * (1.0 - ay) * (1.0 - ax);
          dst[y0 * w + x1] += g * (1.0 - ay) * ax;
          dst[y1 * w + x0] += g * ay * (1.0 - ax);
          dst[y1 * w + x1] += g * ay * ax;
        }
      }
    }
  }
}

}  // namespace mmalign::kernels
