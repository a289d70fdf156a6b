#pragma once

#include <complex>

#include "mmalign/tensor.hpp"

namespace mmalign::fft {

// Centered, orthonormal 2D Fourier transforms:
//   fft2c(x)  = fftshift(FFT(ifftshift(x))) / sqrt(h*w)
//   ifft2c(k) = fftshift(IFFT(ifftshift(k))) * sqrt(h*w) / (h*w)
// ifft2c(fft2c(x)) == x up to rounding; both preserve the l2 norm.
void fft2c(const std::complex<double>* in, std::complex<double>* out, int h, int w);
void ifft2c(const std::complex<double>* in, std::complex<double>* out, int h, int w);

// Plane-separated variants on [2,h,w] tensors (channel 0 real, 1 imag).
Tensor fft2c(const Tensor& planes);
Tensor ifft2c(const Tensor& planes);

Tensor complex_from_real(const Tensor& real_hw);   // [h,w] or [1,h,w] -> [2,h,w]
Tensor magnitude(const Tensor& planes);            // [2,h,w] -> [1,h,w]

}  // namespace mmalign::fft
