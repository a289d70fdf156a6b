#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmalign/tensor.hpp"

namespace mmalign::ag {

// Dynamic reverse-mode autodiff over Tensor. A fresh graph is built per
// forward pass; parameter leaves persist across passes. backward(root)
// zeroes the gradients of every node reachable from root before
// accumulating, so several backward passes over one shared forward graph
// see clean gradients each time.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  bool grad_allocated = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backfn;  // null for leaves
  const char* op = "leaf";

  Tensor& g();  // ensure grad storage and return it
};

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);
Var constant_scalar(double v);

// Detached copy: same value, no history.
Var detach(const Var& x);

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// --- elementwise / scalar ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var abs(const Var& a);           // subgradient 0 at 0
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var square(const Var& a);
Var sqrt_eps(const Var& a, double eps);  // sqrt(a + eps)

// Scalar (shape [1]) broadcast against a tensor.
Var mul_scalarvar(const Var& a, const Var& s);
Var div_scalarvar(const Var& a, const Var& s);
Var add_scalarvars(const std::vector<std::pair<double, Var>>& terms);  // weighted sum of scalars

// --- reductions ---
Var sum(const Var& a);
Var mean(const Var& a);

// --- shape / structure ---
Var concat_channels(const std::vector<Var>& xs);          // [n,c_i,h,w] -> [n,sum c_i,h,w]
Var slice_channels(const Var& x, int from, int count);    // [n,c,h,w] slice on c
Var reshape(const Var& x, std::vector<int> shape);

// --- neural network ---
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var linear(const Var& x, const Var& w, const Var& b);     // x:[n,f], w:[g,f], b:[g]
Var instance_norm(const Var& x, const Var& gain, const Var& bias, double eps);
Var avg_pool2(const Var& x);                              // 2x2, stride 2
Var upsample_nearest2(const Var& x);
Var global_avg_pool(const Var& x);                        // [n,c,h,w] -> [n,c]

// --- geometry / k-space ---
// image [n,c,h,w], field [n,2,h,w]
Var warp(const Var& image, const Var& field);
// mean of squared forward-difference partials of a [n,2,h,w] field (per
// sample, averaged over n); trailing row/column contribute zero
Var grad_l2_mean(const Var& field);
// [c2,h,w] with c2 even: (re,im) plane pairs transformed per pair
Var fft2c(const Var& x);
Var ifft2c(const Var& x);
Var complex_magnitude(const Var& x, double eps);          // [2,h,w] -> [1,h,w]
// k [2,h,w] (or [c,2,h,w] flattened as [2c,h,w] pairs), y same shape,
// column mask of length w, scalar weight: masked columns get
// (1-w)*k + w*y, others pass through
Var data_consistency(const Var& k, const Tensor& y, const std::vector<char>& mask_cols,
                     const Var& weight);
// sigma = u^T mat(w) v with constant u,v; w viewed as [rows, cols]
Var rank1_sigma(const Var& w, const Tensor& u, const Tensor& v, int rows, int cols);

// complex multiply of plane pairs: (a_re + i a_im) * (b_re + i b_im)
Var complex_mul(const Var& a, const Var& b);
// sum_c conj(maps_c) * x_c : x [coils,2,h,w] const maps -> [2,h,w]
Var coil_reduce(const Var& x, const Tensor& maps);
// maps_c * x : x [2,h,w] -> [coils,2,h,w]
Var coil_expand(const Var& x, const Tensor& maps);

}  // namespace mmalign::ag
