#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace mmalign {

// Dense row-major double tensor. Shapes are small (<= 4 dims in practice:
// [N,C,H,W] for network activations, [2,H,W] for complex images and
// displacement fields, [C,2,H,W] for multi-coil k-space).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::initializer_list<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v);
  static Tensor from(std::vector<int> shape, std::vector<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2/3/4-d accessors; the caller is responsible for matching ndim.
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int c, int i, int j) {
    return data_[(static_cast<size_t>(c) * shape_[1] + i) * shape_[2] + j];
  }
  double at(int c, int i, int j) const {
    return data_[(static_cast<size_t>(c) * shape_[1] + i) * shape_[2] + j];
  }
  double& at(int n, int c, int i, int j) {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }
  double at(int n, int c, int i, int j) const {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  void fill(double v);
  void zero() { fill(0.0); }
  void scale(double s);
  void add_scaled(const Tensor& other, double s);  // *this += s * other
  Tensor reshaped(std::vector<int> shape) const;   // same numel, new view (copy)

  double sum() const;
  double min() const;
  double max() const;
  double abs_max() const;
  bool all_finite() const;
  bool bitwise_equal(const Tensor& o) const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<int>& shape);

}  // namespace mmalign
