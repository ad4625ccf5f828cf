#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "agra/core/error.hpp"

namespace agra {

// Dense row-major double tensor, rank 0..4. Deliberately minimal: shape
// bookkeeping plus elementwise helpers. Anything resembling linear algebra
// goes through the Eigen views in core/eigen.hpp.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values) {
    check_dims(shape);
    if (static_cast<int64_t>(values.size()) != count(shape))
      throw ValidationError("tensor: data length does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  double at(std::initializer_list<int> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void add_(const Tensor& o) {
    require_same_shape(o, "add_");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }

  void sub_(const Tensor& o) {
    require_same_shape(o, "sub_");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  }

  void scale_(double s) {
    for (double& v : data_) v *= s;
  }

  // += s * o, the fused form optimizers and gradient accumulation want.
  void axpy_(double s, const Tensor& o) {
    require_same_shape(o, "axpy_");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  double item() const {
    if (data_.size() != 1) throw ValidationError("tensor: item() on non-scalar of shape " + shape_str(shape_));
    return data_[0];
  }

  bool all_finite() const;
  double abs_max() const;

  std::string shape_str() const { return shape_str(shape_); }
  static std::string shape_str(const std::vector<int>& s);

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

 private:
  static void check_dims(const std::vector<int>& s) {
    if (s.size() > 4) throw ValidationError("tensor: rank > 4 unsupported");
    for (int d : s)
      if (d <= 0) throw ValidationError("tensor: non-positive dimension in shape " + shape_str(s));
  }

  void require_same_shape(const Tensor& o, const char* op) const {
    if (!same_shape(o))
      throw ValidationError(std::string("tensor: ") + op + " shape mismatch " + shape_str() + " vs " + o.shape_str());
  }

  int64_t offset(std::initializer_list<int> idx) const {
    if (idx.size() != shape_.size()) throw ValidationError("tensor: index rank mismatch");
    int64_t off = 0;
    size_t k = 0;
    for (int i : idx) {
      int d = shape_[k];
      if (i < 0 || i >= d) throw ValidationError("tensor: index out of range");
      off = off * d + i;
      ++k;
    }
    return off;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace agra
