#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ifield {

// Dense row-major 2-D array of doubles. Scalars are 1x1, vectors are 1xC or Nx1.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Tensor: data size does not match shape");
    }
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  static Tensor row_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(1, n, std::move(v));
  }

  static Tensor column_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(n, 1, std::move(v));
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t;
    t.rows_ = rows.size();
    t.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    t.data_.reserve(t.rows_ * t.cols_);
    for (const auto& r : rows) {
      if (r.size() != t.cols_) throw std::invalid_argument("Tensor: ragged rows");
      t.data_.insert(t.data_.end(), r.begin(), r.end());
    }
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (!is_scalar()) throw std::logic_error("Tensor::item on non-scalar " + shape_string());
    return data_[0];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("Tensor +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << "(" << rows_ << "x" << cols_ << ")";
    return os.str();
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace ifield
