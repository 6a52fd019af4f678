#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cws/error.hpp"

namespace cws {

using Shape = std::array<std::size_t, 2>;

inline std::string to_string(const Shape& s) {
  return "[" + std::to_string(s[0]) + "x" + std::to_string(s[1]) + "]";
}

// Dense row-major matrix of doubles. Vectors are 1xN rows, scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_,
            "Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                to_string(shape()));
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::initializer_list<double> v) {
    return Tensor(1, v.size(), std::vector<double>(v));
  }
  static Tensor row(std::span<const double> v) {
    return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Tensor column(std::span<const double> v) {
    return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.rows(), t.cols()); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  Shape shape() const { return {rows_, cols_}; }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row_span(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }

  double item() const {
    require(is_scalar(), "Tensor::item on non-scalar " + to_string(shape()));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require(shape() == o.shape(), "Tensor +=: " + to_string(shape()) + " vs " + to_string(o.shape()));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace cws
