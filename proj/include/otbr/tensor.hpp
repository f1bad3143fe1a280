#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace otbr {

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense float32 tensor, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 2-D access
  float& at(std::size_t r, std::size_t c);
  float at(std::size_t r, std::size_t c) const;
  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  // bitwise equality of shape and payload
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Dense float64 matrix used by the transport solver and fusion arithmetic.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix to_matrix(const Tensor& t);
Tensor to_tensor(const Matrix& m);

// [n×k]·[k×m]; float64 accumulation in index order
Tensor matmul(const Tensor& a, const Tensor& b);
Matrix matmul(const Matrix& a, const Matrix& b);

// per-row L1 distance between equal-shape 2-D tensors
std::vector<double> row_l1_distance(const Tensor& a, const Tensor& b);

// C[i][j] = ||a_i - b_j||^2
Tensor pairwise_sq_euclidean(const Tensor& a, const Tensor& b);
Matrix pairwise_sq_euclidean(const Matrix& a, const Matrix& b);

// 64-bit FNV-1a over the payload bytes, used in traces and determinism checks
std::uint64_t checksum(const Tensor& t);
std::uint64_t checksum(const Matrix& m);

}  // namespace otbr
