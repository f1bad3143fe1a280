#include "otbr/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace otbr {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_))
    throw DimensionError("tensor payload has " + std::to_string(data_.size()) + " values, shape " +
                         shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  return shape_[axis];
}

float& Tensor::at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
float Tensor::at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

std::span<float> Tensor::row(std::size_t r) {
  std::size_t w = data_.size() / shape_[0];
  return {data_.data() + r * w, w};
}

std::span<const float> Tensor::row(std::size_t r) const {
  std::size_t w = data_.size() / shape_[0];
  return {data_.data() + r * w, w};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && a.data_.size() == b.data_.size() &&
         (a.data_.empty() || std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols)
    throw DimensionError("matrix payload has " + std::to_string(data_.size()) + " values, expected " +
                         std::to_string(rows * cols));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_string(t.shape()));
  Matrix m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.size(); ++i) m.values()[i] = t[i];
  return m;
}

Tensor to_tensor(const Matrix& m) {
  Tensor t({m.rows(), m.cols()});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = static_cast<float>(m.values()[i]);
  return t;
}

namespace {

template <typename A, typename B>
void matmul_into(const A* a, const B* b, std::size_t n, std::size_t k, std::size_t m, std::vector<double>& out) {
  out.assign(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* acc = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const B* br = b + p * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += av * static_cast<double>(br[j]);
    }
  }
}

void check_2d(const Shape& s, const char* what) {
  if (s.size() != 2) throw DimensionError(std::string(what) + " must be 2-D, got " + shape_string(s));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a.shape(), "matmul lhs");
  check_2d(b.shape(), "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  std::vector<double> acc;
  matmul_into(a.data().data(), b.data().data(), a.dim(0), a.dim(1), b.dim(1), acc);
  Tensor out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul inner dimensions differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  std::vector<double> acc;
  matmul_into(a.values().data(), b.values().data(), a.rows(), a.cols(), b.cols(), acc);
  return Matrix(a.rows(), b.cols(), std::move(acc));
}

std::vector<double> row_l1_distance(const Tensor& a, const Tensor& b) {
  check_2d(a.shape(), "row_l1_distance lhs");
  if (a.shape() != b.shape())
    throw DimensionError("row_l1_distance shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.dim(0), 0.0);
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    auto ra = a.row(i);
    auto rb = b.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < ra.size(); ++j) s += std::fabs(static_cast<double>(ra[j]) - static_cast<double>(rb[j]));
    out[i] = s;
  }
  return out;
}

namespace {

template <typename RowA, typename RowB>
double sq_dist(RowA ra, RowB rb) {
  double s = 0.0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    double d = static_cast<double>(ra[k]) - static_cast<double>(rb[k]);
    s += d * d;
  }
  return s;
}

}  // namespace

Tensor pairwise_sq_euclidean(const Tensor& a, const Tensor& b) {
  check_2d(a.shape(), "pairwise_sq_euclidean lhs");
  check_2d(b.shape(), "pairwise_sq_euclidean rhs");
  if (a.dim(1) != b.dim(1))
    throw DimensionError("pairwise_sq_euclidean feature widths differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  Tensor out({a.dim(0), b.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(0); ++j) out.at(i, j) = static_cast<float>(sq_dist(a.row(i), b.row(j)));
  return out;
}

Matrix pairwise_sq_euclidean(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("pairwise_sq_euclidean feature widths differ: " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = sq_dist(a.row(i), b.row(j));
  return out;
}

namespace {

std::uint64_t fnv1a(const void* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t checksum(const Tensor& t) { return fnv1a(t.data().data(), t.size() * sizeof(float)); }
std::uint64_t checksum(const Matrix& m) { return fnv1a(m.values().data(), m.size() * sizeof(double)); }

}  // namespace otbr
