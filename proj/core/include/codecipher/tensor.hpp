#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace codecipher {

/// Dense row-major matrix of doubles.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  void fill(double v);
  bool all_finite() const noexcept;

  bool operator==(const Tensor2D& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Plain matrix product, no gradient recording. Throws ShapeError on mismatch.
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);

}  // namespace codecipher
