#include "codecipher/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "codecipher/error.hpp"
#include "eigen_view.hpp"

namespace codecipher {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Tensor2D: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Tensor2D::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2D(r, c, std::move(data));
}

void Tensor2D::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor2D::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor2D out(a.rows(), b.cols());
  if (out.empty() || a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b);
  return out;
}

}  // namespace codecipher
