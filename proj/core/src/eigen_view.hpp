#pragma once

#include <Eigen/Core>

#include "codecipher/tensor.hpp"

namespace codecipher {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMajorMatrix>;
using ConstMatrixView = Eigen::Map<const RowMajorMatrix>;

inline MatrixView view(Tensor2D& t) {
  return MatrixView(t.data(), static_cast<Eigen::Index>(t.rows()),
                    static_cast<Eigen::Index>(t.cols()));
}

inline ConstMatrixView view(const Tensor2D& t) {
  return ConstMatrixView(t.data(), static_cast<Eigen::Index>(t.rows()),
                         static_cast<Eigen::Index>(t.cols()));
}

}  // namespace codecipher
