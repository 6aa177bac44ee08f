#pragma once

#include <Eigen/Dense>

namespace pmce {

// Row-major so that row i of a matrix is sample/class i and the in-memory
// order matches the on-disk order.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorF = Eigen::VectorXf;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace pmce
