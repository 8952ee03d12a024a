#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace adaptable {

// Row-major so that one sample is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using ClassIndex = int;  // zero-based internally, 1..C at file boundaries

inline constexpr double kClampEps = 1e-12;

}  // namespace adaptable
