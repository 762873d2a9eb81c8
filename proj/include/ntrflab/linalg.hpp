#pragma once

#include <Eigen/Dense>

namespace ntrflab {

// Dense row-major storage for everything that is persisted or indexed by
// example; column-major Eigen temporaries are used inside batched kernels.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace ntrflab
