#pragma once

#include <vector>

#include <Eigen/Core>

namespace advasr {

// Row-major so flat parameter slices map directly onto matrices.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// Flat parameter/gradient storage. Aligned so that every slice lands at a
// layout-determined alignment; with unaligned heap storage Eigen's peeled
// kernels can reorder reductions between allocations, which breaks bitwise
// run-to-run determinism.
using ParamStore = std::vector<double, Eigen::aligned_allocator<double>>;

using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

}  // namespace advasr
