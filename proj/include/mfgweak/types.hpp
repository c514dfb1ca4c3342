#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace mfgw {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

using u64 = std::uint64_t;

} // namespace mfgw
