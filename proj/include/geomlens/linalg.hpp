#pragma once

#include <Eigen/Dense>

namespace geomlens {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace geomlens
