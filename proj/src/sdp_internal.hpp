#pragma once

#include <string>
#include <vector>

#include "cbfsos/sdp.hpp"

namespace cbfsos::internal {

/// Packages (X, y) into an SdpSolution with residuals recomputed from scratch.
/// y is the multiplier of the minimization form.
SdpSolution finalize(const SdpInstance& inst, const std::vector<Eigen::MatrixXd>& X, const Eigen::VectorXd& y,
                     SdpStatus status, int iterations, std::string message);

SdpSolution solve_interior_point(const SdpInstance& inst, const SdpSettings& settings);

}  // namespace cbfsos::internal
