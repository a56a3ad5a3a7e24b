#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include <Eigen/Core>

#include "acrestore/restoration.hpp"

namespace acrestore::test {

// Central finite differences of evaluate_h over the stacked state.
Eigen::MatrixXd fd_jacobian_of_h(const Network& network, const StateVector& x,
                                 const MeasurementLayout& layout, double step = 1e-6,
                                 const HOptions& opts = {});

// max |a - b| / (1 + |b|) elementwise.
double max_rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Levenberg-Marquardt minimizer of the weighted least squares objective
// J(x) = sum sigma_i (z_i + b_i - h_i(x))^2, using a numeric Jacobian only:
// shares neither jacobian_H nor the Newton normal-equation path with restore.
struct LmResult {
    StateVector x;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

LmResult lm_minimize(const Network& network, const MeasurementSet& z_set,
                     const RestorationParams& params, const StateVector& x0, int max_iter = 400,
                     double gradient_tol = 1e-11);

// Random state around flat: angles uniform in +-angle_range, magnitudes
// uniform in 1 +- mag_range.
StateVector random_state(const Network& network, std::uint64_t seed, double angle_range = 0.2,
                         double mag_range = 0.1);

// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace acrestore::test
