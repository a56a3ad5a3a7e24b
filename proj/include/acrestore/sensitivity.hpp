#pragma once

#include <Eigen/Core>

#include "acrestore/restoration.hpp"

namespace acrestore {

// Analytic derivatives of the restored state with respect to the weight and
// bias parameters, valid at stationary points of the weighted least squares
// objective. Columns follow z_set.present_indices() order (masked channels
// are removed before assembly).
struct SensitivityBundle {
    Eigen::MatrixXd dx_dsigma;  // n x m_eff, diagonal-weight form
    Eigen::MatrixXd dx_dbias;   // n x m_eff
    StateVector evaluated_at;
    double residual_norm = 0.0;  // ||z + b - h(x_r)||_inf over present channels
};

// Full Kronecker-structured form over every entry of the weight matrix:
// n x m_eff^2, column j*m + i holding the derivative w.r.t. Sigma_{ij}.
// Reference/validation path only; capped at m_eff <= 200.
Eigen::MatrixXd dxr_dsigma_full(const Network& network, const MeasurementSet& z_set,
                                const RestorationParams& params, const StateVector& x_r,
                                const HOptions& opts = {});

// Diagonal-weight sensitivities: column j is the derivative of x_r w.r.t.
// the weight of the j-th present channel.
Eigen::MatrixXd dxr_dsigma_diag(const Network& network, const MeasurementSet& z_set,
                                const RestorationParams& params, const StateVector& x_r,
                                const HOptions& opts = {});

// Bias sensitivities (H' Sigma H)^{-1} H' Sigma evaluated at x_r.
Eigen::MatrixXd dxr_dbias(const Network& network, const MeasurementSet& z_set,
                          const RestorationParams& params, const StateVector& x_r,
                          const HOptions& opts = {});

SensitivityBundle sensitivity_bundle(const Network& network, const MeasurementSet& z_set,
                                     const RestorationParams& params, const StateVector& x_r,
                                     const HOptions& opts = {});

enum class ParamKind { sigma, bias };

// Central-difference validation oracle: (restore(p+step) - restore(p-step))
// / (2 step) for one full-slot parameter entry, each restoration run to
// oracle_eps. Perturbing a masked slot returns zeros. Throws on
// non-convergence at a perturbed point.
Eigen::VectorXd fd_sensitivity_oracle(const Network& network, const MeasurementSet& z_set,
                                      const RestorationParams& params, ParamKind which, int entry,
                                      double step, double oracle_eps = 1e-10,
                                      const HOptions& opts = {});

}  // namespace acrestore
