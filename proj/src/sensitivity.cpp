#include "acrestore/sensitivity.hpp"

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "acrestore/common.hpp"

namespace acrestore {

namespace {

struct Pieces {
    Eigen::MatrixXd gain;      // A = (H' Sigma H)^{-1} H', n x m_eff
    Eigen::VectorXd sigma;     // clamped effective weights
    Eigen::VectorXd residual;  // r = z + b - h(x_r)
    Eigen::VectorXd deflated;  // c = r - H (H' Sigma H)^{-1} H' Sigma r
};

Pieces assemble(const Network& network, const MeasurementSet& z_set,
                const RestorationParams& params, const StateVector& x_r, const HOptions& opts) {
    z_set.check_consistent();
    if (params.sigma.size() != z_set.size() || params.bias.size() != z_set.size())
        throw std::invalid_argument("params length does not match measurement set");

    const std::vector<int> slots = z_set.present_indices();
    const int m_eff = static_cast<int>(slots.size());
    const int n = x_r.n();
    if (m_eff < n)
        throw SingularSystemError("underdetermined sensitivity system", n - m_eff);

    MeasurementLayout layout;
    layout.channels.reserve(static_cast<std::size_t>(m_eff));
    Eigen::VectorXd z_plus_b(m_eff), sigma(m_eff);
    for (int i = 0; i < m_eff; ++i) {
        const int s = slots[static_cast<std::size_t>(i)];
        layout.channels.push_back(z_set.layout.channels[static_cast<std::size_t>(s)]);
        z_plus_b[i] = z_set.values[s] + params.bias[s];
        sigma[i] = std::max(params.sigma[s], kSigmaFloor);
    }

    const Eigen::MatrixXd H = jacobian_H(network, x_r, layout, opts);
    const Eigen::MatrixXd normal = H.transpose() * sigma.asDiagonal() * H;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success)
        throw SingularSystemError("singular normal matrix in sensitivity assembly");

    Pieces p;
    p.sigma = sigma;
    p.residual = z_plus_b - evaluate_h(network, x_r, layout, opts);
    p.gain = ldlt.solve(H.transpose());
    if (!p.gain.allFinite())
        throw SingularSystemError("singular normal matrix in sensitivity assembly");
    const Eigen::VectorXd projected = p.gain * sigma.cwiseProduct(p.residual);
    p.deflated = p.residual - H * projected;
    return p;
}

}  // namespace

Eigen::MatrixXd dxr_dsigma_full(const Network& network, const MeasurementSet& z_set,
                                const RestorationParams& params, const StateVector& x_r,
                                const HOptions& opts) {
    const Pieces p = assemble(network, z_set, params, x_r, opts);
    const int m = static_cast<int>(p.residual.size());
    if (m > 200)
        throw std::invalid_argument("full weight-sensitivity form capped at 200 channels, got " +
                                    std::to_string(m));
    const int n = static_cast<int>(p.gain.rows());
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(m) * m);
    for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i)
            out.col(static_cast<Eigen::Index>(j) * m + i) = p.deflated[j] * p.gain.col(i);
    return out;
}

Eigen::MatrixXd dxr_dsigma_diag(const Network& network, const MeasurementSet& z_set,
                                const RestorationParams& params, const StateVector& x_r,
                                const HOptions& opts) {
    const Pieces p = assemble(network, z_set, params, x_r, opts);
    return p.gain * p.deflated.asDiagonal();
}

Eigen::MatrixXd dxr_dbias(const Network& network, const MeasurementSet& z_set,
                          const RestorationParams& params, const StateVector& x_r,
                          const HOptions& opts) {
    const Pieces p = assemble(network, z_set, params, x_r, opts);
    return p.gain * p.sigma.asDiagonal();
}

SensitivityBundle sensitivity_bundle(const Network& network, const MeasurementSet& z_set,
                                     const RestorationParams& params, const StateVector& x_r,
                                     const HOptions& opts) {
    const Pieces p = assemble(network, z_set, params, x_r, opts);
    SensitivityBundle b;
    b.dx_dsigma = p.gain * p.deflated.asDiagonal();
    b.dx_dbias = p.gain * p.sigma.asDiagonal();
    b.evaluated_at = x_r;
    b.residual_norm = p.residual.size() ? p.residual.cwiseAbs().maxCoeff() : 0.0;
    return b;
}

Eigen::VectorXd fd_sensitivity_oracle(const Network& network, const MeasurementSet& z_set,
                                      const RestorationParams& params, ParamKind which, int entry,
                                      double step, double oracle_eps, const HOptions& opts) {
    if (entry < 0 || entry >= z_set.size())
        throw std::out_of_range("parameter entry " + std::to_string(entry) + " out of range");
    if (!z_set.present[static_cast<std::size_t>(entry)]) {
        const StateVector flat = StateVector::flat(network);
        return Eigen::VectorXd::Zero(flat.n());
    }

    RestoreOptions ropts;
    ropts.h = opts;
    const StateVector x0 = initial_state_from(network, z_set);
    const RestorationResult base = restore(network, z_set, params, x0, oracle_eps, 100, ropts);
    if (!base.converged)
        throw std::runtime_error("fd oracle: base restoration did not converge");

    const auto perturbed = [&](double delta) {
        RestorationParams p = params;
        if (which == ParamKind::sigma)
            p.sigma[entry] += delta;
        else
            p.bias[entry] += delta;
        const RestorationResult r = restore(network, z_set, p, base.x_r, oracle_eps, 100, ropts);
        if (!r.converged)
            throw std::runtime_error("fd oracle: perturbed restoration did not converge (delta=" +
                                     std::to_string(delta) + ")");
        return r.x_r.stacked();
    };

    return (perturbed(step) - perturbed(-step)) / (2.0 * step);
}

}  // namespace acrestore
