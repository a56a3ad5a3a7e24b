#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <Eigen/Dense>

#include "acrestore/common.hpp"
#include "acrestore/sensitivity.hpp"
#include "oracles.hpp"

using namespace acrestore;
namespace t = acrestore::test;

namespace {

const std::filesystem::path kData = ACRESTORE_DATA_DIR;

MeasurementSet full_set(const Network& net, const StateVector& x_ref, double noise,
                        std::uint64_t seed) {
    MeasurementSet set;
    set.network_fingerprint = net.fingerprint();
    set.sources = {"src"};
    set.layout = MeasurementLayout::full_for_source(net, "src");
    set.values = evaluate_h(net, x_ref, set.layout);
    set.present.assign(static_cast<std::size_t>(set.layout.size()), 1);
    SeededRng rng(seed, "sens-noise");
    for (int i = 0; i < set.size(); ++i) set.values[i] += rng.normal(0.0, noise);
    return set;
}

RestorationParams random_params(int m, std::uint64_t seed) {
    SeededRng rng(seed, "sens-params");
    RestorationParams p = RestorationParams::uniform(m);
    for (int i = 0; i < m; ++i) {
        p.sigma[i] = std::exp(rng.uniform(-0.7, 0.7));
        p.bias[i] = rng.uniform(-1e-3, 1e-3);
    }
    return p;
}

StateVector tight_restore(const Network& net, const MeasurementSet& set,
                          const RestorationParams& params) {
    const RestorationResult r =
        restore(net, set, params, initial_state_from(net, set), 1e-10, 100);
    REQUIRE(r.converged);
    return r.x_r;
}

}  // namespace

TEST_CASE("zero residual annihilates the weight sensitivities") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x_star = t::random_state(net, 40, 0.1, 0.05);
    const MeasurementSet set = full_set(net, x_star, 0.0, 1);
    const RestorationParams params = RestorationParams::uniform(set.size());
    const StateVector x_r = tight_restore(net, set, params);

    const Eigen::MatrixXd diag = dxr_dsigma_diag(net, set, params, x_r);
    CHECK(diag.cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::MatrixXd full = dxr_dsigma_full(net, set, params, x_r);
    CHECK(full.cwiseAbs().maxCoeff() < 1e-9);

    const SensitivityBundle bundle = sensitivity_bundle(net, set, params, x_r);
    CHECK(bundle.residual_norm < 1e-12);
    CHECK(bundle.dx_dsigma.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("diagonal weight sensitivities match finite differences") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x_star = t::random_state(net, 41, 0.1, 0.05);
    const MeasurementSet set = full_set(net, x_star, 1e-3, 2);
    const RestorationParams params = random_params(set.size(), 3);
    const StateVector x_r = tight_restore(net, set, params);
    const Eigen::MatrixXd diag = dxr_dsigma_diag(net, set, params, x_r);

    for (int entry : {0, 7, 19, 31, 42}) {
        const Eigen::VectorXd fd =
            fd_sensitivity_oracle(net, set, params, ParamKind::sigma, entry, 1e-5);
        CHECK(t::max_rel_err(diag.col(entry), fd) < 1e-4);
    }
}

TEST_CASE("bias sensitivities match finite differences") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x_star = t::random_state(net, 42, 0.1, 0.05);
    const MeasurementSet set = full_set(net, x_star, 1e-3, 4);
    const RestorationParams params = random_params(set.size(), 5);
    const StateVector x_r = tight_restore(net, set, params);
    const Eigen::MatrixXd db = dxr_dbias(net, set, params, x_r);

    for (int entry : {1, 11, 23, 37, 40}) {
        const Eigen::VectorXd fd =
            fd_sensitivity_oracle(net, set, params, ParamKind::bias, entry, 1e-6);
        CHECK(t::max_rel_err(db.col(entry), fd) < 1e-4);
    }
}

TEST_CASE("full form's diagonal slice equals the diagonal form") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x_star = t::random_state(net, 43, 0.1, 0.05);
    const MeasurementSet set = full_set(net, x_star, 2e-3, 6);
    const RestorationParams params = random_params(set.size(), 7);
    const StateVector x_r = tight_restore(net, set, params);

    const Eigen::MatrixXd diag = dxr_dsigma_diag(net, set, params, x_r);
    const Eigen::MatrixXd full = dxr_dsigma_full(net, set, params, x_r);
    const int m = set.effective_size();
    for (int j = 0; j < m; ++j) {
        const Eigen::VectorXd slice = full.col(static_cast<Eigen::Index>(j) * m + j);
        CHECK((slice - diag.col(j)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("square invertible case reduces the bias sensitivity to H^-1") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x_star = t::random_state(net, 44, 0.1, 0.05);
    // V at all buses + theta at all non-slack: identity rows, H a permutation.
    MeasurementSet set;
    set.network_fingerprint = net.fingerprint();
    set.sources = {"sq"};
    for (int b = 0; b < net.bus_count(); ++b)
        set.layout.channels.push_back({Quantity::V, b, -1, LineEnd::forward, "sq"});
    for (int b = 0; b < net.bus_count(); ++b)
        if (b != net.slack_index())
            set.layout.channels.push_back({Quantity::theta, b, -1, LineEnd::forward, "sq"});
    set.values = evaluate_h(net, x_star, set.layout);
    set.present.assign(static_cast<std::size_t>(set.layout.size()), 1);

    RestorationParams params = random_params(set.size(), 8);
    params.bias.setZero();
    const StateVector x_r = tight_restore(net, set, params);

    const Eigen::MatrixXd H = jacobian_H(net, x_r, set.layout);
    const Eigen::MatrixXd h_inv = H.inverse();
    const Eigen::MatrixXd db = dxr_dbias(net, set, params, x_r);
    CHECK((db - h_inv).cwiseAbs().maxCoeff() < 1e-10);

    // magnitude block of H^-1 is an identity on the observed magnitudes
    const int n_ang = net.bus_count() - 1;
    for (int b = 0; b < net.bus_count(); ++b)
        CHECK(db(n_ang + b, b) == doctest::Approx(1.0).epsilon(1e-12));

    // FD oracle agrees column-wise on a couple of entries
    for (int entry : {0, 5}) {
        const Eigen::VectorXd fd =
            fd_sensitivity_oracle(net, set, params, ParamKind::bias, entry, 1e-6);
        CHECK(t::max_rel_err(h_inv.col(entry), fd) < 1e-6);
    }
}

TEST_CASE("fd oracle on a zero-residual instance is near zero") {
    const Network net = load_case(kData / "case2.json");
    const StateVector x_star = t::random_state(net, 45, 0.1, 0.05);
    const MeasurementSet set = full_set(net, x_star, 0.0, 9);
    const RestorationParams params = RestorationParams::uniform(set.size());
    const Eigen::VectorXd fd =
        fd_sensitivity_oracle(net, set, params, ParamKind::sigma, 2, 1e-5);
    CHECK(fd.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("fd discrepancy shrinks about quadratically with the step") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x_star = t::random_state(net, 46, 0.1, 0.05);
    const MeasurementSet set = full_set(net, x_star, 1e-3, 10);
    const RestorationParams params = random_params(set.size(), 11);
    const StateVector x_r = tight_restore(net, set, params);
    const Eigen::MatrixXd diag = dxr_dsigma_diag(net, set, params, x_r);

    const int entry = 13;
    // steps large enough that central-difference truncation dominates the
    // formula's own stationary-point bias floor (~1e-9 on this instance)
    const double h1 = 0.2, h2 = 0.1;
    const double e1 =
        (fd_sensitivity_oracle(net, set, params, ParamKind::sigma, entry, h1) - diag.col(entry))
            .cwiseAbs()
            .maxCoeff();
    const double e2 =
        (fd_sensitivity_oracle(net, set, params, ParamKind::sigma, entry, h2) - diag.col(entry))
            .cwiseAbs()
            .maxCoeff();
    // truncation ~ step^2: halving the step should cut the discrepancy ~4x
    CHECK(e1 / std::max(e2, 1e-16) > 2.5);
    CHECK(e1 / std::max(e2, 1e-16) < 6.0);
}

TEST_CASE("full weight-sensitivity form refuses oversized systems") {
    const Network net = load_case(kData / "case14.json");
    const StateVector x = t::random_state(net, 48, 0.05, 0.02);
    // two stacked full sources on the 14-bus case: 270 channels > the cap
    MeasurementSet one = full_set(net, x, 0.0, 13);
    const MeasurementSet both = combine_sources({one, one});
    const RestorationParams params = RestorationParams::uniform(both.size());
    CHECK_THROWS_AS(dxr_dsigma_full(net, both, params, x), std::invalid_argument);
    // the diagonal form has no such cap
    CHECK_NOTHROW(dxr_dsigma_diag(net, both, params, x));
}

TEST_CASE("masked slots report zero sensitivity through the oracle") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x_star = t::random_state(net, 47, 0.1, 0.05);
    MeasurementSet set = full_set(net, x_star, 1e-3, 12);
    set.present[5] = 0;
    const RestorationParams params = RestorationParams::uniform(set.size());
    const Eigen::VectorXd fd =
        fd_sensitivity_oracle(net, set, params, ParamKind::sigma, 5, 1e-5);
    CHECK(fd.cwiseAbs().maxCoeff() == 0.0);
}
