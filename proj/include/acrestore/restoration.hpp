#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "acrestore/powerflow.hpp"

namespace acrestore {

// Stacked simplified-solution quantities treated like noisy measurements.
// Masked-out slots stay in the layout (so sigma/bias keep a fixed length for
// a given source structure) but are removed from every computation.
struct MeasurementSet {
    Eigen::VectorXd values;      // z, length m
    std::vector<char> present;   // mask, length m
    MeasurementLayout layout;
    std::vector<std::string> sources;
    std::string network_fingerprint;

    int size() const { return static_cast<int>(values.size()); }
    int effective_size() const;
    std::vector<int> present_indices() const;

    void check_consistent() const;  // throws on shape mismatch
};

struct RestorationParams {
    Eigen::VectorXd sigma;  // diagonal of the weight matrix, length m
    Eigen::VectorXd bias;   // length m

    static RestorationParams uniform(int m, double sigma_value = 1.0, double bias_value = 0.0);
};

inline constexpr double kSigmaFloor = 1e-8;

struct RestorationResult {
    StateVector x_r;
    int iterations = 0;
    double final_step_norm = 0.0;
    double objective = 0.0;        // J(x_r) over present channels
    Eigen::VectorXd residuals;     // z + b - h(x_r), full length m, zeros where masked
    bool converged = false;
    bool used_damping = false;     // Tikhonov fallback engaged at least once
};

// J(x) = sum over present channels of sigma_i * (z_i + b_i - h_i(x))^2.
double objective_J(const Network& network, const MeasurementSet& z_set,
                   const RestorationParams& params, const StateVector& x,
                   const HOptions& opts = {});

// Newton-Raphson weighted least squares restoration. Iterates
// dx = (H' Sigma H)^{-1} H' Sigma (z + b - h(x)) until ||dx||_inf <= eps,
// computing at least one step. Throws SingularSystemError when the normal
// matrix is unrecoverably rank deficient; plain non-convergence comes back
// with converged = false.
struct RestoreOptions {
    HOptions h;
    bool damped = false;  // halve steps while J increases (off: full Newton)
    double sigma_floor = kSigmaFloor;
};

RestorationResult restore(const Network& network, const MeasurementSet& z_set,
                          const RestorationParams& params, const StateVector& x0,
                          double eps = 1e-6, int max_iter = 50,
                          const RestoreOptions& opts = {});

// Stacks measurement sets from multiple simplified solutions; the state
// dimension is unchanged. Source labels are kept distinct (suffixing
// collisions) and network fingerprints must agree.
MeasurementSet combine_sources(const std::vector<MeasurementSet>& sets);

// x0 from the first source carrying V (and separately theta) channels;
// anything missing comes from a flat start.
StateVector initial_state_from(const Network& network, const MeasurementSet& z_set);

// MeasurementSet JSON:
// {network_fingerprint, sources: [{label, channels: [{quantity, location,
// value, present}]}]} with external bus ids and theta values in degrees.
std::string measurement_set_to_json_text(const Network& network, const MeasurementSet& set);
MeasurementSet measurement_set_from_json_text(const Network& network, const std::string& text,
                                              std::vector<std::string>* warnings = nullptr);

std::string restoration_result_to_json_text(const Network& network, const RestorationResult& r);

}  // namespace acrestore
