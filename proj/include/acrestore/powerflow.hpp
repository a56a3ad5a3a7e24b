#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "acrestore/network.hpp"

namespace acrestore {

// State x = [theta; V]: voltage angles at non-slack buses (radians, internal
// bus order) followed by voltage magnitudes at all buses (per-unit). n = 2N-1.
struct StateVector {
    Eigen::VectorXd angles;      // length N-1
    Eigen::VectorXd magnitudes;  // length N
    int slack_index = 0;

    int bus_count() const { return static_cast<int>(magnitudes.size()); }
    int n() const { return static_cast<int>(angles.size() + magnitudes.size()); }

    // -1 for the slack bus, otherwise the position inside the angle block.
    int angle_position(int bus) const {
        if (bus == slack_index) return -1;
        return bus < slack_index ? bus : bus - 1;
    }
    double angle_of(int bus) const {
        const int p = angle_position(bus);
        return p < 0 ? 0.0 : angles[p];
    }

    Eigen::VectorXd stacked() const;
    static StateVector from_stacked(const Eigen::VectorXd& x, int slack_index, int bus_count);
    static StateVector flat(const Network& network);
};

enum class Quantity { V, P, Q, Pf, Qf, theta };

std::string to_string(Quantity q);
Quantity quantity_from_string(const std::string& s);

// One slot of z / h(x): a quantity at a bus or at a line end, tagged with the
// simplified-solution source it came from.
struct Channel {
    Quantity quantity = Quantity::V;
    int bus = -1;                     // V, P, Q, theta
    int line = -1;                    // Pf, Qf
    LineEnd end = LineEnd::forward;   // Pf, Qf
    std::string source;
};

struct MeasurementLayout {
    std::vector<Channel> channels;

    int size() const { return static_cast<int>(channels.size()); }
    std::string fingerprint() const;

    // Every quantity the source could report, in h(x) block order
    // [V; P; Q; Pf; Qf; theta]: V/P/Q at all buses, flows at all line ends
    // (all forward, then all reverse), theta at non-slack buses.
    static MeasurementLayout full_for_source(const Network& network, const std::string& source);

    // Throws if a channel references a missing bus/line or a slack theta.
    void check_against(const Network& network) const;
};

struct HOptions {
    bool include_bus_shunt = true;  // fold V^2*(gs - j*bs) into P/Q injections
};

Eigen::VectorXd evaluate_h(const Network& network, const StateVector& x,
                           const MeasurementLayout& layout, const HOptions& opts = {});

// m x n analytic Jacobian of evaluate_h, column order [theta block; V block].
Eigen::MatrixXd jacobian_H(const Network& network, const StateVector& x,
                           const MeasurementLayout& layout, const HOptions& opts = {});

// ---------------------------------------------------------------------------
// Conventional power flow: fix enough per-bus quantities for a square system.
// ---------------------------------------------------------------------------

struct PowerFlowSpec {
    std::vector<std::optional<double>> fixed_v;  // per internal bus
    std::vector<std::optional<double>> fixed_p;  // net injection targets
    std::vector<std::optional<double>> fixed_q;

    explicit PowerFlowSpec(int bus_count)
        : fixed_v(static_cast<std::size_t>(bus_count)),
          fixed_p(static_cast<std::size_t>(bus_count)),
          fixed_q(static_cast<std::size_t>(bus_count)) {}
};

struct PowerFlowResult {
    StateVector state;
    int iterations = 0;
    bool converged = false;
    double max_mismatch = 0.0;
    std::string message;
};

PowerFlowResult solve_power_flow(const Network& network, const PowerFlowSpec& spec,
                                 const StateVector& x0, double tol = 1e-6, int max_iter = 50,
                                 const HOptions& opts = {});

// Max |fixed quantity - h(x)| over all fixed entries of the spec.
double pf_mismatch(const Network& network, const PowerFlowSpec& spec, const StateVector& x,
                   const HOptions& opts = {});

// ---------------------------------------------------------------------------
// Independent injection route for feasibility re-checks: bus injections from
// the nodal admittance matrix S_i = V_i * conj(sum_k Y_ik V_k), compared
// against the per-line flow sums used by evaluate_h.
// ---------------------------------------------------------------------------

Eigen::VectorXcd ybus_injections(const Network& network, const StateVector& x);
Eigen::VectorXcd line_sum_injections(const Network& network, const StateVector& x,
                                     const HOptions& opts = {});
double injection_consistency_residual(const Network& network, const StateVector& x);

// State snapshot JSON: {"angles_deg": [...], "magnitudes": [...], "slack": id},
// all buses in case-file order, angles in degrees at the I/O boundary.
std::string state_to_json_text(const Network& network, const StateVector& x);
StateVector state_from_json_text(const Network& network, const std::string& text);

}  // namespace acrestore
