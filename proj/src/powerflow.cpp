#include "acrestore/powerflow.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "acrestore/common.hpp"

namespace acrestore {

using nlohmann::json;

Eigen::VectorXd StateVector::stacked() const {
    Eigen::VectorXd x(n());
    x.head(angles.size()) = angles;
    x.tail(magnitudes.size()) = magnitudes;
    return x;
}

StateVector StateVector::from_stacked(const Eigen::VectorXd& x, int slack_index, int bus_count) {
    StateVector s;
    s.slack_index = slack_index;
    s.angles = x.head(bus_count - 1);
    s.magnitudes = x.tail(bus_count);
    return s;
}

StateVector StateVector::flat(const Network& network) {
    StateVector s;
    s.slack_index = network.slack_index();
    s.angles = Eigen::VectorXd::Zero(network.bus_count() - 1);
    s.magnitudes = Eigen::VectorXd::Ones(network.bus_count());
    return s;
}

std::string to_string(Quantity q) {
    switch (q) {
        case Quantity::V: return "V";
        case Quantity::P: return "P";
        case Quantity::Q: return "Q";
        case Quantity::Pf: return "Pf";
        case Quantity::Qf: return "Qf";
        case Quantity::theta: return "theta";
    }
    return "V";
}

Quantity quantity_from_string(const std::string& s) {
    if (s == "V") return Quantity::V;
    if (s == "P") return Quantity::P;
    if (s == "Q") return Quantity::Q;
    if (s == "Pf") return Quantity::Pf;
    if (s == "Qf") return Quantity::Qf;
    if (s == "theta") return Quantity::theta;
    throw ParseError("unknown quantity '" + s + "'");
}

std::string MeasurementLayout::fingerprint() const {
    Fnv1a h;
    h.feed(size());
    for (const Channel& c : channels) {
        h.feed(static_cast<int>(c.quantity));
        h.feed(c.bus);
        h.feed(c.line);
        h.feed(c.end == LineEnd::forward ? 0 : 1);
        h.feed(c.source);
    }
    return h.hex();
}

MeasurementLayout MeasurementLayout::full_for_source(const Network& network,
                                                     const std::string& source) {
    MeasurementLayout layout;
    const int n_bus = network.bus_count();
    const int n_line = network.line_count();
    layout.channels.reserve(static_cast<std::size_t>(3 * n_bus + 4 * n_line + n_bus - 1));
    for (Quantity q : {Quantity::V, Quantity::P, Quantity::Q})
        for (int b = 0; b < n_bus; ++b)
            layout.channels.push_back({q, b, -1, LineEnd::forward, source});
    for (Quantity q : {Quantity::Pf, Quantity::Qf})
        for (LineEnd end : {LineEnd::forward, LineEnd::reverse})
            for (int l = 0; l < n_line; ++l)
                layout.channels.push_back({q, -1, l, end, source});
    for (int b = 0; b < n_bus; ++b)
        if (b != network.slack_index())
            layout.channels.push_back({Quantity::theta, b, -1, LineEnd::forward, source});
    return layout;
}

void MeasurementLayout::check_against(const Network& network) const {
    for (int i = 0; i < size(); ++i) {
        const Channel& c = channels[static_cast<std::size_t>(i)];
        switch (c.quantity) {
            case Quantity::V:
            case Quantity::P:
            case Quantity::Q:
            case Quantity::theta:
                if (c.bus < 0 || c.bus >= network.bus_count())
                    throw std::out_of_range("channel " + std::to_string(i) + ": bus index " +
                                            std::to_string(c.bus) + " out of range");
                if (c.quantity == Quantity::theta && c.bus == network.slack_index())
                    throw ValidationError("channel " + std::to_string(i) +
                                          ": theta channel at slack bus");
                break;
            case Quantity::Pf:
            case Quantity::Qf:
                if (c.line < 0 || c.line >= network.line_count())
                    throw std::out_of_range("channel " + std::to_string(i) + ": line index " +
                                            std::to_string(c.line) + " out of range");
                break;
        }
    }
}

namespace {

// Value and state partials of the complex flow leaving one line end.
struct FlowTerms {
    int own = 0;    // bus at this end
    int other = 0;  // bus at the far end
    double p = 0, q = 0;
    double dp_dth_own = 0, dp_dth_other = 0, dp_dv_own = 0, dp_dv_other = 0;
    double dq_dth_own = 0, dq_dth_other = 0, dq_dv_own = 0, dq_dv_other = 0;
};

FlowTerms flow_terms(const Network& network, int line_index, LineEnd end, const StateVector& x) {
    const Line& line = network.line(line_index);
    const auto [y_series, y_shunt] = admittance_of(network, line_index, end);
    FlowTerms t;
    t.own = end == LineEnd::forward ? line.from_bus : line.to_bus;
    t.other = end == LineEnd::forward ? line.to_bus : line.from_bus;

    const double g = y_series.real(), b = y_series.imag();
    const double gsh = y_shunt.real(), bsh = y_shunt.imag();
    const double vi = x.magnitudes[t.own], vj = x.magnitudes[t.other];
    const double delta = x.angle_of(t.own) - x.angle_of(t.other);
    const double cd = std::cos(delta), sd = std::sin(delta);
    const double gc_bs = g * cd + b * sd;  // g cos + b sin
    const double gs_bc = g * sd - b * cd;  // g sin - b cos

    t.p = vi * vi * (g + gsh) - vi * vj * gc_bs;
    t.q = -vi * vi * (b + bsh) - vi * vj * gs_bc;

    t.dp_dth_own = vi * vj * gs_bc;
    t.dp_dth_other = -t.dp_dth_own;
    t.dp_dv_own = 2.0 * vi * (g + gsh) - vj * gc_bs;
    t.dp_dv_other = -vi * gc_bs;

    t.dq_dth_own = -vi * vj * gc_bs;
    t.dq_dth_other = vi * vj * gc_bs;
    t.dq_dv_own = -2.0 * vi * (b + bsh) - vj * gs_bc;
    t.dq_dv_other = -vi * gs_bc;
    return t;
}

}  // namespace

Eigen::VectorXd evaluate_h(const Network& network, const StateVector& x,
                           const MeasurementLayout& layout, const HOptions& opts) {
    layout.check_against(network);
    Eigen::VectorXd h(layout.size());
    for (int i = 0; i < layout.size(); ++i) {
        const Channel& c = layout.channels[static_cast<std::size_t>(i)];
        switch (c.quantity) {
            case Quantity::V:
                h[i] = x.magnitudes[c.bus];
                break;
            case Quantity::theta:
                h[i] = x.angle_of(c.bus);
                break;
            case Quantity::Pf:
                h[i] = flow_terms(network, c.line, c.end, x).p;
                break;
            case Quantity::Qf:
                h[i] = flow_terms(network, c.line, c.end, x).q;
                break;
            case Quantity::P: {
                double sum = 0.0;
                for (auto [l, end] : network.incident(c.bus)) sum += flow_terms(network, l, end, x).p;
                if (opts.include_bus_shunt) {
                    const double v = x.magnitudes[c.bus];
                    sum += v * v * network.bus(c.bus).g_shunt;
                }
                h[i] = sum;
                break;
            }
            case Quantity::Q: {
                double sum = 0.0;
                for (auto [l, end] : network.incident(c.bus)) sum += flow_terms(network, l, end, x).q;
                if (opts.include_bus_shunt) {
                    const double v = x.magnitudes[c.bus];
                    sum -= v * v * network.bus(c.bus).b_shunt;
                }
                h[i] = sum;
                break;
            }
        }
    }
    return h;
}

Eigen::MatrixXd jacobian_H(const Network& network, const StateVector& x,
                           const MeasurementLayout& layout, const HOptions& opts) {
    layout.check_against(network);
    const int n_bus = network.bus_count();
    const int n_ang = n_bus - 1;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(layout.size(), x.n());

    const auto ang_col = [&](int bus) { return x.angle_position(bus); };
    const auto mag_col = [&](int bus) { return n_ang + bus; };

    const auto add_flow = [&](int row, const FlowTerms& t, bool active) {
        const int ai = ang_col(t.own), aj = ang_col(t.other);
        if (active) {
            if (ai >= 0) H(row, ai) += t.dp_dth_own;
            if (aj >= 0) H(row, aj) += t.dp_dth_other;
            H(row, mag_col(t.own)) += t.dp_dv_own;
            H(row, mag_col(t.other)) += t.dp_dv_other;
        } else {
            if (ai >= 0) H(row, ai) += t.dq_dth_own;
            if (aj >= 0) H(row, aj) += t.dq_dth_other;
            H(row, mag_col(t.own)) += t.dq_dv_own;
            H(row, mag_col(t.other)) += t.dq_dv_other;
        }
    };

    for (int i = 0; i < layout.size(); ++i) {
        const Channel& c = layout.channels[static_cast<std::size_t>(i)];
        switch (c.quantity) {
            case Quantity::V:
                H(i, mag_col(c.bus)) = 1.0;
                break;
            case Quantity::theta:
                H(i, ang_col(c.bus)) = 1.0;
                break;
            case Quantity::Pf:
                add_flow(i, flow_terms(network, c.line, c.end, x), true);
                break;
            case Quantity::Qf:
                add_flow(i, flow_terms(network, c.line, c.end, x), false);
                break;
            case Quantity::P:
                for (auto [l, end] : network.incident(c.bus))
                    add_flow(i, flow_terms(network, l, end, x), true);
                if (opts.include_bus_shunt)
                    H(i, mag_col(c.bus)) += 2.0 * x.magnitudes[c.bus] * network.bus(c.bus).g_shunt;
                break;
            case Quantity::Q:
                for (auto [l, end] : network.incident(c.bus))
                    add_flow(i, flow_terms(network, l, end, x), false);
                if (opts.include_bus_shunt)
                    H(i, mag_col(c.bus)) -= 2.0 * x.magnitudes[c.bus] * network.bus(c.bus).b_shunt;
                break;
        }
    }
    return H;
}

double pf_mismatch(const Network& network, const PowerFlowSpec& spec, const StateVector& x,
                   const HOptions& opts) {
    MeasurementLayout layout;
    std::vector<double> targets;
    for (int b = 0; b < network.bus_count(); ++b) {
        if (spec.fixed_p[static_cast<std::size_t>(b)]) {
            layout.channels.push_back({Quantity::P, b, -1, LineEnd::forward, ""});
            targets.push_back(*spec.fixed_p[static_cast<std::size_t>(b)]);
        }
        if (spec.fixed_q[static_cast<std::size_t>(b)]) {
            layout.channels.push_back({Quantity::Q, b, -1, LineEnd::forward, ""});
            targets.push_back(*spec.fixed_q[static_cast<std::size_t>(b)]);
        }
    }
    double worst = 0.0;
    const Eigen::VectorXd h = evaluate_h(network, x, layout, opts);
    for (int i = 0; i < static_cast<int>(targets.size()); ++i)
        worst = std::max(worst, std::abs(h[i] - targets[static_cast<std::size_t>(i)]));
    for (int b = 0; b < network.bus_count(); ++b)
        if (spec.fixed_v[static_cast<std::size_t>(b)])
            worst = std::max(worst, std::abs(x.magnitudes[b] - *spec.fixed_v[static_cast<std::size_t>(b)]));
    return worst;
}

PowerFlowResult solve_power_flow(const Network& network, const PowerFlowSpec& spec,
                                 const StateVector& x0, double tol, int max_iter,
                                 const HOptions& opts) {
    const int n_bus = network.bus_count();
    const int n_ang = n_bus - 1;
    if (static_cast<int>(spec.fixed_v.size()) != n_bus)
        throw std::invalid_argument("power flow spec size does not match network");

    // Equation rows: P balance wherever P is fixed, Q balance wherever Q is.
    MeasurementLayout eq_layout;
    std::vector<double> targets;
    for (int b = 0; b < n_bus; ++b) {
        if (spec.fixed_p[static_cast<std::size_t>(b)]) {
            eq_layout.channels.push_back({Quantity::P, b, -1, LineEnd::forward, ""});
            targets.push_back(*spec.fixed_p[static_cast<std::size_t>(b)]);
        }
        if (spec.fixed_q[static_cast<std::size_t>(b)]) {
            eq_layout.channels.push_back({Quantity::Q, b, -1, LineEnd::forward, ""});
            targets.push_back(*spec.fixed_q[static_cast<std::size_t>(b)]);
        }
    }

    // Unknown columns: every non-slack angle, plus V wherever not fixed.
    std::vector<int> unknown_cols;
    for (int b = 0; b < n_bus; ++b)
        if (b != network.slack_index()) unknown_cols.push_back(b < network.slack_index() ? b : b - 1);
    for (int b = 0; b < n_bus; ++b)
        if (!spec.fixed_v[static_cast<std::size_t>(b)]) unknown_cols.push_back(n_ang + b);

    const int n_eq = static_cast<int>(targets.size());
    const int n_unknown = static_cast<int>(unknown_cols.size());
    if (n_eq != n_unknown)
        throw std::invalid_argument("power flow spec is not square: " + std::to_string(n_eq) +
                                    " equations vs " + std::to_string(n_unknown) + " unknowns");

    StateVector x = x0;
    x.slack_index = network.slack_index();
    for (int b = 0; b < n_bus; ++b)
        if (spec.fixed_v[static_cast<std::size_t>(b)])
            x.magnitudes[b] = *spec.fixed_v[static_cast<std::size_t>(b)];

    const Eigen::Map<const Eigen::VectorXd> target_vec(targets.data(), n_eq);

    PowerFlowResult result;
    result.state = x;
    result.max_mismatch = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter <= max_iter; ++iter) {
        const Eigen::VectorXd mismatch = evaluate_h(network, x, eq_layout, opts) - target_vec;
        const double worst = mismatch.cwiseAbs().maxCoeff();
        if (std::isfinite(worst) && worst < result.max_mismatch) {
            result.max_mismatch = worst;
            result.state = x;
        }
        if (!std::isfinite(worst)) {
            result.message = "diverged: non-finite mismatch at iteration " + std::to_string(iter);
            return result;
        }
        if (worst <= tol) {
            result.converged = true;
            result.iterations = iter;
            return result;
        }
        if (iter == max_iter) break;

        const Eigen::MatrixXd H_full = jacobian_H(network, x, eq_layout, opts);
        Eigen::MatrixXd J(n_eq, n_unknown);
        for (int c = 0; c < n_unknown; ++c) J.col(c) = H_full.col(unknown_cols[static_cast<std::size_t>(c)]);

        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) {
            const auto& u = lu.matrixLU();
            double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
            for (int d = 0; d < std::min(n_eq, n_unknown); ++d) {
                const double a = std::abs(u(d, d));
                dmax = std::max(dmax, a);
                dmin = std::min(dmin, a);
            }
            std::ostringstream msg;
            msg << "singular power flow Jacobian at iteration " << iter
                << " (pivot ratio ~" << (dmin > 0 ? dmax / dmin : std::numeric_limits<double>::infinity())
                << ")";
            throw SingularSystemError(msg.str());
        }
        const Eigen::VectorXd step = lu.solve(-mismatch);

        Eigen::VectorXd stacked = x.stacked();
        for (int c = 0; c < n_unknown; ++c) stacked[unknown_cols[static_cast<std::size_t>(c)]] += step[c];
        x = StateVector::from_stacked(stacked, network.slack_index(), n_bus);
        result.iterations = iter + 1;
    }

    result.message = "did not converge within " + std::to_string(max_iter) +
                     " iterations (best mismatch " + std::to_string(result.max_mismatch) + ")";
    return result;
}

Eigen::VectorXcd ybus_injections(const Network& network, const StateVector& x) {
    const int n = network.bus_count();
    Eigen::MatrixXcd ybus = Eigen::MatrixXcd::Zero(n, n);
    for (const Line& line : network.lines()) {
        ybus(line.from_bus, line.from_bus) += line.y_series_from + line.y_shunt_from;
        ybus(line.from_bus, line.to_bus) -= line.y_series_from;
        ybus(line.to_bus, line.to_bus) += line.y_series_to + line.y_shunt_to;
        ybus(line.to_bus, line.from_bus) -= line.y_series_to;
    }
    for (int b = 0; b < n; ++b)
        ybus(b, b) += std::complex<double>(network.bus(b).g_shunt, network.bus(b).b_shunt);

    Eigen::VectorXcd v(n);
    for (int b = 0; b < n; ++b)
        v[b] = std::polar(x.magnitudes[b], x.angle_of(b));
    const Eigen::VectorXcd current = ybus * v;
    return v.cwiseProduct(current.conjugate());
}

Eigen::VectorXcd line_sum_injections(const Network& network, const StateVector& x,
                                     const HOptions& opts) {
    MeasurementLayout layout;
    const int n = network.bus_count();
    for (int b = 0; b < n; ++b) layout.channels.push_back({Quantity::P, b, -1, LineEnd::forward, ""});
    for (int b = 0; b < n; ++b) layout.channels.push_back({Quantity::Q, b, -1, LineEnd::forward, ""});
    const Eigen::VectorXd h = evaluate_h(network, x, layout, opts);
    Eigen::VectorXcd s(n);
    for (int b = 0; b < n; ++b) s[b] = {h[b], h[n + b]};
    return s;
}

double injection_consistency_residual(const Network& network, const StateVector& x) {
    const Eigen::VectorXcd a = ybus_injections(network, x);
    const Eigen::VectorXcd b = line_sum_injections(network, x);
    return (a - b).cwiseAbs().maxCoeff();
}

std::string state_to_json_text(const Network& network, const StateVector& x) {
    json doc;
    json angles = json::array();
    json mags = json::array();
    constexpr double rad2deg = 180.0 / std::numbers::pi;
    for (int b = 0; b < network.bus_count(); ++b) {
        angles.push_back(x.angle_of(b) * rad2deg);
        mags.push_back(x.magnitudes[b]);
    }
    doc["angles_deg"] = std::move(angles);
    doc["magnitudes"] = std::move(mags);
    doc["slack"] = network.external_id(network.slack_index());
    return doc.dump(2) + "\n";
}

StateVector state_from_json_text(const Network& network, const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("state snapshot: ") + e.what());
    }
    if (!doc.contains("angles_deg") || !doc.contains("magnitudes") || !doc.contains("slack"))
        throw ParseError("state snapshot: expected keys angles_deg, magnitudes, slack");
    const int n = network.bus_count();
    if (static_cast<int>(doc["angles_deg"].size()) != n ||
        static_cast<int>(doc["magnitudes"].size()) != n)
        throw ParseError("state snapshot: length does not match network bus count");
    const int slack_id = doc["slack"].get<int>();
    if (network.internal_index(slack_id) != network.slack_index())
        throw ValidationError("state snapshot: slack id " + std::to_string(slack_id) +
                              " does not match network slack");

    StateVector x = StateVector::flat(network);
    constexpr double deg2rad = std::numbers::pi / 180.0;
    for (int b = 0; b < n; ++b) {
        x.magnitudes[b] = doc["magnitudes"][static_cast<std::size_t>(b)].get<double>();
        const double ang = doc["angles_deg"][static_cast<std::size_t>(b)].get<double>() * deg2rad;
        const int p = x.angle_position(b);
        if (p >= 0) x.angles[p] = ang;
    }
    return x;
}

}  // namespace acrestore
