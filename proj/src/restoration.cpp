#include "acrestore/restoration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "acrestore/common.hpp"

namespace acrestore {

using nlohmann::json;

int MeasurementSet::effective_size() const {
    return static_cast<int>(std::count(present.begin(), present.end(), 1));
}

std::vector<int> MeasurementSet::present_indices() const {
    std::vector<int> out;
    out.reserve(present.size());
    for (int i = 0; i < size(); ++i)
        if (present[static_cast<std::size_t>(i)]) out.push_back(i);
    return out;
}

void MeasurementSet::check_consistent() const {
    if (static_cast<int>(present.size()) != size() || layout.size() != size())
        throw ValidationError("measurement set shape mismatch: values=" + std::to_string(size()) +
                              " present=" + std::to_string(present.size()) +
                              " layout=" + std::to_string(layout.size()));
    for (const Channel& c : layout.channels)
        if (std::find(sources.begin(), sources.end(), c.source) == sources.end())
            throw ValidationError("channel references unlisted source '" + c.source + "'");
}

RestorationParams RestorationParams::uniform(int m, double sigma_value, double bias_value) {
    RestorationParams p;
    p.sigma = Eigen::VectorXd::Constant(m, sigma_value);
    p.bias = Eigen::VectorXd::Constant(m, bias_value);
    return p;
}

namespace {

struct EffectiveProblem {
    MeasurementLayout layout;
    Eigen::VectorXd z_plus_b;
    Eigen::VectorXd sigma;
    std::vector<int> slots;  // effective row -> full slot
};

EffectiveProblem reduce(const MeasurementSet& z_set, const RestorationParams& params,
                        double sigma_floor) {
    z_set.check_consistent();
    if (params.sigma.size() != z_set.size() || params.bias.size() != z_set.size())
        throw std::invalid_argument("params length does not match measurement set");
    EffectiveProblem eff;
    eff.slots = z_set.present_indices();
    const int m_eff = static_cast<int>(eff.slots.size());
    eff.z_plus_b.resize(m_eff);
    eff.sigma.resize(m_eff);
    eff.layout.channels.reserve(static_cast<std::size_t>(m_eff));
    for (int r = 0; r < m_eff; ++r) {
        const int s = eff.slots[static_cast<std::size_t>(r)];
        eff.layout.channels.push_back(z_set.layout.channels[static_cast<std::size_t>(s)]);
        eff.z_plus_b[r] = z_set.values[s] + params.bias[s];
        eff.sigma[r] = std::max(params.sigma[s], sigma_floor);
    }
    return eff;
}

}  // namespace

double objective_J(const Network& network, const MeasurementSet& z_set,
                   const RestorationParams& params, const StateVector& x, const HOptions& opts) {
    const EffectiveProblem eff = reduce(z_set, params, kSigmaFloor);
    const Eigen::VectorXd r = eff.z_plus_b - evaluate_h(network, x, eff.layout, opts);
    return r.dot(eff.sigma.cwiseProduct(r));
}

RestorationResult restore(const Network& network, const MeasurementSet& z_set,
                          const RestorationParams& params, const StateVector& x0, double eps,
                          int max_iter, const RestoreOptions& opts) {
    const EffectiveProblem eff = reduce(z_set, params, opts.sigma_floor);
    const int n = x0.n();
    const int m_eff = static_cast<int>(eff.slots.size());
    if (m_eff < n)
        throw SingularSystemError("underdetermined restoration: " + std::to_string(m_eff) +
                                      " present channels < " + std::to_string(n) + " states",
                                  n - m_eff);
    eff.layout.check_against(network);

    RestorationResult result;
    StateVector x = x0;
    x.slack_index = network.slack_index();

    const auto objective_at = [&](const StateVector& s) {
        const Eigen::VectorXd r = eff.z_plus_b - evaluate_h(network, s, eff.layout, opts.h);
        return r.dot(eff.sigma.cwiseProduct(r));
    };

    double step_norm = std::numeric_limits<double>::infinity();
    int k = 0;
    while (k < max_iter) {
        ++k;
        const Eigen::VectorXd r = eff.z_plus_b - evaluate_h(network, x, eff.layout, opts.h);
        const Eigen::MatrixXd H = jacobian_H(network, x, eff.layout, opts.h);
        const Eigen::MatrixXd weighted_H = eff.sigma.asDiagonal() * H;  // Sigma H
        const Eigen::MatrixXd normal = H.transpose() * weighted_H;      // H' Sigma H
        const Eigen::VectorXd rhs = weighted_H.transpose() * r;         // H' Sigma r

        Eigen::VectorXd step;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
        bool ok = ldlt.info() == Eigen::Success;
        if (ok) {
            step = ldlt.solve(rhs);
            // LDLT of a singular PSD matrix can "succeed" with a garbage
            // solution; verify the normal equations actually hold.
            ok = step.allFinite() &&
                 (normal * step - rhs).norm() <= 1e-8 * (rhs.norm() + normal.norm());
        }
        if (!ok) {
            const double lambda = 1e-10 * normal.trace() / n;
            Eigen::MatrixXd damped = normal;
            damped.diagonal().array() += lambda;
            Eigen::LDLT<Eigen::MatrixXd> retry(damped);
            step = retry.solve(rhs);
            result.used_damping = true;
            if (retry.info() != Eigen::Success || !step.allFinite()) {
                Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(normal);
                qr.setThreshold(1e-12);
                throw SingularSystemError(
                    "rank-deficient normal matrix: unobservable subspace dimension " +
                        std::to_string(n - static_cast<int>(qr.rank())),
                    n - static_cast<int>(qr.rank()));
            }
        }

        StateVector next = x;
        Eigen::VectorXd stacked = x.stacked() + step;
        next = StateVector::from_stacked(stacked, x.slack_index, x.bus_count());

        if (opts.damped) {
            const double j_here = objective_at(x);
            double scale = 1.0;
            for (int backtrack = 0; backtrack < 20 && objective_at(next) > j_here; ++backtrack) {
                scale *= 0.5;
                stacked = x.stacked() + scale * step;
                next = StateVector::from_stacked(stacked, x.slack_index, x.bus_count());
            }
            step_norm = (scale * step).cwiseAbs().maxCoeff();
        } else {
            step_norm = step.cwiseAbs().maxCoeff();
        }

        x = next;
        if (!x.magnitudes.allFinite() || !x.angles.allFinite()) {
            result.converged = false;
            break;
        }
        if (step_norm <= eps) {
            result.converged = true;
            break;
        }
    }

    result.x_r = x;
    result.iterations = k;
    result.final_step_norm = step_norm;
    const Eigen::VectorXd r_final = eff.z_plus_b - evaluate_h(network, x, eff.layout, opts.h);
    result.objective = r_final.dot(eff.sigma.cwiseProduct(r_final));
    result.residuals = Eigen::VectorXd::Zero(z_set.size());
    for (int i = 0; i < m_eff; ++i) result.residuals[eff.slots[static_cast<std::size_t>(i)]] = r_final[i];
    return result;
}

MeasurementSet combine_sources(const std::vector<MeasurementSet>& sets) {
    if (sets.empty()) throw std::invalid_argument("combine_sources: no measurement sets given");
    for (const MeasurementSet& s : sets) {
        s.check_consistent();
        if (s.network_fingerprint != sets.front().network_fingerprint)
            throw FingerprintMismatch("combine_sources: measurement sets reference different networks");
    }

    MeasurementSet out;
    out.network_fingerprint = sets.front().network_fingerprint;
    int total = 0;
    for (const MeasurementSet& s : sets) total += s.size();
    out.values.resize(total);
    out.present.reserve(static_cast<std::size_t>(total));
    out.layout.channels.reserve(static_cast<std::size_t>(total));

    std::set<std::string> used_labels;
    int offset = 0;
    for (const MeasurementSet& s : sets) {
        // Keep stacked source labels distinct.
        std::unordered_map<std::string, std::string> rename;
        for (const std::string& label : s.sources) {
            std::string candidate = label;
            for (int suffix = 2; used_labels.count(candidate); ++suffix)
                candidate = label + "#" + std::to_string(suffix);
            used_labels.insert(candidate);
            rename[label] = candidate;
        }
        for (int i = 0; i < s.size(); ++i) {
            Channel c = s.layout.channels[static_cast<std::size_t>(i)];
            c.source = rename.at(c.source);
            out.layout.channels.push_back(std::move(c));
            out.values[offset + i] = s.values[i];
            out.present.push_back(s.present[static_cast<std::size_t>(i)]);
        }
        for (const std::string& label : s.sources) out.sources.push_back(rename.at(label));
        offset += s.size();
    }
    return out;
}

StateVector initial_state_from(const Network& network, const MeasurementSet& z_set) {
    z_set.check_consistent();
    StateVector x = StateVector::flat(network);

    const auto first_source_with = [&](Quantity q) -> std::string {
        for (const std::string& label : z_set.sources) {
            for (int i = 0; i < z_set.size(); ++i) {
                const Channel& c = z_set.layout.channels[static_cast<std::size_t>(i)];
                if (c.source == label && c.quantity == q && z_set.present[static_cast<std::size_t>(i)])
                    return label;
            }
        }
        return {};
    };

    const std::string v_source = first_source_with(Quantity::V);
    const std::string th_source = first_source_with(Quantity::theta);
    for (int i = 0; i < z_set.size(); ++i) {
        if (!z_set.present[static_cast<std::size_t>(i)]) continue;
        const Channel& c = z_set.layout.channels[static_cast<std::size_t>(i)];
        if (c.quantity == Quantity::V && c.source == v_source) {
            x.magnitudes[c.bus] = z_set.values[i];
        } else if (c.quantity == Quantity::theta && c.source == th_source) {
            const int p = x.angle_position(c.bus);
            if (p >= 0) x.angles[p] = z_set.values[i];
        }
    }
    return x;
}

namespace {

json channel_location(const Network& network, const Channel& c) {
    if (c.quantity == Quantity::Pf || c.quantity == Quantity::Qf)
        return json{{"line", c.line}, {"dir", c.end == LineEnd::forward ? "forward" : "reverse"}};
    return json(network.external_id(c.bus));
}

}  // namespace

std::string measurement_set_to_json_text(const Network& network, const MeasurementSet& set) {
    set.check_consistent();
    constexpr double rad2deg = 180.0 / std::numbers::pi;
    json doc;
    doc["network_fingerprint"] = set.network_fingerprint;
    json sources = json::array();
    for (const std::string& label : set.sources) {
        json channels = json::array();
        for (int i = 0; i < set.size(); ++i) {
            const Channel& c = set.layout.channels[static_cast<std::size_t>(i)];
            if (c.source != label) continue;
            const double value =
                c.quantity == Quantity::theta ? set.values[i] * rad2deg : set.values[i];
            channels.push_back({{"quantity", to_string(c.quantity)},
                                {"location", channel_location(network, c)},
                                {"value", value},
                                {"present", static_cast<bool>(set.present[static_cast<std::size_t>(i)])}});
        }
        sources.push_back({{"label", label}, {"channels", std::move(channels)}});
    }
    doc["sources"] = std::move(sources);
    return doc.dump(2) + "\n";
}

MeasurementSet measurement_set_from_json_text(const Network& network, const std::string& text,
                                              std::vector<std::string>* warnings) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("measurement set: ") + e.what());
    }
    if (!doc.contains("network_fingerprint") || !doc["network_fingerprint"].is_string())
        throw ParseError("measurement set: missing network_fingerprint");
    const std::string fp = doc["network_fingerprint"].get<std::string>();
    if (fp != network.fingerprint())
        throw FingerprintMismatch("measurement set fingerprint " + fp +
                                  " does not match network " + network.fingerprint());
    if (!doc.contains("sources") || !doc["sources"].is_array())
        throw ParseError("measurement set: missing sources array");

    constexpr double deg2rad = std::numbers::pi / 180.0;
    MeasurementSet out;
    out.network_fingerprint = fp;
    std::vector<double> values;

    for (const json& jsrc : doc["sources"]) {
        if (!jsrc.contains("label") || !jsrc.contains("channels"))
            throw ParseError("measurement set: source needs label and channels");
        const std::string label = jsrc["label"].get<std::string>();
        out.sources.push_back(label);

        struct Parsed {
            Channel channel;
            double value;
            char present;
        };
        std::vector<Parsed> parsed;

        // Slack-angle alignment: every source must agree theta_slack = 0.
        double slack_theta = 0.0;
        bool has_slack_theta = false;
        for (const json& jc : jsrc["channels"]) {
            if (quantity_from_string(jc["quantity"].get<std::string>()) != Quantity::theta) continue;
            if (!jc["location"].is_number()) continue;
            if (network.internal_index(jc["location"].get<int>()) == network.slack_index() &&
                jc.value("present", true)) {
                slack_theta = jc["value"].get<double>() * deg2rad;
                has_slack_theta = true;
            }
        }

        for (const json& jc : jsrc["channels"]) {
            Channel c;
            c.quantity = quantity_from_string(jc["quantity"].get<std::string>());
            c.source = label;
            double value = jc["value"].get<double>();
            const bool present = jc.value("present", true);
            if (c.quantity == Quantity::Pf || c.quantity == Quantity::Qf) {
                const json& loc = jc["location"];
                if (!loc.is_object() || !loc.contains("line") || !loc.contains("dir"))
                    throw ParseError("measurement set: flow channel needs {line, dir} location");
                c.line = loc["line"].get<int>();
                if (c.line < 0 || c.line >= network.line_count())
                    throw ParseError("measurement set: line index " + std::to_string(c.line) +
                                     " out of range");
                const std::string dir = loc["dir"].get<std::string>();
                if (dir != "forward" && dir != "reverse")
                    throw ParseError("measurement set: dir must be forward|reverse");
                c.end = dir == "forward" ? LineEnd::forward : LineEnd::reverse;
            } else {
                if (!jc["location"].is_number())
                    throw ParseError("measurement set: bus channel needs numeric bus id location");
                c.bus = network.internal_index(jc["location"].get<int>());
                if (c.quantity == Quantity::theta) {
                    value = value * deg2rad;
                    if (c.bus == network.slack_index()) {
                        if (warnings)
                            warnings->push_back("source '" + label +
                                                "': slack theta channel re-referenced and discarded");
                        continue;
                    }
                    if (has_slack_theta) value -= slack_theta;
                }
            }
            parsed.push_back({std::move(c), value, static_cast<char>(present ? 1 : 0)});
        }

        // Layout invariant: [V; P; Q; Pf; Qf; theta] blocks within a source.
        std::stable_sort(parsed.begin(), parsed.end(), [](const Parsed& a, const Parsed& b) {
            return static_cast<int>(a.channel.quantity) < static_cast<int>(b.channel.quantity);
        });
        for (Parsed& p : parsed) {
            out.layout.channels.push_back(std::move(p.channel));
            values.push_back(p.value);
            out.present.push_back(p.present);
        }
    }

    out.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    out.layout.check_against(network);
    return out;
}

std::string restoration_result_to_json_text(const Network& network, const RestorationResult& r) {
    json doc;
    doc["x_R"] = json::parse(state_to_json_text(network, r.x_r));
    doc["J"] = r.objective;
    doc["iterations"] = r.iterations;
    doc["converged"] = r.converged;
    doc["final_step_norm"] = r.final_step_norm;
    doc["residuals"] = std::vector<double>(r.residuals.data(), r.residuals.data() + r.residuals.size());
    return doc.dump(2) + "\n";
}

}  // namespace acrestore
