#include "acrestore/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "acrestore/common.hpp"

namespace acrestore {

using nlohmann::json;

std::string to_string(Method m) {
    switch (m) {
        case Method::initial: return "initial";
        case Method::benchmark_pv: return "benchmark_pv";
        case Method::se_init: return "se_init";
        case Method::se_opt: return "se_opt";
    }
    return "initial";
}

std::optional<StateVector> restore_initial(const Network& network, const MeasurementSet& z_set) {
    z_set.check_consistent();
    const int n_bus = network.bus_count();
    std::vector<char> have_v(static_cast<std::size_t>(n_bus), 0);
    std::vector<char> have_th(static_cast<std::size_t>(n_bus), 0);
    have_th[static_cast<std::size_t>(network.slack_index())] = 1;

    StateVector x = StateVector::flat(network);
    for (int i = 0; i < z_set.size(); ++i) {
        if (!z_set.present[static_cast<std::size_t>(i)]) continue;
        const Channel& c = z_set.layout.channels[static_cast<std::size_t>(i)];
        if (c.quantity == Quantity::V && !have_v[static_cast<std::size_t>(c.bus)]) {
            x.magnitudes[c.bus] = z_set.values[i];
            have_v[static_cast<std::size_t>(c.bus)] = 1;
        } else if (c.quantity == Quantity::theta && !have_th[static_cast<std::size_t>(c.bus)]) {
            x.angles[x.angle_position(c.bus)] = z_set.values[i];
            have_th[static_cast<std::size_t>(c.bus)] = 1;
        }
    }
    const bool complete = std::all_of(have_v.begin(), have_v.end(), [](char c) { return c; }) &&
                          std::all_of(have_th.begin(), have_th.end(), [](char c) { return c; });
    if (!complete) return std::nullopt;
    return x;
}

PowerFlowResult restore_benchmark_pv(const Network& network, const MeasurementSet& z_set,
                                     double tol, int max_iter) {
    z_set.check_consistent();
    const int n_bus = network.bus_count();
    PowerFlowSpec spec(n_bus);

    std::vector<std::optional<double>> z_v(static_cast<std::size_t>(n_bus));
    std::vector<std::optional<double>> z_p(static_cast<std::size_t>(n_bus));
    for (int i = 0; i < z_set.size(); ++i) {
        if (!z_set.present[static_cast<std::size_t>(i)]) continue;
        const Channel& c = z_set.layout.channels[static_cast<std::size_t>(i)];
        // First source carrying the channel wins.
        if (c.quantity == Quantity::V && !z_v[static_cast<std::size_t>(c.bus)])
            z_v[static_cast<std::size_t>(c.bus)] = z_set.values[i];
        if (c.quantity == Quantity::P && !z_p[static_cast<std::size_t>(c.bus)])
            z_p[static_cast<std::size_t>(c.bus)] = z_set.values[i];
    }

    for (int b = 0; b < n_bus; ++b) {
        const Bus& bus = network.bus(b);
        switch (bus.kind) {
            case BusKind::slack:
                if (!z_v[static_cast<std::size_t>(b)])
                    throw ValidationError("benchmark method needs V at generator bus " +
                                          std::to_string(bus.id));
                spec.fixed_v[static_cast<std::size_t>(b)] = *z_v[static_cast<std::size_t>(b)];
                break;
            case BusKind::pv:
                if (!z_v[static_cast<std::size_t>(b)] || !z_p[static_cast<std::size_t>(b)])
                    throw ValidationError(
                        "benchmark method needs V and P at non-slack generator bus " +
                        std::to_string(bus.id));
                spec.fixed_v[static_cast<std::size_t>(b)] = *z_v[static_cast<std::size_t>(b)];
                spec.fixed_p[static_cast<std::size_t>(b)] = *z_p[static_cast<std::size_t>(b)];
                break;
            case BusKind::pq:
                spec.fixed_p[static_cast<std::size_t>(b)] = -bus.p_demand;
                spec.fixed_q[static_cast<std::size_t>(b)] = -bus.q_demand;
                break;
        }
    }
    return solve_power_flow(network, spec, StateVector::flat(network), tol, max_iter);
}

double MethodReport::recompute_aggregate() const {
    double sum = 0.0;
    for (const ScenarioOutcome& o : outcomes)
        if (o.available && !o.failed) sum += o.loss;
    return sum;
}

namespace {

// Inconsistency of the simplified solution's own quantities against the
// voltage state it reports: max |z_i - h_i(x)| over present power channels.
double claimed_injection_mismatch(const Network& network, const MeasurementSet& z_set,
                                  const StateVector& x) {
    MeasurementLayout layout;
    std::vector<double> claimed;
    for (int i = 0; i < z_set.size(); ++i) {
        if (!z_set.present[static_cast<std::size_t>(i)]) continue;
        const Channel& c = z_set.layout.channels[static_cast<std::size_t>(i)];
        if (c.quantity == Quantity::P || c.quantity == Quantity::Q ||
            c.quantity == Quantity::Pf || c.quantity == Quantity::Qf) {
            layout.channels.push_back(c);
            claimed.push_back(z_set.values[i]);
        }
    }
    if (claimed.empty()) return 0.0;
    const Eigen::VectorXd h = evaluate_h(network, x, layout);
    double worst = 0.0;
    for (int i = 0; i < static_cast<int>(claimed.size()); ++i)
        worst = std::max(worst, std::abs(h[i] - claimed[static_cast<std::size_t>(i)]));
    return worst;
}

struct SourceGroup {
    std::string name;                  // label or "combined(a+b)"
    std::vector<std::string> labels;   // stacked in this order
    bool combined = false;
};

}  // namespace

std::vector<MethodReport> evaluate_methods(const ScenarioDataset& dataset, const Network& network,
                                           const TrainedParameterSet& trained,
                                           const EvalOptions& options) {
    if (dataset.network_fingerprint != network.fingerprint())
        throw FingerprintMismatch("dataset does not belong to this network");
    if (!trained.groups.empty() && !trained.network_fingerprint.empty() &&
        trained.network_fingerprint != network.fingerprint())
        throw FingerprintMismatch("trained parameters do not belong to this network");

    const std::vector<int> test_indices = dataset.indices_of(SplitTag::test);
    if (test_indices.empty()) throw ValidationError("dataset has no test split");

    std::vector<SourceGroup> groups;
    for (const std::string& label : dataset.source_labels())
        groups.push_back({label, {label}, false});
    if (!options.combine.empty()) {
        std::string name = "combined(";
        for (std::size_t i = 0; i < options.combine.size(); ++i)
            name += (i ? "+" : "") + options.combine[i];
        name += ")";
        groups.push_back({name, options.combine, true});
    }

    const auto method_requested = [&](Method m) {
        return std::find(options.methods.begin(), options.methods.end(), m) !=
               options.methods.end();
    };

    const int n = 2 * network.bus_count() - 1;
    std::vector<MethodReport> reports;

    for (const SourceGroup& group : groups) {
        std::vector<Method> methods;
        for (Method m : {Method::initial, Method::benchmark_pv, Method::se_init, Method::se_opt})
            if (method_requested(m)) methods.push_back(m);

        std::map<Method, MethodReport> by_method;
        for (Method m : methods) {
            MethodReport r;
            r.method = m;
            r.source = group.name;
            r.outcomes.resize(test_indices.size());
            by_method.emplace(m, std::move(r));
        }

        const TrainedParameters* opt_group = nullptr;
        if (method_requested(Method::se_opt)) {
            const MeasurementSet probe = stacked_measurements(
                dataset.records[static_cast<std::size_t>(test_indices.front())], group.labels);
            opt_group = trained.find_group(probe.layout.fingerprint());
        }

        struct Row {
            std::map<Method, ScenarioOutcome> outcomes;
        };
        std::vector<Row> rows(test_indices.size());

        parallel_for_indexed(test_indices.size(), options.threads, [&](std::size_t t) {
            const ScenarioRecord& rec =
                dataset.records[static_cast<std::size_t>(test_indices[t])];
            const MeasurementSet z = stacked_measurements(rec, group.labels);
            const Eigen::VectorXd x_ac = rec.x_ac.stacked();

            const auto loss_of = [&](const StateVector& x) {
                return (x.stacked() - x_ac).squaredNorm() / n;
            };

            for (Method m : methods) {
                ScenarioOutcome o;
                o.scenario_id = rec.scenario.scenario_id;
                switch (m) {
                    case Method::initial: {
                        if (group.combined) {
                            o.available = false;
                            o.note = "not defined for combined sources";
                            break;
                        }
                        const std::optional<StateVector> x = restore_initial(network, z);
                        if (!x) {
                            o.available = false;
                            o.note = "source lacks full V/theta channels";
                            break;
                        }
                        o.loss = loss_of(*x);
                        o.residual = claimed_injection_mismatch(network, z, *x);
                        o.feasible = false;  // by construction, not a solved state
                        break;
                    }
                    case Method::benchmark_pv: {
                        if (group.combined) {
                            o.available = false;
                            o.note = "not defined for combined sources";
                            break;
                        }
                        const Network scaled = apply_scenario(network, rec.scenario);
                        try {
                            const PowerFlowResult pf = restore_benchmark_pv(
                                scaled, z, options.feasibility_tol, options.restore_max_iter);
                            if (!pf.converged) {
                                o.failed = true;
                                o.note = pf.message;
                                break;
                            }
                            o.loss = loss_of(pf.state);
                            o.residual = pf.max_mismatch;
                            o.feasible = o.residual <= options.feasibility_tol;
                        } catch (const std::exception& e) {
                            o.failed = true;
                            o.note = e.what();
                        }
                        break;
                    }
                    case Method::se_init:
                    case Method::se_opt: {
                        RestorationParams params = RestorationParams::uniform(z.size());
                        if (m == Method::se_opt) {
                            if (!opt_group) {
                                o.available = false;
                                o.note = "no trained parameters for this source group";
                                break;
                            }
                            params.sigma = opt_group->sigma_opt;
                            params.bias = opt_group->bias_opt;
                        }
                        try {
                            const RestorationResult res =
                                restore(network, z, params, initial_state_from(network, z),
                                        options.restore_eps, options.restore_max_iter);
                            if (!res.converged) {
                                o.failed = true;
                                o.note = "restoration did not converge";
                                break;
                            }
                            o.loss = loss_of(res.x_r);
                            o.residual = injection_consistency_residual(network, res.x_r);
                            o.feasible = o.residual <= options.feasibility_tol;
                        } catch (const std::exception& e) {
                            o.failed = true;
                            o.note = e.what();
                        }
                        break;
                    }
                }
                rows[t].outcomes[m] = std::move(o);
            }
        });

        for (Method m : methods) {
            MethodReport& r = by_method.at(m);
            for (std::size_t t = 0; t < rows.size(); ++t) r.outcomes[t] = rows[t].outcomes.at(m);
            for (const ScenarioOutcome& o : r.outcomes) {
                if (!o.available) {
                    ++r.unavailable_count;
                } else if (o.failed) {
                    ++r.failure_count;
                } else {
                    r.aggregate_loss += o.loss;
                    r.aggregate_available = true;
                }
            }
            const int counted = static_cast<int>(r.outcomes.size()) - r.unavailable_count -
                                r.failure_count;
            r.loss_per_scenario = counted > 0 ? r.aggregate_loss / counted : 0.0;
            reports.push_back(std::move(r));
        }
    }
    return reports;
}

std::string report_csv(const std::vector<MethodReport>& reports) {
    std::ostringstream out;
    out.precision(17);
    out << "method,source,scenario,loss,feasible,residual\n";
    for (const MethodReport& r : reports) {
        for (const ScenarioOutcome& o : r.outcomes) {
            out << to_string(r.method) << "," << r.source << "," << o.scenario_id << ",";
            if (!o.available || o.failed)
                out << (o.available ? "failed" : "unavailable");
            else
                out << o.loss;
            out << "," << (o.feasible ? "true" : "false") << ",";
            if (o.available && !o.failed) out << o.residual;
            out << "\n";
        }
    }
    return out.str();
}

std::string report_json_text(const std::vector<MethodReport>& reports) {
    json doc = json::array();
    for (const MethodReport& r : reports) {
        json jr;
        jr["method"] = to_string(r.method);
        jr["source"] = r.source;
        if (r.aggregate_available) {
            jr["loss"] = r.aggregate_loss;
            jr["loss_per_scenario"] = r.loss_per_scenario;
        } else {
            jr["loss"] = nullptr;
            jr["loss_per_scenario"] = nullptr;
        }
        jr["failures"] = r.failure_count;
        jr["unavailable"] = r.unavailable_count;
        jr["scenarios"] = r.outcomes.size();
        double worst = 0.0;
        for (const ScenarioOutcome& o : r.outcomes)
            if (o.available && !o.failed) worst = std::max(worst, o.residual);
        jr["max_residual"] = worst;
        doc.push_back(std::move(jr));
    }
    return doc.dump(2) + "\n";
}

std::string report_table(const std::vector<MethodReport>& reports) {
    // methods as rows, sources as columns
    std::vector<std::string> sources;
    std::map<std::string, std::map<std::string, std::string>> cells;  // method -> source -> text
    for (const MethodReport& r : reports) {
        if (std::find(sources.begin(), sources.end(), r.source) == sources.end())
            sources.push_back(r.source);
        std::ostringstream v;
        if (r.aggregate_available)
            v << std::scientific << std::setprecision(4) << r.aggregate_loss;
        else
            v << "---";
        cells[to_string(r.method)][r.source] = v.str();
    }

    static const char* method_names[] = {"initial", "benchmark_pv", "se_init", "se_opt"};
    std::size_t col_width = 12;
    for (const std::string& s : sources) col_width = std::max(col_width, s.size() + 2);

    std::ostringstream out;
    out << std::left << std::setw(14) << "method";
    for (const std::string& s : sources) out << std::setw(static_cast<int>(col_width)) << s;
    out << "\n";
    out << std::string(14 + sources.size() * col_width, '-') << "\n";
    for (const char* m : method_names) {
        if (cells.find(m) == cells.end()) continue;
        out << std::left << std::setw(14) << m;
        for (const std::string& s : sources) {
            auto it = cells[m].find(s);
            out << std::setw(static_cast<int>(col_width))
                << (it == cells[m].end() ? "---" : it->second);
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace acrestore
