#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "acrestore/training.hpp"

namespace acrestore {

enum class Method { initial, benchmark_pv, se_init, se_opt };

std::string to_string(Method m);

// The simplified solution's own voltage phasors, usable only when the source
// carries both V and theta channels; not generally AC feasible.
std::optional<StateVector> restore_initial(const Network& network, const MeasurementSet& z_set);

// Prior-art restoration: power flow with V fixed at every generator bus and P
// fixed at non-slack generator buses, both taken from the simplified solution.
// Load buses keep the network's demands. Throws when required channels are
// masked; non-convergence comes back in the result.
PowerFlowResult restore_benchmark_pv(const Network& network, const MeasurementSet& z_set,
                                     double tol = 1e-6, int max_iter = 50);

struct ScenarioOutcome {
    int scenario_id = 0;
    bool available = true;   // method applicable to this source
    bool failed = false;     // solver failure
    double loss = 0.0;       // (1/n) ||x - x_ac||^2 contribution
    double residual = 0.0;   // feasibility re-check
    bool feasible = false;
    std::string note;
};

struct MethodReport {
    Method method = Method::initial;
    std::string source;
    std::vector<ScenarioOutcome> outcomes;  // ordered by scenario id
    double aggregate_loss = 0.0;            // sum of per-scenario contributions
    double loss_per_scenario = 0.0;
    int failure_count = 0;
    int unavailable_count = 0;

    double recompute_aggregate() const;
    bool has_any_result() const { return aggregate_available; }
    bool aggregate_available = false;
};

struct EvalOptions {
    std::vector<Method> methods = {Method::initial, Method::benchmark_pv, Method::se_init,
                                   Method::se_opt};
    std::vector<std::string> combine;  // labels stacked into a combined pseudo-source
    double restore_eps = 1e-6;
    int restore_max_iter = 50;
    double feasibility_tol = 1e-6;
    unsigned threads = 0;
};

// Runs the requested methods over the test split, per source (and the
// combined pseudo-source when asked). se_opt rows need a trained group whose
// layout fingerprint matches the stacked measurements.
std::vector<MethodReport> evaluate_methods(const ScenarioDataset& dataset, const Network& network,
                                           const TrainedParameterSet& trained,
                                           const EvalOptions& options = {});

std::string report_csv(const std::vector<MethodReport>& reports);
std::string report_json_text(const std::vector<MethodReport>& reports);
std::string report_table(const std::vector<MethodReport>& reports);

}  // namespace acrestore
