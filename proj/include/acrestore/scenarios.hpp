#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acrestore/restoration.hpp"

namespace acrestore {

struct LoadScenario {
    int scenario_id = 0;
    std::vector<double> p_multipliers;  // per internal bus, > 0
    std::vector<double> q_multipliers;  // == p_multipliers unless independent P/Q draws
};

// Multiplier per bus demand: 1 + Normal(0, std), truncated below at 0.1.
std::vector<LoadScenario> generate_scenarios(const Network& network, int count, double std,
                                             std::uint64_t seed, bool independent_pq = false);

Network apply_scenario(const Network& network, const LoadScenario& scenario);

// ---------------------------------------------------------------------------
// Ground truth via dispatched power flow (stands in for the upstream OPF).
// ---------------------------------------------------------------------------

struct DispatchRule {
    double gen_v_setpoint = 1.0;  // magnitude fixed at pv + slack buses
    double loss_factor = 0.02;    // non-slack generators share demand * (1+loss)
};

PowerFlowSpec make_dispatch_spec(const Network& scaled_network, const DispatchRule& rule);

struct GroundTruthResult {
    std::vector<std::optional<StateVector>> states;  // aligned with the input scenarios
    std::vector<int> dropped_ids;                    // non-convergent scenarios
};

GroundTruthResult ground_truth_states(const Network& network,
                                      const std::vector<LoadScenario>& scenarios,
                                      const DispatchRule& rule = {}, double tol = 1e-6,
                                      int max_iter = 50, unsigned threads = 0);

// ---------------------------------------------------------------------------
// Synthetic simplified-solution oracle.
// ---------------------------------------------------------------------------

struct ChannelCorruption {
    double additive_bias = 0.0;
    double noise_std = 0.0;  // >= 0
    bool drop = false;       // channel class absent from this source
};

struct SourceCorruption {
    std::string label;
    std::map<Quantity, ChannelCorruption> classes;  // absent key = untouched class
};

struct CorruptionSpec {
    std::vector<SourceCorruption> sources;
};

CorruptionSpec corruption_spec_from_json_text(const std::string& text);
std::string corruption_spec_to_json_text(const CorruptionSpec& spec);

// Default two-source suite: a relaxation-like source without angle variables
// and an approximation-like source with them, channel-class biases up to
// 0.02 p.u. and noise levels spanning 1e-4 to 1e-2.
CorruptionSpec standard_corruption_suite();

// z = h(x_ac) + bias + Normal(0, noise_std) per channel class; dropped classes
// masked absent. Deterministic given seed.
MeasurementSet synthesize_simplified(const Network& network, const StateVector& x_ac,
                                     const SourceCorruption& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset: paired (z, x_ac) samples with split labels and provenance.
// ---------------------------------------------------------------------------

enum class SplitTag { train, test };

struct ScenarioRecord {
    LoadScenario scenario;
    StateVector x_ac;
    std::map<std::string, MeasurementSet> z_sets;  // by source label
    SplitTag split = SplitTag::train;
};

struct DatasetConfig {
    int count = 100;
    double load_std = 0.1;
    std::uint64_t seed = 1;
    double test_ratio = 0.2;
    bool independent_pq = false;
    CorruptionSpec corruption;
    DispatchRule dispatch;
};

struct ScenarioDataset {
    std::string network_fingerprint;
    std::vector<ScenarioRecord> records;  // ordered by scenario_id
    DatasetConfig config;                 // provenance
    std::vector<int> dropped_ids;

    std::vector<std::string> source_labels() const;
    std::vector<int> indices_of(SplitTag tag) const;
    const ScenarioRecord& by_id(int scenario_id) const;
};

ScenarioDataset build_dataset(const Network& network, const DatasetConfig& config,
                              unsigned threads = 0);

// Directory layout: case.json, scenarios.json, truth/<id>.json,
// sources/<label>/<id>.json, manifest.json.
void save_dataset(const Network& network, const ScenarioDataset& dataset,
                  const std::filesystem::path& dir);
std::pair<Network, ScenarioDataset> load_dataset(const std::filesystem::path& dir);

// Externally produced simplified solutions, one measurement set per
// (source, scenario). Validates fingerprints and slack-angle references.
using ExternalSolutions = std::map<std::string, std::map<int, MeasurementSet>>;

ExternalSolutions import_external(const Network& network, const std::filesystem::path& path,
                                  std::vector<std::string>* warnings = nullptr);
void export_external(const Network& network, const ScenarioDataset& dataset,
                     const std::filesystem::path& path);

// Merges imported sets into the dataset; unknown scenario ids are an error.
void attach_external(ScenarioDataset& dataset, const ExternalSolutions& imported);

}  // namespace acrestore
