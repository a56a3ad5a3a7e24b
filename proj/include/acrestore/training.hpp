#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "acrestore/scenarios.hpp"
#include "acrestore/sensitivity.hpp"

namespace acrestore {

// ---------------------------------------------------------------------------
// Adam optimizer state (kept separately for weights and biases).
// ---------------------------------------------------------------------------

struct AdamState {
    Eigen::VectorXd m_first;
    Eigen::VectorXd tau_second;
    int step_count = 0;
    double eta = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;

    static AdamState fresh(int size, double eta = 0.01, double beta1 = 0.9, double beta2 = 0.999,
                           double eps_adam = 1e-8);
};

// One Adam update: m <- b1 m + (1-b1) g; tau <- b2 tau + (1-b2) g^2;
// bias-corrected m_hat, Gamma; params <- params - eta * m_hat / (sqrt(Gamma) + eps).
std::pair<AdamState, Eigen::VectorXd> adam_step(const AdamState& state,
                                                const Eigen::VectorXd& params,
                                                const Eigen::VectorXd& grad);

// ---------------------------------------------------------------------------
// Loss and gradients over a batch of scenarios.
// ---------------------------------------------------------------------------

// (1/n) * sum over the batch of ||x_r - x_ac||_2^2. Normalization is by the
// state dimension only, so repeating a scenario doubles the loss.
double loss_F(const std::vector<StateVector>& x_r_batch, const std::vector<StateVector>& x_ac_batch,
              int n);

struct ScenarioBatchItem {
    int scenario_id = 0;
    MeasurementSet z;
    StateVector x_ac;
};

// Stacks the record's measurement sets for the requested source labels
// (all labels in map order when empty).
MeasurementSet stacked_measurements(const ScenarioRecord& record,
                                    const std::vector<std::string>& sources);

struct BatchEval {
    Eigen::VectorXd grad_sigma;  // full m, zeros at masked slots
    Eigen::VectorXd grad_bias;
    double loss = 0.0;
    std::vector<int> failed_ids;
    std::vector<std::optional<StateVector>> restored;  // aligned with the batch
};

BatchEval evaluate_batch(const Network& network, const std::vector<ScenarioBatchItem>& batch,
                         const RestorationParams& params, double restore_eps = 1e-10,
                         int restore_max_iter = 100, unsigned threads = 0,
                         const HOptions& opts = {});

// Strict wrappers: any restoration failure in the batch throws.
Eigen::VectorXd grad_sigma(const std::vector<ScenarioBatchItem>& batch, const Network& network,
                           const RestorationParams& params, double restore_eps = 1e-10,
                           unsigned threads = 0);
Eigen::VectorXd grad_bias(const std::vector<ScenarioBatchItem>& batch, const Network& network,
                          const RestorationParams& params, double restore_eps = 1e-10,
                          unsigned threads = 0);

// ---------------------------------------------------------------------------
// Offline training of sigma and bias.
// ---------------------------------------------------------------------------

struct TrainingConfig {
    double eta = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    int batch_size = 32;
    int max_iter = 200;
    double sigma_init = 1.0;
    double bias_init = 0.0;
    Eigen::VectorXd sigma_init_vector;  // overrides the scalar when non-empty
    Eigen::VectorXd bias_init_vector;
    std::uint64_t seed = 1;
    double restore_eps = 1e-10;  // inner restorations near-exact so the
                                 // sensitivity formulas hold
    int restore_max_iter = 100;
    std::vector<std::string> sources;  // labels to stack; empty = all
};

struct TrainedParameters {
    Eigen::VectorXd sigma_opt;
    Eigen::VectorXd bias_opt;
    std::vector<double> loss_history;       // batch loss per iteration
    std::vector<double> loss_per_scenario;  // loss / batch size, for readability
    std::string network_fingerprint;
    std::string layout_fingerprint;
    std::vector<std::string> sources;
    TrainingConfig config;
    std::vector<std::string> failure_log;
};

struct TrainingAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

TrainedParameters train(const ScenarioDataset& dataset, const Network& network,
                        const TrainingConfig& config, unsigned threads = 0);

// Trained-parameters file: {network_fingerprint, groups: [...]} so one file
// can carry parameters for several source groups.
struct TrainedParameterSet {
    std::string network_fingerprint;
    std::vector<TrainedParameters> groups;

    const TrainedParameters* find_group(const std::string& layout_fingerprint) const;
};

std::string trained_parameters_to_json_text(const TrainedParameterSet& set);
TrainedParameterSet trained_parameters_from_json_text(const std::string& text);
void save_trained_parameters(const TrainedParameterSet& set, const std::filesystem::path& path);
TrainedParameterSet load_trained_parameters(const std::filesystem::path& path);

std::string loss_history_csv(const TrainedParameters& params);

}  // namespace acrestore
