#include "acrestore/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "acrestore/common.hpp"

namespace acrestore {

using nlohmann::json;

AdamState AdamState::fresh(int size, double eta, double beta1, double beta2, double eps_adam) {
    AdamState s;
    s.m_first = Eigen::VectorXd::Zero(size);
    s.tau_second = Eigen::VectorXd::Zero(size);
    s.eta = eta;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps_adam = eps_adam;
    return s;
}

std::pair<AdamState, Eigen::VectorXd> adam_step(const AdamState& state,
                                                const Eigen::VectorXd& params,
                                                const Eigen::VectorXd& grad) {
    if (params.size() != grad.size() || params.size() != state.m_first.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    AdamState next = state;
    next.step_count = state.step_count + 1;
    const double k = next.step_count;
    next.m_first = state.beta1 * state.m_first + (1.0 - state.beta1) * grad;
    next.tau_second = state.beta2 * state.tau_second + (1.0 - state.beta2) * grad.cwiseProduct(grad);
    const Eigen::ArrayXd m_hat = next.m_first.array() / (1.0 - std::pow(state.beta1, k));
    const Eigen::ArrayXd gamma = next.tau_second.array() / (1.0 - std::pow(state.beta2, k));
    const Eigen::VectorXd updated =
        params.array() - state.eta * m_hat / (gamma.sqrt() + state.eps_adam);
    return {std::move(next), updated};
}

double loss_F(const std::vector<StateVector>& x_r_batch, const std::vector<StateVector>& x_ac_batch,
              int n) {
    if (x_r_batch.size() != x_ac_batch.size())
        throw std::invalid_argument("loss_F: batch length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < x_r_batch.size(); ++i)
        sum += (x_r_batch[i].stacked() - x_ac_batch[i].stacked()).squaredNorm();
    return sum / n;
}

MeasurementSet stacked_measurements(const ScenarioRecord& record,
                                    const std::vector<std::string>& sources) {
    std::vector<MeasurementSet> sets;
    if (sources.empty()) {
        for (const auto& [label, set] : record.z_sets) sets.push_back(set);
    } else {
        for (const std::string& label : sources) {
            auto it = record.z_sets.find(label);
            if (it == record.z_sets.end())
                throw ValidationError("scenario " + std::to_string(record.scenario.scenario_id) +
                                      " has no source '" + label + "'");
            sets.push_back(it->second);
        }
    }
    if (sets.size() == 1) return sets.front();
    return combine_sources(sets);
}

BatchEval evaluate_batch(const Network& network, const std::vector<ScenarioBatchItem>& batch,
                         const RestorationParams& params, double restore_eps,
                         int restore_max_iter, unsigned threads, const HOptions& opts) {
    const int m = static_cast<int>(params.sigma.size());
    const int n = 2 * network.bus_count() - 1;

    struct PerItem {
        bool ok = false;
        Eigen::VectorXd gs, gb;  // full m
        double loss = 0.0;
        StateVector x_r;
    };
    std::vector<PerItem> per(batch.size());

    RestoreOptions ropts;
    ropts.h = opts;
    parallel_for_indexed(batch.size(), threads, [&](std::size_t i) {
        const ScenarioBatchItem& item = batch[i];
        const StateVector x0 = initial_state_from(network, item.z);
        RestorationResult res;
        SensitivityBundle sens;
        try {
            res = restore(network, item.z, params, x0, restore_eps, restore_max_iter, ropts);
            if (!res.converged) return;
            sens = sensitivity_bundle(network, item.z, params, res.x_r, opts);
        } catch (const SingularSystemError&) {
            return;  // recorded as a failure below
        }
        const Eigen::VectorXd delta = res.x_r.stacked() - item.x_ac.stacked();
        const Eigen::VectorXd gs_eff = (2.0 / n) * (sens.dx_dsigma.transpose() * delta);
        const Eigen::VectorXd gb_eff = (2.0 / n) * (sens.dx_dbias.transpose() * delta);
        PerItem& out = per[i];
        out.gs = Eigen::VectorXd::Zero(m);
        out.gb = Eigen::VectorXd::Zero(m);
        const std::vector<int> slots = item.z.present_indices();
        for (int r = 0; r < static_cast<int>(slots.size()); ++r) {
            out.gs[slots[static_cast<std::size_t>(r)]] = gs_eff[r];
            out.gb[slots[static_cast<std::size_t>(r)]] = gb_eff[r];
        }
        out.loss = delta.squaredNorm() / n;
        out.x_r = res.x_r;
        out.ok = true;
    });

    // Fixed-order reduction keeps results identical across thread counts.
    BatchEval eval;
    eval.grad_sigma = Eigen::VectorXd::Zero(m);
    eval.grad_bias = Eigen::VectorXd::Zero(m);
    eval.restored.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!per[i].ok) {
            eval.failed_ids.push_back(batch[i].scenario_id);
            continue;
        }
        eval.grad_sigma += per[i].gs;
        eval.grad_bias += per[i].gb;
        eval.loss += per[i].loss;
        eval.restored[i] = per[i].x_r;
    }
    return eval;
}

namespace {

BatchEval evaluate_batch_strict(const std::vector<ScenarioBatchItem>& batch,
                                const Network& network, const RestorationParams& params,
                                double restore_eps, unsigned threads) {
    BatchEval eval = evaluate_batch(network, batch, params, restore_eps, 100, threads);
    if (!eval.failed_ids.empty()) {
        std::string ids;
        for (int id : eval.failed_ids) ids += " " + std::to_string(id);
        throw std::runtime_error("restoration failed for scenario(s):" + ids);
    }
    return eval;
}

}  // namespace

Eigen::VectorXd grad_sigma(const std::vector<ScenarioBatchItem>& batch, const Network& network,
                           const RestorationParams& params, double restore_eps, unsigned threads) {
    return evaluate_batch_strict(batch, network, params, restore_eps, threads).grad_sigma;
}

Eigen::VectorXd grad_bias(const std::vector<ScenarioBatchItem>& batch, const Network& network,
                          const RestorationParams& params, double restore_eps, unsigned threads) {
    return evaluate_batch_strict(batch, network, params, restore_eps, threads).grad_bias;
}

TrainedParameters train(const ScenarioDataset& dataset, const Network& network,
                        const TrainingConfig& config, unsigned threads) {
    if (dataset.network_fingerprint != network.fingerprint())
        throw FingerprintMismatch("dataset does not belong to this network");
    if (config.max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
    const std::vector<int> train_indices = dataset.indices_of(SplitTag::train);
    if (train_indices.empty()) throw ValidationError("dataset has no training split");

    const std::vector<std::string> sources =
        config.sources.empty() ? dataset.source_labels() : config.sources;

    // All scenarios share one layout (full per-source layouts are
    // scenario-independent); fingerprint taken from the first record.
    const MeasurementSet first =
        stacked_measurements(dataset.records[static_cast<std::size_t>(train_indices.front())],
                             sources);
    const int m = first.size();
    const std::string layout_fp = first.layout.fingerprint();

    const int batch_size =
        std::min<int>(config.batch_size, static_cast<int>(train_indices.size()));
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

    Eigen::VectorXd sigma = config.sigma_init_vector.size()
                                ? config.sigma_init_vector
                                : Eigen::VectorXd::Constant(m, config.sigma_init);
    Eigen::VectorXd bias = config.bias_init_vector.size()
                               ? config.bias_init_vector
                               : Eigen::VectorXd::Constant(m, config.bias_init);
    if (sigma.size() != m || bias.size() != m)
        throw std::invalid_argument("sigma/bias init length does not match layout");
    sigma = sigma.cwiseMax(kSigmaFloor);

    AdamState adam_sigma =
        AdamState::fresh(m, config.eta, config.beta1, config.beta2, config.eps_adam);
    AdamState adam_bias =
        AdamState::fresh(m, config.eta, config.beta1, config.beta2, config.eps_adam);

    TrainedParameters out;
    out.network_fingerprint = network.fingerprint();
    out.layout_fingerprint = layout_fp;
    out.sources = sources;
    out.config = config;

    const std::uint64_t batch_stream = mix_seed(config.seed, tag_of("batch"));
    for (int k = 1; k <= config.max_iter; ++k) {
        SeededRng rng(mix_seed(batch_stream, static_cast<std::uint64_t>(k)));
        std::vector<std::size_t> sel =
            rng.sample_without_replacement(train_indices.size(), static_cast<std::size_t>(batch_size));
        std::sort(sel.begin(), sel.end());

        std::vector<ScenarioBatchItem> batch;
        batch.reserve(sel.size());
        for (std::size_t s : sel) {
            const ScenarioRecord& rec = dataset.records[static_cast<std::size_t>(train_indices[s])];
            batch.push_back({rec.scenario.scenario_id, stacked_measurements(rec, sources), rec.x_ac});
        }

        const RestorationParams params{sigma, bias};
        const BatchEval eval = evaluate_batch(network, batch, params, config.restore_eps,
                                              config.restore_max_iter, threads);
        for (int id : eval.failed_ids)
            out.failure_log.push_back("iteration " + std::to_string(k) + ": scenario " +
                                      std::to_string(id) + " restoration failed");
        if (2 * static_cast<int>(eval.failed_ids.size()) > static_cast<int>(batch.size())) {
            std::string ids;
            for (int id : eval.failed_ids) ids += " " + std::to_string(id);
            throw TrainingAbort("training aborted at iteration " + std::to_string(k) + ": " +
                                std::to_string(eval.failed_ids.size()) + "/" +
                                std::to_string(batch.size()) + " restorations failed:" + ids);
        }

        std::tie(adam_sigma, sigma) = adam_step(adam_sigma, sigma, eval.grad_sigma);
        sigma = sigma.cwiseMax(kSigmaFloor);
        std::tie(adam_bias, bias) = adam_step(adam_bias, bias, eval.grad_bias);

        out.loss_history.push_back(eval.loss);
        out.loss_per_scenario.push_back(eval.loss / static_cast<double>(batch.size()));
    }

    out.sigma_opt = sigma;
    out.bias_opt = bias;
    return out;
}

namespace {

json config_to_json(const TrainingConfig& c) {
    json j;
    j["eta"] = c.eta;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps_adam"] = c.eps_adam;
    j["batch_size"] = c.batch_size;
    j["max_iter"] = c.max_iter;
    j["sigma_init"] = c.sigma_init;
    j["bias_init"] = c.bias_init;
    j["seed"] = c.seed;
    j["restore_eps"] = c.restore_eps;
    j["restore_max_iter"] = c.restore_max_iter;
    j["sources"] = c.sources;
    return j;
}

TrainingConfig config_from_json(const json& j) {
    TrainingConfig c;
    c.eta = j.value("eta", c.eta);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps_adam = j.value("eps_adam", c.eps_adam);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_iter = j.value("max_iter", c.max_iter);
    c.sigma_init = j.value("sigma_init", c.sigma_init);
    c.bias_init = j.value("bias_init", c.bias_init);
    c.seed = j.value("seed", c.seed);
    c.restore_eps = j.value("restore_eps", c.restore_eps);
    c.restore_max_iter = j.value("restore_max_iter", c.restore_max_iter);
    if (j.contains("sources")) c.sources = j["sources"].get<std::vector<std::string>>();
    return c;
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

Eigen::VectorXd from_std(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

const TrainedParameters* TrainedParameterSet::find_group(
    const std::string& layout_fingerprint) const {
    for (const TrainedParameters& g : groups)
        if (g.layout_fingerprint == layout_fingerprint) return &g;
    return nullptr;
}

std::string trained_parameters_to_json_text(const TrainedParameterSet& set) {
    json doc;
    doc["network_fingerprint"] = set.network_fingerprint;
    json groups = json::array();
    for (const TrainedParameters& g : set.groups) {
        json jg;
        jg["sigma"] = to_std(g.sigma_opt);
        jg["bias"] = to_std(g.bias_opt);
        jg["loss_history"] = g.loss_history;
        jg["loss_per_scenario"] = g.loss_per_scenario;
        jg["network_fingerprint"] = g.network_fingerprint;
        jg["layout_fingerprint"] = g.layout_fingerprint;
        jg["sources"] = g.sources;
        jg["config"] = config_to_json(g.config);
        jg["failures"] = g.failure_log;
        groups.push_back(std::move(jg));
    }
    doc["groups"] = std::move(groups);
    return doc.dump(2) + "\n";
}

TrainedParameterSet trained_parameters_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("trained parameters: ") + e.what());
    }
    TrainedParameterSet set;
    set.network_fingerprint = doc.value("network_fingerprint", "");
    if (!doc.contains("groups") || !doc["groups"].is_array())
        throw ParseError("trained parameters: missing groups array");
    for (const json& jg : doc["groups"]) {
        TrainedParameters g;
        g.sigma_opt = from_std(jg["sigma"].get<std::vector<double>>());
        g.bias_opt = from_std(jg["bias"].get<std::vector<double>>());
        if (jg.contains("loss_history"))
            g.loss_history = jg["loss_history"].get<std::vector<double>>();
        if (jg.contains("loss_per_scenario"))
            g.loss_per_scenario = jg["loss_per_scenario"].get<std::vector<double>>();
        g.network_fingerprint = jg.value("network_fingerprint", "");
        g.layout_fingerprint = jg.value("layout_fingerprint", "");
        if (jg.contains("sources")) g.sources = jg["sources"].get<std::vector<std::string>>();
        if (jg.contains("config")) g.config = config_from_json(jg["config"]);
        if (jg.contains("failures")) g.failure_log = jg["failures"].get<std::vector<std::string>>();
        set.groups.push_back(std::move(g));
    }
    return set;
}

void save_trained_parameters(const TrainedParameterSet& set, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write trained parameters: " + path.string());
    out << trained_parameters_to_json_text(set);
}

TrainedParameterSet load_trained_parameters(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open trained parameters: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return trained_parameters_from_json_text(buf.str());
}

std::string loss_history_csv(const TrainedParameters& params) {
    std::ostringstream out;
    out << "iteration,loss,loss_per_scenario\n";
    out.precision(17);
    for (std::size_t i = 0; i < params.loss_history.size(); ++i) {
        out << (i + 1) << "," << params.loss_history[i] << ","
            << (i < params.loss_per_scenario.size() ? params.loss_per_scenario[i] : 0.0) << "\n";
    }
    return out.str();
}

}  // namespace acrestore
