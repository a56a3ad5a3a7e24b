#include "acrestore/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "acrestore/common.hpp"

namespace acrestore {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<LoadScenario> generate_scenarios(const Network& network, int count, double std,
                                             std::uint64_t seed, bool independent_pq) {
    if (std < 0.0) throw std::invalid_argument("load std must be >= 0");
    const std::uint64_t stream = mix_seed(seed, tag_of("load-scenarios"));
    std::vector<LoadScenario> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
        // Per-scenario stream so draws are independent of generation order.
        SeededRng rng(mix_seed(stream, static_cast<std::uint64_t>(s)));
        LoadScenario sc;
        sc.scenario_id = s;
        sc.p_multipliers.resize(static_cast<std::size_t>(network.bus_count()));
        sc.q_multipliers.resize(static_cast<std::size_t>(network.bus_count()));
        for (int b = 0; b < network.bus_count(); ++b) {
            const double mp = std::max(1.0 + rng.normal(0.0, std), 0.1);
            const double mq =
                independent_pq ? std::max(1.0 + rng.normal(0.0, std), 0.1) : mp;
            sc.p_multipliers[static_cast<std::size_t>(b)] = mp;
            sc.q_multipliers[static_cast<std::size_t>(b)] = mq;
        }
        out.push_back(std::move(sc));
    }
    return out;
}

Network apply_scenario(const Network& network, const LoadScenario& scenario) {
    if (static_cast<int>(scenario.p_multipliers.size()) != network.bus_count())
        throw std::invalid_argument("scenario multiplier length does not match network");
    std::vector<Bus> buses = network.buses();
    for (int b = 0; b < network.bus_count(); ++b) {
        buses[static_cast<std::size_t>(b)].p_demand *= scenario.p_multipliers[static_cast<std::size_t>(b)];
        buses[static_cast<std::size_t>(b)].q_demand *= scenario.q_multipliers[static_cast<std::size_t>(b)];
    }
    return Network(std::move(buses), network.lines(), network.base_mva());
}

PowerFlowSpec make_dispatch_spec(const Network& scaled_network, const DispatchRule& rule) {
    const int n = scaled_network.bus_count();
    PowerFlowSpec spec(n);
    double total_p = 0.0;
    int gen_count = 0;
    for (int b = 0; b < n; ++b) {
        total_p += scaled_network.bus(b).p_demand;
        if (scaled_network.bus(b).kind != BusKind::pq) ++gen_count;
    }
    const double share = gen_count > 0 ? total_p * (1.0 + rule.loss_factor) / gen_count : 0.0;
    for (int b = 0; b < n; ++b) {
        const Bus& bus = scaled_network.bus(b);
        switch (bus.kind) {
            case BusKind::slack:
                spec.fixed_v[static_cast<std::size_t>(b)] = rule.gen_v_setpoint;
                break;
            case BusKind::pv:
                spec.fixed_v[static_cast<std::size_t>(b)] = rule.gen_v_setpoint;
                spec.fixed_p[static_cast<std::size_t>(b)] = share - bus.p_demand;
                break;
            case BusKind::pq:
                spec.fixed_p[static_cast<std::size_t>(b)] = -bus.p_demand;
                spec.fixed_q[static_cast<std::size_t>(b)] = -bus.q_demand;
                break;
        }
    }
    return spec;
}

GroundTruthResult ground_truth_states(const Network& network,
                                      const std::vector<LoadScenario>& scenarios,
                                      const DispatchRule& rule, double tol, int max_iter,
                                      unsigned threads) {
    GroundTruthResult result;
    result.states.resize(scenarios.size());
    parallel_for_indexed(scenarios.size(), threads, [&](std::size_t i) {
        const Network scaled = apply_scenario(network, scenarios[i]);
        const PowerFlowSpec spec = make_dispatch_spec(scaled, rule);
        try {
            const PowerFlowResult pf =
                solve_power_flow(scaled, spec, StateVector::flat(scaled), tol, max_iter);
            if (pf.converged) result.states[i] = pf.state;
        } catch (const SingularSystemError&) {
            // dropped below like any other non-convergent scenario
        }
    });
    for (std::size_t i = 0; i < scenarios.size(); ++i)
        if (!result.states[i]) result.dropped_ids.push_back(scenarios[i].scenario_id);
    return result;
}

MeasurementSet synthesize_simplified(const Network& network, const StateVector& x_ac,
                                     const SourceCorruption& spec, std::uint64_t seed) {
    MeasurementSet set;
    set.network_fingerprint = network.fingerprint();
    set.sources = {spec.label};
    set.layout = MeasurementLayout::full_for_source(network, spec.label);
    const Eigen::VectorXd h = evaluate_h(network, x_ac, set.layout);
    set.values = Eigen::VectorXd::Zero(set.layout.size());
    set.present.assign(static_cast<std::size_t>(set.layout.size()), 1);

    SeededRng rng(mix_seed(seed, tag_of("corrupt:" + spec.label)));
    for (int i = 0; i < set.layout.size(); ++i) {
        const Channel& c = set.layout.channels[static_cast<std::size_t>(i)];
        ChannelCorruption cc;  // untouched class by default
        if (auto it = spec.classes.find(c.quantity); it != spec.classes.end()) cc = it->second;
        // One draw per slot keeps the stream aligned regardless of drops.
        const double noise = rng.normal(0.0, 1.0);
        if (cc.drop) {
            set.present[static_cast<std::size_t>(i)] = 0;
            continue;
        }
        set.values[i] = h[i] + cc.additive_bias + cc.noise_std * noise;
    }
    return set;
}

CorruptionSpec corruption_spec_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("corruption spec: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("sources") || !doc["sources"].is_array())
        throw ParseError("corruption spec: expected {sources: [...]} object");
    CorruptionSpec spec;
    for (const json& jsrc : doc["sources"]) {
        SourceCorruption src;
        if (!jsrc.contains("label") || !jsrc["label"].is_string())
            throw ParseError("corruption spec: source needs a string label");
        src.label = jsrc["label"].get<std::string>();
        if (jsrc.contains("channels")) {
            for (const auto& [key, jc] : jsrc["channels"].items()) {
                ChannelCorruption cc;
                cc.additive_bias = jc.value("bias", 0.0);
                cc.noise_std = jc.value("noise_std", 0.0);
                cc.drop = jc.value("drop", false);
                if (cc.noise_std < 0) throw ParseError("corruption spec: noise_std must be >= 0");
                src.classes[quantity_from_string(key)] = cc;
            }
        }
        spec.sources.push_back(std::move(src));
    }
    return spec;
}

std::string corruption_spec_to_json_text(const CorruptionSpec& spec) {
    json doc;
    json sources = json::array();
    for (const SourceCorruption& src : spec.sources) {
        json channels = json::object();
        for (const auto& [q, cc] : src.classes)
            channels[to_string(q)] = {
                {"bias", cc.additive_bias}, {"noise_std", cc.noise_std}, {"drop", cc.drop}};
        sources.push_back({{"label", src.label}, {"channels", std::move(channels)}});
    }
    doc["sources"] = std::move(sources);
    return doc.dump(2) + "\n";
}

CorruptionSpec standard_corruption_suite() {
    CorruptionSpec spec;
    SourceCorruption socp;
    socp.label = "socp_like";
    socp.classes[Quantity::V] = {0.010, 3e-3, false};
    socp.classes[Quantity::P] = {-0.020, 1e-2, false};
    socp.classes[Quantity::Q] = {0.005, 5e-3, false};
    socp.classes[Quantity::Pf] = {0.010, 3e-3, false};
    socp.classes[Quantity::Qf] = {-0.005, 1e-3, false};
    socp.classes[Quantity::theta] = {0.0, 0.0, true};
    spec.sources.push_back(std::move(socp));

    SourceCorruption lpac;
    lpac.label = "lpac_like";
    lpac.classes[Quantity::V] = {-0.005, 1e-3, false};
    lpac.classes[Quantity::P] = {0.0, 3e-3, false};
    lpac.classes[Quantity::Q] = {0.0, 3e-3, false};
    lpac.classes[Quantity::Pf] = {0.005, 1e-4, false};
    lpac.classes[Quantity::Qf] = {0.0, 3e-4, false};
    lpac.classes[Quantity::theta] = {0.002, 1e-3, false};
    spec.sources.push_back(std::move(lpac));
    return spec;
}

std::vector<std::string> ScenarioDataset::source_labels() const {
    std::vector<std::string> out;
    if (!records.empty())
        for (const auto& [label, set] : records.front().z_sets) out.push_back(label);
    return out;
}

std::vector<int> ScenarioDataset::indices_of(SplitTag tag) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(records.size()); ++i)
        if (records[static_cast<std::size_t>(i)].split == tag) out.push_back(i);
    return out;
}

const ScenarioRecord& ScenarioDataset::by_id(int scenario_id) const {
    for (const ScenarioRecord& r : records)
        if (r.scenario.scenario_id == scenario_id) return r;
    throw std::out_of_range("unknown scenario id " + std::to_string(scenario_id));
}

ScenarioDataset build_dataset(const Network& network, const DatasetConfig& config,
                              unsigned threads) {
    if (config.corruption.sources.empty())
        throw std::invalid_argument("dataset needs at least one simplified-solution source");
    ScenarioDataset dataset;
    dataset.network_fingerprint = network.fingerprint();
    dataset.config = config;

    const std::vector<LoadScenario> scenarios = generate_scenarios(
        network, config.count, config.load_std, config.seed, config.independent_pq);
    const GroundTruthResult truth =
        ground_truth_states(network, scenarios, config.dispatch, 1e-6, 50, threads);
    dataset.dropped_ids = truth.dropped_ids;

    // Deterministic split by id: scenario s is test iff the running count of
    // test scenarios crosses an integer at s (exact ratio, order-free).
    const auto is_test = [&](int id) {
        const double r = config.test_ratio;
        return static_cast<long>((id + 1) * r) > static_cast<long>(id * r);
    };

    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < scenarios.size(); ++i)
        if (truth.states[i]) kept.push_back(i);

    dataset.records.resize(kept.size());
    parallel_for_indexed(kept.size(), threads, [&](std::size_t k) {
        const std::size_t i = kept[k];
        ScenarioRecord rec;
        rec.scenario = scenarios[i];
        rec.x_ac = *truth.states[i];
        rec.split = is_test(rec.scenario.scenario_id) ? SplitTag::test : SplitTag::train;
        const std::uint64_t scenario_seed =
            mix_seed(mix_seed(config.seed, tag_of("synthesize")),
                     static_cast<std::uint64_t>(rec.scenario.scenario_id));
        for (const SourceCorruption& src : config.corruption.sources)
            rec.z_sets.emplace(src.label,
                               synthesize_simplified(network, rec.x_ac, src, scenario_seed));
        dataset.records[k] = std::move(rec);
    });
    return dataset;
}

namespace {

json scenario_to_json(const Network& network, const ScenarioRecord& rec) {
    json doc;
    doc["id"] = rec.scenario.scenario_id;
    doc["split"] = rec.split == SplitTag::test ? "test" : "train";
    json pm = json::array(), qm = json::array();
    for (int b = 0; b < network.bus_count(); ++b) {
        pm.push_back(rec.scenario.p_multipliers[static_cast<std::size_t>(b)]);
        qm.push_back(rec.scenario.q_multipliers[static_cast<std::size_t>(b)]);
    }
    doc["p_multipliers"] = std::move(pm);
    doc["q_multipliers"] = std::move(qm);
    return doc;
}

}  // namespace

void save_dataset(const Network& network, const ScenarioDataset& dataset, const fs::path& dir) {
    fs::create_directories(dir);
    fs::create_directories(dir / "truth");
    save_case(network, dir / "case.json");

    json scenarios = json::array();
    for (const ScenarioRecord& rec : dataset.records)
        scenarios.push_back(scenario_to_json(network, rec));
    std::ofstream(dir / "scenarios.json") << json{{"scenarios", std::move(scenarios)}}.dump(2)
                                          << "\n";

    for (const ScenarioRecord& rec : dataset.records) {
        const std::string name = std::to_string(rec.scenario.scenario_id) + ".json";
        std::ofstream(dir / "truth" / name) << state_to_json_text(network, rec.x_ac);
        for (const auto& [label, set] : rec.z_sets) {
            fs::create_directories(dir / "sources" / label);
            std::ofstream(dir / "sources" / label / name)
                << measurement_set_to_json_text(network, set);
        }
    }

    json manifest;
    manifest["network_fingerprint"] = dataset.network_fingerprint;
    manifest["seed"] = dataset.config.seed;
    manifest["count"] = dataset.config.count;
    manifest["load_std"] = dataset.config.load_std;
    manifest["test_ratio"] = dataset.config.test_ratio;
    manifest["independent_pq"] = dataset.config.independent_pq;
    manifest["corruption"] = json::parse(corruption_spec_to_json_text(dataset.config.corruption));
    manifest["dispatch"] = {{"gen_v_setpoint", dataset.config.dispatch.gen_v_setpoint},
                            {"loss_factor", dataset.config.dispatch.loss_factor}};
    manifest["dropped_ids"] = dataset.dropped_ids;
    json split_counts;
    split_counts["train"] = dataset.indices_of(SplitTag::train).size();
    split_counts["test"] = dataset.indices_of(SplitTag::test).size();
    manifest["split_counts"] = std::move(split_counts);
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

std::pair<Network, ScenarioDataset> load_dataset(const fs::path& dir) {
    Network network = load_case(dir / "case.json");

    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw ParseError("dataset: missing manifest.json in " + dir.string());
    json manifest = json::parse(mf);

    ScenarioDataset dataset;
    dataset.network_fingerprint = manifest.value("network_fingerprint", "");
    if (dataset.network_fingerprint != network.fingerprint())
        throw FingerprintMismatch("dataset manifest fingerprint does not match case.json");
    dataset.config.seed = manifest.value("seed", std::uint64_t{0});
    dataset.config.count = manifest.value("count", 0);
    dataset.config.load_std = manifest.value("load_std", 0.0);
    dataset.config.test_ratio = manifest.value("test_ratio", 0.2);
    dataset.config.independent_pq = manifest.value("independent_pq", false);
    if (manifest.contains("corruption"))
        dataset.config.corruption = corruption_spec_from_json_text(manifest["corruption"].dump());
    if (manifest.contains("dispatch")) {
        dataset.config.dispatch.gen_v_setpoint = manifest["dispatch"].value("gen_v_setpoint", 1.0);
        dataset.config.dispatch.loss_factor = manifest["dispatch"].value("loss_factor", 0.02);
    }
    if (manifest.contains("dropped_ids"))
        dataset.dropped_ids = manifest["dropped_ids"].get<std::vector<int>>();

    std::ifstream sf(dir / "scenarios.json");
    if (!sf) throw ParseError("dataset: missing scenarios.json in " + dir.string());
    json scenarios = json::parse(sf);

    for (const json& js : scenarios["scenarios"]) {
        ScenarioRecord rec;
        rec.scenario.scenario_id = js["id"].get<int>();
        rec.split = js["split"].get<std::string>() == "test" ? SplitTag::test : SplitTag::train;
        rec.scenario.p_multipliers = js["p_multipliers"].get<std::vector<double>>();
        rec.scenario.q_multipliers = js["q_multipliers"].get<std::vector<double>>();
        if (static_cast<int>(rec.scenario.p_multipliers.size()) != network.bus_count())
            throw ParseError("dataset: multiplier length mismatch for scenario " +
                             std::to_string(rec.scenario.scenario_id));

        const std::string name = std::to_string(rec.scenario.scenario_id) + ".json";
        std::ifstream tf(dir / "truth" / name);
        if (!tf)
            throw ParseError("dataset: missing truth file for scenario " +
                             std::to_string(rec.scenario.scenario_id));
        std::ostringstream tbuf;
        tbuf << tf.rdbuf();
        rec.x_ac = state_from_json_text(network, tbuf.str());
        dataset.records.push_back(std::move(rec));
    }

    if (fs::exists(dir / "sources")) {
        for (const auto& entry : fs::directory_iterator(dir / "sources")) {
            if (!entry.is_directory()) continue;
            const std::string label = entry.path().filename().string();
            for (ScenarioRecord& rec : dataset.records) {
                const fs::path p =
                    entry.path() / (std::to_string(rec.scenario.scenario_id) + ".json");
                if (!fs::exists(p)) continue;
                std::ifstream f(p);
                std::ostringstream buf;
                buf << f.rdbuf();
                rec.z_sets.emplace(label, measurement_set_from_json_text(network, buf.str()));
            }
        }
    }

    for (const ScenarioRecord& rec : dataset.records)
        if (rec.z_sets.empty())
            throw ValidationError("dataset: scenario " +
                                  std::to_string(rec.scenario.scenario_id) +
                                  " has no simplified solutions");
    return {std::move(network), std::move(dataset)};
}

ExternalSolutions import_external(const Network& network, const fs::path& path,
                                  std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open external solutions file: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.contains("network_fingerprint") || !doc.contains("scenarios"))
        throw ParseError(path.string() + ": expected {network_fingerprint, scenarios}");

    ExternalSolutions out;
    for (const json& js : doc["scenarios"]) {
        if (!js.contains("id")) throw ParseError(path.string() + ": scenario entry missing id");
        const int id = js["id"].get<int>();
        json single = {{"network_fingerprint", doc["network_fingerprint"]},
                       {"sources", js["sources"]}};
        // One parsed set per source so each can be attached independently.
        const MeasurementSet all = measurement_set_from_json_text(network, single.dump(), warnings);
        for (const std::string& label : all.sources) {
            MeasurementSet sub;
            sub.network_fingerprint = all.network_fingerprint;
            sub.sources = {label};
            std::vector<double> values;
            for (int i = 0; i < all.size(); ++i) {
                if (all.layout.channels[static_cast<std::size_t>(i)].source != label) continue;
                sub.layout.channels.push_back(all.layout.channels[static_cast<std::size_t>(i)]);
                values.push_back(all.values[i]);
                sub.present.push_back(all.present[static_cast<std::size_t>(i)]);
            }
            sub.values =
                Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
            out[label][id] = std::move(sub);
        }
    }
    return out;
}

void export_external(const Network& network, const ScenarioDataset& dataset,
                     const fs::path& path) {
    json doc;
    doc["network_fingerprint"] = network.fingerprint();
    json scenarios = json::array();
    for (const ScenarioRecord& rec : dataset.records) {
        json js;
        js["id"] = rec.scenario.scenario_id;
        json sources = json::array();
        for (const auto& [label, set] : rec.z_sets) {
            const json one = json::parse(measurement_set_to_json_text(network, set));
            for (const json& s : one["sources"]) sources.push_back(s);
        }
        js["sources"] = std::move(sources);
        scenarios.push_back(std::move(js));
    }
    doc["scenarios"] = std::move(scenarios);
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write external solutions file: " + path.string());
    out << doc.dump(2) << "\n";
}

void attach_external(ScenarioDataset& dataset, const ExternalSolutions& imported) {
    for (const auto& [label, by_id] : imported) {
        for (const auto& [id, set] : by_id) {
            bool found = false;
            for (ScenarioRecord& rec : dataset.records) {
                if (rec.scenario.scenario_id == id) {
                    rec.z_sets[label] = set;
                    found = true;
                    break;
                }
            }
            if (!found)
                throw ValidationError("external solutions reference unknown scenario id " +
                                      std::to_string(id));
        }
    }
}

}  // namespace acrestore
