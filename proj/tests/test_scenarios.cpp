#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "acrestore/common.hpp"
#include "acrestore/scenarios.hpp"
#include "oracles.hpp"

using namespace acrestore;
namespace fs = std::filesystem;

namespace {

const fs::path kData = ACRESTORE_DATA_DIR;

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("acrestore_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

CorruptionSpec tiny_spec() {
    CorruptionSpec spec;
    SourceCorruption src;
    src.label = "socp_like";
    src.classes[Quantity::theta] = {0.0, 0.0, true};
    src.classes[Quantity::V] = {0.01, 1e-3, false};
    spec.sources.push_back(src);
    return spec;
}

}  // namespace

TEST_CASE("zero std produces unit multipliers") {
    const Network net = load_case(kData / "case5.json");
    const auto scenarios = generate_scenarios(net, 10, 0.0, 7);
    for (const LoadScenario& s : scenarios)
        for (double m : s.p_multipliers) CHECK(m == 1.0);
}

TEST_CASE("multiplier statistics match the generator parameters") {
    const Network net = load_case(kData / "case5.json");
    const auto scenarios = generate_scenarios(net, 10000, 0.1, 99);
    double sum = 0.0, sq = 0.0;
    int count = 0;
    for (const LoadScenario& s : scenarios)
        for (double m : s.p_multipliers) {
            sum += m;
            sq += m * m;
            ++count;
        }
    const double mean = sum / count;
    const double stddev = std::sqrt(sq / count - mean * mean);
    CHECK(std::abs(mean - 1.0) < 0.01);
    CHECK(std::abs(stddev - 0.1) < 0.01);
}

TEST_CASE("same seed reproduces the scenario list exactly") {
    const Network net = load_case(kData / "case5.json");
    const auto a = generate_scenarios(net, 50, 0.1, 123);
    const auto b = generate_scenarios(net, 50, 0.1, 123);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i].p_multipliers == b[i].p_multipliers);

    SUBCASE("shared vs independent P/Q multipliers") {
        for (const LoadScenario& s : a) CHECK(s.p_multipliers == s.q_multipliers);
        const auto c = generate_scenarios(net, 5, 0.1, 123, true);
        bool any_differ = false;
        for (const LoadScenario& s : c) any_differ |= s.p_multipliers != s.q_multipliers;
        CHECK(any_differ);
    }
}

TEST_CASE("multipliers are truncated below at 0.1") {
    const Network net = load_case(kData / "case2.json");
    const auto scenarios = generate_scenarios(net, 2000, 1.5, 5);  // wild std to force truncation
    double lowest = 1e9;
    for (const LoadScenario& s : scenarios)
        for (double m : s.p_multipliers) lowest = std::min(lowest, m);
    CHECK(lowest >= 0.1);
    CHECK(lowest <= 0.1 + 1e-12);  // with std=1.5 the floor is certainly hit
}

TEST_CASE("ground truth states satisfy their dispatch spec") {
    const Network net = load_case(kData / "case5.json");
    const auto scenarios = generate_scenarios(net, 4, 0.1, 11);
    const GroundTruthResult truth = ground_truth_states(net, scenarios);
    CHECK(truth.dropped_ids.empty());
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        REQUIRE(truth.states[i].has_value());
        const Network scaled = apply_scenario(net, scenarios[i]);
        CHECK(pf_mismatch(scaled, make_dispatch_spec(scaled, {}), *truth.states[i]) <= 1e-6);
    }
}

TEST_CASE("zero demand on a shunt-free network yields the flat profile") {
    std::vector<Bus> buses{{1, BusKind::slack}, {2, BusKind::pq}};
    std::vector<Line> lines{{0, 1, {1.0, -10.0}, {1.0, -10.0}, {}, {}}};
    const Network net(std::move(buses), std::move(lines), 100.0);
    LoadScenario sc;
    sc.scenario_id = 0;
    sc.p_multipliers = {1.0, 1.0};
    sc.q_multipliers = {1.0, 1.0};
    const GroundTruthResult truth = ground_truth_states(net, {sc});
    REQUIRE(truth.states[0].has_value());
    MeasurementLayout layout;
    layout.channels.push_back({Quantity::P, 0, -1, LineEnd::forward, "s"});
    layout.channels.push_back({Quantity::P, 1, -1, LineEnd::forward, "s"});
    const Eigen::VectorXd h = evaluate_h(net, *truth.states[0], layout);
    CHECK(h.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("absurdly scaled scenarios are dropped and logged") {
    const Network net = load_case(kData / "case5.json");
    LoadScenario sane;
    sane.scenario_id = 0;
    sane.p_multipliers.assign(5, 1.0);
    sane.q_multipliers.assign(5, 1.0);
    LoadScenario crazy = sane;
    crazy.scenario_id = 1;
    crazy.p_multipliers.assign(5, 100.0);
    crazy.q_multipliers.assign(5, 100.0);
    const GroundTruthResult truth = ground_truth_states(net, {sane, crazy});
    CHECK(truth.states[0].has_value());
    CHECK_FALSE(truth.states[1].has_value());
    REQUIRE(truth.dropped_ids.size() == 1);
    CHECK(truth.dropped_ids[0] == 1);
}

TEST_CASE("synthesize_simplified honors the corruption classes") {
    const Network net = load_case(kData / "case5.json");
    const StateVector x = test::random_state(net, 50, 0.1, 0.05);

    SUBCASE("all-zero spec reproduces h exactly with a full mask") {
        SourceCorruption clean;
        clean.label = "clean";
        const MeasurementSet set = synthesize_simplified(net, x, clean, 3);
        const Eigen::VectorXd h = evaluate_h(net, x, set.layout);
        CHECK((set.values - h).cwiseAbs().maxCoeff() == 0.0);
        CHECK(set.effective_size() == set.size());
    }
    SUBCASE("dropped theta class is masked absent") {
        SourceCorruption src;
        src.label = "socp_like";
        src.classes[Quantity::theta] = {0.0, 0.0, true};
        const MeasurementSet set = synthesize_simplified(net, x, src, 3);
        for (int i = 0; i < set.size(); ++i) {
            const bool is_theta =
                set.layout.channels[static_cast<std::size_t>(i)].quantity == Quantity::theta;
            CHECK(static_cast<bool>(set.present[static_cast<std::size_t>(i)]) == !is_theta);
        }
    }
    SUBCASE("pure V bias shifts exactly the V channels") {
        SourceCorruption src;
        src.label = "biased";
        src.classes[Quantity::V] = {0.02, 0.0, false};
        const MeasurementSet set = synthesize_simplified(net, x, src, 3);
        const Eigen::VectorXd h = evaluate_h(net, x, set.layout);
        for (int i = 0; i < set.size(); ++i) {
            const auto q = set.layout.channels[static_cast<std::size_t>(i)].quantity;
            const double diff = set.values[i] - h[i];
            if (q == Quantity::V)
                CHECK(diff == doctest::Approx(0.02).epsilon(1e-14));
            else
                CHECK(diff == 0.0);
        }
    }
}

TEST_CASE("corruption spec JSON round trips") {
    const CorruptionSpec spec = tiny_spec();
    const CorruptionSpec back = corruption_spec_from_json_text(corruption_spec_to_json_text(spec));
    REQUIRE(back.sources.size() == 1);
    CHECK(back.sources[0].label == "socp_like");
    CHECK(back.sources[0].classes.at(Quantity::theta).drop);
    CHECK(back.sources[0].classes.at(Quantity::V).additive_bias == 0.01);
    CHECK_THROWS_AS(corruption_spec_from_json_text("{"), ParseError);
}

TEST_CASE("dataset build, save, and load round trip deterministically") {
    const Network net = load_case(kData / "case5.json");
    DatasetConfig config;
    config.count = 10;
    config.seed = 21;
    config.corruption = tiny_spec();

    const ScenarioDataset a = build_dataset(net, config, 2);
    const ScenarioDataset b = build_dataset(net, config, 1);  // thread count must not matter
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK((a.records[i].x_ac.stacked() - b.records[i].x_ac.stacked()).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK((a.records[i].z_sets.at("socp_like").values -
               b.records[i].z_sets.at("socp_like").values)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }

    SUBCASE("80/20 split is disjoint and exhaustive") {
        const auto train = a.indices_of(SplitTag::train);
        const auto test = a.indices_of(SplitTag::test);
        CHECK(train.size() == 8);
        CHECK(test.size() == 2);
        CHECK(train.size() + test.size() == a.records.size());
    }

    SUBCASE("every stored ground truth passes the feasibility re-check") {
        for (const ScenarioRecord& rec : a.records) {
            const Network scaled = apply_scenario(net, rec.scenario);
            CHECK(pf_mismatch(scaled, make_dispatch_spec(scaled, {}), rec.x_ac) <= 1e-6);
        }
    }

    SUBCASE("saved bytes are identical across runs and reload intact") {
        const fs::path d1 = temp_dir("ds1"), d2 = temp_dir("ds2");
        save_dataset(net, a, d1);
        save_dataset(net, b, d2);
        for (const auto& entry : fs::recursive_directory_iterator(d1)) {
            if (!entry.is_regular_file()) continue;
            const fs::path rel = fs::relative(entry.path(), d1);
            CHECK(slurp(entry.path()) == slurp(d2 / rel));
        }

        const auto [net2, loaded] = load_dataset(d1);
        CHECK(net2.fingerprint() == net.fingerprint());
        REQUIRE(loaded.records.size() == a.records.size());
        for (std::size_t i = 0; i < a.records.size(); ++i) {
            CHECK(loaded.records[i].split == a.records[i].split);
            CHECK((loaded.records[i].x_ac.stacked() - a.records[i].x_ac.stacked())
                      .cwiseAbs()
                      .maxCoeff() < 1e-14);
            const auto& za = a.records[i].z_sets.at("socp_like");
            const auto& zl = loaded.records[i].z_sets.at("socp_like");
            REQUIRE(zl.size() == za.size());
            CHECK((zl.values - za.values).cwiseAbs().maxCoeff() < 1e-14);
            CHECK(zl.present == za.present);
        }
    }
}

TEST_CASE("external solutions export/import round trip") {
    const Network net = load_case(kData / "case5.json");
    DatasetConfig config;
    config.count = 5;
    config.seed = 33;
    config.corruption = tiny_spec();
    ScenarioDataset dataset = build_dataset(net, config, 2);

    const fs::path file = temp_dir("ext") / "solutions.json";
    export_external(net, dataset, file);
    const ExternalSolutions imported = import_external(net, file);
    REQUIRE(imported.count("socp_like") == 1);
    CHECK(imported.at("socp_like").size() == dataset.records.size());
    for (const ScenarioRecord& rec : dataset.records) {
        const MeasurementSet& orig = rec.z_sets.at("socp_like");
        const MeasurementSet& back = imported.at("socp_like").at(rec.scenario.scenario_id);
        REQUIRE(back.size() == orig.size());
        CHECK((back.values - orig.values).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(back.present == orig.present);
    }

    SUBCASE("attach replaces matching scenarios and rejects unknown ids") {
        attach_external(dataset, imported);
        ExternalSolutions bogus = imported;
        bogus["socp_like"][999] = imported.at("socp_like").begin()->second;
        CHECK_THROWS_AS(attach_external(dataset, bogus), ValidationError);
    }

    SUBCASE("fingerprint mismatch is rejected") {
        const Network other = load_case(kData / "case2.json");
        CHECK_THROWS_AS(import_external(other, file), FingerprintMismatch);
    }
}
