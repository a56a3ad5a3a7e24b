#include <doctest.h>

#include <complex>
#include <filesystem>
#include <fstream>

#include "acrestore/common.hpp"
#include "acrestore/network.hpp"

using namespace acrestore;

namespace {

const std::filesystem::path kData = ACRESTORE_DATA_DIR;

const char* kMinimalCase = R"({
  "base_mva": 100.0,
  "buses": [
    {"id": 1, "kind": "slack"},
    {"id": 2, "kind": "pq", "pd": 0.3, "qd": 0.1}
  ],
  "lines": [{"from": 1, "to": 2, "r": 0.01, "x": 0.1, "b_charge": 0.0}]
})";

}  // namespace

TEST_CASE("minimal two-bus case loads") {
    const Network net = case_from_json_text(kMinimalCase);
    CHECK(net.bus_count() == 2);
    CHECK(net.line_count() == 1);
    CHECK(net.slack_index() == 0);
    CHECK(net.bus(1).p_demand == doctest::Approx(0.3));
    CHECK(net.internal_index(2) == 1);
    CHECK(net.external_id(1) == 2);
}

TEST_CASE("two slack buses rejected") {
    const char* text = R"({
      "base_mva": 100.0,
      "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "slack"}],
      "lines": [{"from": 1, "to": 2, "r": 0.01, "x": 0.1}]
    })";
    CHECK_THROWS_WITH_AS(case_from_json_text(text),
                         doctest::Contains("multiple slack buses"), ValidationError);
}

TEST_CASE("bundled 5-bus case mirrors the PJM topology") {
    const Network net = load_case(kData / "case5.json");
    CHECK(net.bus_count() == 5);
    CHECK(net.line_count() == 6);
    int generators = 0;
    for (const Bus& b : net.buses())
        if (b.kind != BusKind::pq) ++generators;
    CHECK(generators == 3);
    CHECK(validate(net).empty());
}

TEST_CASE("series admittance from r/x") {
    const Network net = case_from_json_text(kMinimalCase);
    const auto [y, ysh] = admittance_of(net, 0, LineEnd::forward);
    // oracle: 1/(0.01 + 0.1j) evaluated independently
    CHECK(y.real() == doctest::Approx(0.99009900990099).epsilon(1e-12));
    CHECK(y.imag() == doctest::Approx(-9.900990099009901).epsilon(1e-12));
    CHECK(ysh == std::complex<double>(0.0, 0.0));
}

TEST_CASE("purely reactive line") {
    const char* text = R"({
      "base_mva": 100.0,
      "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}],
      "lines": [{"from": 1, "to": 2, "r": 0.0, "x": 1.0}]
    })";
    const Network net = case_from_json_text(text);
    const auto [y, ysh] = admittance_of(net, 0, LineEnd::forward);
    CHECK(y.real() == doctest::Approx(0.0));
    CHECK(y.imag() == doctest::Approx(-1.0));
}

TEST_CASE("forward and reverse agree on symmetric lines") {
    const Network net = load_case(kData / "case5.json");
    for (int l = 0; l < net.line_count(); ++l) {
        const auto fwd = admittance_of(net, l, LineEnd::forward);
        const auto rev = admittance_of(net, l, LineEnd::reverse);
        CHECK(fwd.first == rev.first);
        CHECK(fwd.second == rev.second);
    }
    CHECK_THROWS_AS(admittance_of(net, 99, LineEnd::forward), std::out_of_range);
}

TEST_CASE("explicit admittance override wins over r/x") {
    const char* text = R"({
      "base_mva": 100.0,
      "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}],
      "lines": [{"from": 1, "to": 2, "b_charge": 0.0,
                 "g_from": 1.0, "b_from": -5.0, "g_to": 2.0, "b_to": -6.0}]
    })";
    const Network net = case_from_json_text(text);
    CHECK(admittance_of(net, 0, LineEnd::forward).first == std::complex<double>(1.0, -5.0));
    CHECK(admittance_of(net, 0, LineEnd::reverse).first == std::complex<double>(2.0, -6.0));
}

TEST_CASE("validate reports structural violations as data") {
    SUBCASE("valid bundled case") {
        CHECK(validate(load_case(kData / "case14.json")).empty());
    }
    SUBCASE("isolated bus") {
        std::vector<Bus> buses{{1, BusKind::slack}, {2, BusKind::pq}, {3, BusKind::pq}};
        std::vector<Line> lines{{0, 1, {1, -5}, {1, -5}, {}, {}}};
        const Network net(std::move(buses), std::move(lines), 100.0);
        const auto violations = validate(net);
        REQUIRE(violations.size() == 1);
        CHECK(violations[0].rule == "disconnected component");
    }
    SUBCASE("dangling bus reference") {
        std::vector<Bus> buses{{1, BusKind::slack}, {2, BusKind::pq}};
        std::vector<Line> lines{{0, 1, {1, -5}, {1, -5}, {}, {}},
                                {0, 7, {1, -5}, {1, -5}, {}, {}}};
        const Network net(std::move(buses), std::move(lines), 100.0);
        const auto violations = validate(net);
        REQUIRE(violations.size() == 1);
        CHECK(violations[0].rule == "dangling bus reference");
        CHECK(violations[0].entity == "line 1");
    }
    SUBCASE("duplicate bus id") {
        std::vector<Bus> buses{{1, BusKind::slack}, {1, BusKind::pq}};
        std::vector<Line> lines{{0, 1, {1, -5}, {1, -5}, {}, {}}};
        const Network net(std::move(buses), std::move(lines), 100.0);
        const auto violations = validate(net);
        REQUIRE_FALSE(violations.empty());
        CHECK(violations[0].rule == "duplicate bus id");
    }
}

TEST_CASE("case round-trips bit-identically") {
    for (const char* name : {"case2.json", "case5.json", "case14.json"}) {
        const Network a = load_case(kData / name);
        const Network b = case_from_json_text(case_to_json_text(a));
        REQUIRE(a.bus_count() == b.bus_count());
        REQUIRE(a.line_count() == b.line_count());
        CHECK(a.fingerprint() == b.fingerprint());  // covers every numeric field
        CHECK(a.base_mva() == b.base_mva());
    }
}

TEST_CASE("parse errors carry field context") {
    CHECK_THROWS_WITH_AS(case_from_json_text(R"({"buses": [], "lines": []})", "bad.json"),
                         doctest::Contains("base_mva"), ParseError);
    CHECK_THROWS_WITH_AS(
        case_from_json_text(
            R"({"base_mva": 100, "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}],
                "lines": [{"from": 1, "to": 2}]})",
            "bad.json"),
        doctest::Contains("lines[0]"), ParseError);
    CHECK_THROWS_AS(load_case("/nonexistent/path/case.json"), ParseError);
}

TEST_CASE("admittance_of is pure") {
    const Network net = load_case(kData / "case5.json");
    const auto a = admittance_of(net, 2, LineEnd::forward);
    const auto b = admittance_of(net, 2, LineEnd::forward);
    CHECK(a == b);
}
