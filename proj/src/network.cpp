#include "acrestore/network.hpp"

#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "acrestore/common.hpp"

namespace acrestore {

using nlohmann::json;

std::string to_string(BusKind kind) {
    switch (kind) {
        case BusKind::slack: return "slack";
        case BusKind::pv: return "pv";
        case BusKind::pq: return "pq";
    }
    return "pq";
}

BusKind bus_kind_from_string(const std::string& s) {
    if (s == "slack") return BusKind::slack;
    if (s == "pv") return BusKind::pv;
    if (s == "pq") return BusKind::pq;
    throw ParseError("unknown bus kind '" + s + "' (expected slack|pv|pq)");
}

Network::Network(std::vector<Bus> buses, std::vector<Line> lines, double base_mva)
    : buses_(std::move(buses)), lines_(std::move(lines)), base_mva_(base_mva) {
    for (int i = 0; i < bus_count(); ++i) {
        // Keep the first occurrence on duplicate ids; validate() reports them.
        external_to_internal_.emplace(buses_[static_cast<std::size_t>(i)].id, i);
        if (buses_[static_cast<std::size_t>(i)].kind == BusKind::slack && slack_index_ < 0)
            slack_index_ = i;
    }
    incidence_.resize(buses_.size());
    for (int l = 0; l < line_count(); ++l) {
        const Line& line = lines_[static_cast<std::size_t>(l)];
        if (line.from_bus >= 0 && line.from_bus < bus_count())
            incidence_[static_cast<std::size_t>(line.from_bus)].emplace_back(l, LineEnd::forward);
        if (line.to_bus >= 0 && line.to_bus < bus_count())
            incidence_[static_cast<std::size_t>(line.to_bus)].emplace_back(l, LineEnd::reverse);
    }

    Fnv1a h;
    h.feed(base_mva_);
    h.feed(bus_count());
    for (const Bus& b : buses_) {
        h.feed(b.id);
        h.feed(static_cast<int>(b.kind));
        h.feed(b.p_demand);
        h.feed(b.q_demand);
        h.feed(b.g_shunt);
        h.feed(b.b_shunt);
    }
    h.feed(line_count());
    for (const Line& l : lines_) {
        h.feed(l.from_bus);
        h.feed(l.to_bus);
        h.feed(l.y_series_from.real());
        h.feed(l.y_series_from.imag());
        h.feed(l.y_series_to.real());
        h.feed(l.y_series_to.imag());
        h.feed(l.y_shunt_from.real());
        h.feed(l.y_shunt_from.imag());
        h.feed(l.y_shunt_to.real());
        h.feed(l.y_shunt_to.imag());
    }
    fingerprint_ = h.hex();
}

int Network::internal_index(int external_id) const {
    auto it = external_to_internal_.find(external_id);
    if (it == external_to_internal_.end())
        throw ValidationError("unknown bus id " + std::to_string(external_id));
    return it->second;
}

std::pair<std::complex<double>, std::complex<double>> admittance_of(const Network& network,
                                                                    int line_index,
                                                                    LineEnd direction) {
    if (line_index < 0 || line_index >= network.line_count())
        throw std::out_of_range("line index " + std::to_string(line_index) + " out of range");
    const Line& line = network.line(line_index);
    if (direction == LineEnd::forward) return {line.y_series_from, line.y_shunt_from};
    return {line.y_series_to, line.y_shunt_to};
}

std::vector<Violation> validate(const Network& network) {
    std::vector<Violation> out;
    const int n = network.bus_count();

    int slack_count = 0;
    std::unordered_map<int, int> id_seen;
    for (int i = 0; i < n; ++i) {
        const Bus& b = network.bus(i);
        if (b.kind == BusKind::slack) ++slack_count;
        auto [it, inserted] = id_seen.emplace(b.id, i);
        if (!inserted)
            out.push_back({"bus " + std::to_string(b.id), "duplicate bus id",
                           "also used by bus at position " + std::to_string(it->second)});
    }
    if (slack_count == 0) out.push_back({"network", "no slack bus", ""});
    if (slack_count > 1)
        out.push_back({"network", "multiple slack buses",
                       std::to_string(slack_count) + " buses marked slack"});

    for (int l = 0; l < network.line_count(); ++l) {
        const Line& line = network.line(l);
        const bool from_ok = line.from_bus >= 0 && line.from_bus < n;
        const bool to_ok = line.to_bus >= 0 && line.to_bus < n;
        if (!from_ok || !to_ok) {
            out.push_back({"line " + std::to_string(l), "dangling bus reference",
                           "from=" + std::to_string(line.from_bus) +
                               " to=" + std::to_string(line.to_bus)});
            continue;
        }
        if (line.from_bus == line.to_bus)
            out.push_back({"line " + std::to_string(l), "self loop",
                           "bus " + std::to_string(network.external_id(line.from_bus))});
        for (auto [name, y] : {std::pair{"y_series_from", line.y_series_from},
                               std::pair{"y_series_to", line.y_series_to}}) {
            const double mag = std::abs(y);
            if (!std::isfinite(mag) || mag == 0.0)
                out.push_back({"line " + std::to_string(l), "series admittance not finite and nonzero",
                               std::string(name)});
        }
    }

    // Connectivity over valid lines only.
    if (n > 0) {
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        std::queue<int> frontier;
        frontier.push(0);
        seen[0] = 1;
        int reached = 1;
        while (!frontier.empty()) {
            const int b = frontier.front();
            frontier.pop();
            for (auto [l, end] : network.incident(b)) {
                const Line& line = network.line(l);
                const int other = end == LineEnd::forward ? line.to_bus : line.from_bus;
                if (other >= 0 && other < n && !seen[static_cast<std::size_t>(other)]) {
                    seen[static_cast<std::size_t>(other)] = 1;
                    ++reached;
                    frontier.push(other);
                }
            }
        }
        if (reached != n) {
            std::string isolated;
            for (int i = 0; i < n; ++i)
                if (!seen[static_cast<std::size_t>(i)])
                    isolated += (isolated.empty() ? "" : ",") + std::to_string(network.external_id(i));
            out.push_back({"network", "disconnected component",
                           std::to_string(n - reached) + " unreachable buses: " + isolated});
        }
    }

    return out;
}

namespace {

double require_number(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_number())
        throw ParseError(where + ": missing or non-numeric field '" + key + "'");
    return it->get<double>();
}

double optional_number(const json& obj, const char* key, double fallback) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    if (!it->is_number()) throw ParseError("field '" + std::string(key) + "' must be a number");
    return it->get<double>();
}

}  // namespace

Network case_from_json_text(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
    if (!doc.is_object()) throw ParseError(origin + ": top level must be an object");
    const double base_mva = require_number(doc, "base_mva", origin);
    if (!doc.contains("buses") || !doc["buses"].is_array())
        throw ParseError(origin + ": missing 'buses' array");
    if (!doc.contains("lines") || !doc["lines"].is_array())
        throw ParseError(origin + ": missing 'lines' array");

    std::vector<Bus> buses;
    std::unordered_map<int, int> external_to_internal;
    for (std::size_t i = 0; i < doc["buses"].size(); ++i) {
        const json& jb = doc["buses"][i];
        const std::string where = origin + ": buses[" + std::to_string(i) + "]";
        Bus b;
        b.id = static_cast<int>(require_number(jb, "id", where));
        if (!jb.contains("kind") || !jb["kind"].is_string())
            throw ParseError(where + ": missing 'kind'");
        try {
            b.kind = bus_kind_from_string(jb["kind"].get<std::string>());
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what());
        }
        b.p_demand = optional_number(jb, "pd", 0.0);
        b.q_demand = optional_number(jb, "qd", 0.0);
        b.g_shunt = optional_number(jb, "gs", 0.0);
        b.b_shunt = optional_number(jb, "bs", 0.0);
        external_to_internal.emplace(b.id, static_cast<int>(buses.size()));
        buses.push_back(b);
    }

    std::vector<Line> lines;
    for (std::size_t i = 0; i < doc["lines"].size(); ++i) {
        const json& jl = doc["lines"][i];
        const std::string where = origin + ": lines[" + std::to_string(i) + "]";
        Line l;
        const int from_id = static_cast<int>(require_number(jl, "from", where));
        const int to_id = static_cast<int>(require_number(jl, "to", where));
        auto fit = external_to_internal.find(from_id);
        auto tit = external_to_internal.find(to_id);
        l.from_bus = fit == external_to_internal.end() ? -1 : fit->second;
        l.to_bus = tit == external_to_internal.end() ? -1 : tit->second;

        const double b_charge = optional_number(jl, "b_charge", 0.0);
        l.y_shunt_from = {0.0, b_charge / 2.0};
        l.y_shunt_to = {0.0, b_charge / 2.0};

        const bool has_override = jl.contains("g_from") || jl.contains("b_from") ||
                                  jl.contains("g_to") || jl.contains("b_to");
        if (has_override) {
            l.y_series_from = {require_number(jl, "g_from", where), require_number(jl, "b_from", where)};
            l.y_series_to = {require_number(jl, "g_to", where), require_number(jl, "b_to", where)};
        } else {
            const double r = require_number(jl, "r", where);
            const double x = require_number(jl, "x", where);
            const std::complex<double> z{r, x};
            if (std::abs(z) == 0.0) throw ParseError(where + ": zero impedance line");
            const std::complex<double> y = 1.0 / z;
            l.y_series_from = y;
            l.y_series_to = y;
        }
        lines.push_back(l);
    }

    Network network(std::move(buses), std::move(lines), base_mva);
    const auto violations = validate(network);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << origin << ": invalid network:";
        for (const auto& v : violations) {
            msg << " [" << v.entity << ": " << v.rule;
            if (!v.detail.empty()) msg << " (" << v.detail << ")";
            msg << "]";
        }
        throw ValidationError(msg.str());
    }
    return network;
}

Network load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open case file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return case_from_json_text(buf.str(), path.string());
}

std::string case_to_json_text(const Network& network) {
    json doc;
    doc["base_mva"] = network.base_mva();
    json buses = json::array();
    for (const Bus& b : network.buses()) {
        buses.push_back({{"id", b.id},
                         {"kind", to_string(b.kind)},
                         {"pd", b.p_demand},
                         {"qd", b.q_demand},
                         {"gs", b.g_shunt},
                         {"bs", b.b_shunt}});
    }
    doc["buses"] = std::move(buses);
    json lines = json::array();
    for (const Line& l : network.lines()) {
        json jl;
        jl["from"] = network.external_id(l.from_bus);
        jl["to"] = network.external_id(l.to_bus);
        // Always emit the explicit per-direction form; it round-trips exactly
        // regardless of how the admittances were first specified.
        jl["g_from"] = l.y_series_from.real();
        jl["b_from"] = l.y_series_from.imag();
        jl["g_to"] = l.y_series_to.real();
        jl["b_to"] = l.y_series_to.imag();
        jl["b_charge"] = l.y_shunt_from.imag() * 2.0;
        lines.push_back(std::move(jl));
    }
    doc["lines"] = std::move(lines);
    return doc.dump(2) + "\n";
}

void save_case(const Network& network, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write case file: " + path.string());
    out << case_to_json_text(network);
}

}  // namespace acrestore
