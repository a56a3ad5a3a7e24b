#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace acrestore {

enum class BusKind { slack, pv, pq };

std::string to_string(BusKind kind);
BusKind bus_kind_from_string(const std::string& s);

struct Bus {
    int id = 0;           // external identifier from the case file
    BusKind kind = BusKind::pq;
    double p_demand = 0.0;  // per-unit
    double q_demand = 0.0;  // per-unit
    double g_shunt = 0.0;   // per-unit
    double b_shunt = 0.0;   // per-unit
};

enum class LineEnd { forward, reverse };  // forward = from->to orientation

struct Line {
    int from_bus = 0;  // internal index
    int to_bus = 0;    // internal index
    std::complex<double> y_series_from;  // admittance seen from the from-end
    std::complex<double> y_series_to;    // admittance seen from the to-end
    std::complex<double> y_shunt_from;
    std::complex<double> y_shunt_to;
};

struct Violation {
    std::string entity;  // e.g. "bus 7", "line 3"
    std::string rule;    // e.g. "multiple slack buses"
    std::string detail;
};

// Immutable grid description. Buses are densely re-indexed 0..N-1 on
// construction; the external ids from the case file are kept for I/O.
class Network {
public:
    Network(std::vector<Bus> buses, std::vector<Line> lines, double base_mva);

    int bus_count() const { return static_cast<int>(buses_.size()); }
    int line_count() const { return static_cast<int>(lines_.size()); }
    double base_mva() const { return base_mva_; }

    const Bus& bus(int i) const { return buses_.at(static_cast<std::size_t>(i)); }
    const Line& line(int i) const { return lines_.at(static_cast<std::size_t>(i)); }
    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Line>& lines() const { return lines_; }

    int slack_index() const { return slack_index_; }

    int internal_index(int external_id) const;  // throws ValidationError if unknown
    int external_id(int internal_index) const { return buses_.at(static_cast<std::size_t>(internal_index)).id; }

    // Line ends incident to a bus, as (line index, end seen from that bus).
    const std::vector<std::pair<int, LineEnd>>& incident(int bus_index) const {
        return incidence_.at(static_cast<std::size_t>(bus_index));
    }

    // Stable content hash over every numeric and structural field.
    const std::string& fingerprint() const { return fingerprint_; }

private:
    std::vector<Bus> buses_;
    std::vector<Line> lines_;
    double base_mva_;
    int slack_index_ = -1;
    std::unordered_map<int, int> external_to_internal_;
    std::vector<std::vector<std::pair<int, LineEnd>>> incidence_;
    std::string fingerprint_;
};

// The (y_series, y_shunt) pair for one orientation of a line.
std::pair<std::complex<double>, std::complex<double>> admittance_of(const Network& network,
                                                                    int line_index,
                                                                    LineEnd direction);

// Empty iff every Network invariant holds. Violations are data, not errors.
std::vector<Violation> validate(const Network& network);

Network load_case(const std::filesystem::path& path);
Network case_from_json_text(const std::string& text, const std::string& origin = "<memory>");
std::string case_to_json_text(const Network& network);
void save_case(const Network& network, const std::filesystem::path& path);

}  // namespace acrestore
