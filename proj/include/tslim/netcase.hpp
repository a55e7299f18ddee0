#pragma once

#include <complex>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tslim/loadspec.hpp"

namespace tslim {

using Complex = std::complex<double>;

enum class BusKind { Slack, PV, PQ };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::PQ;
    double v_mag = 1.0;   // pu (seed/solution profile)
    double v_ang = 0.0;   // rad
    double p_load = 0.0;  // pu on system base
    double q_load = 0.0;  // pu on system base
    double shunt_b = 0.0; // pu susceptance
    int area = 1;
};

struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;          // pu
    double x = 0.0;          // pu
    double b_charging = 0.0; // pu total line charging
    double rating = 0.0;     // pu MVA on system base
    double tap = 1.0;        // off-nominal ratio on the from side
    bool in_service = true;
};

struct Generator {
    int bus = 0;
    double p_set = 0.0;  // pu on system base
    double v_set = 1.0;  // pu
    double q_min = -1e9; // pu on system base
    double q_max = 1e9;  // pu on system base
    double p_max = 1e9;  // pu redispatch ceiling
    double mva_base = 100.0;
    double h = 1.0;      // s, on mva_base
    double xdp = 0.1;    // pu on mva_base
    double d = 0.0;      // pu torque per pu speed deviation, on mva_base
};

struct NetworkCase {
    double system_mva_base = 100.0;
    double f_hz = 60.0;
    std::string name;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;
    std::map<int, LoadModelSpec> load_models;  // bus id -> model at that bus

    int bus_index(int bus_id) const;  // -1 when absent
    const Bus& bus_by_id(int bus_id) const;
    int slack_index() const;

    // Throws ValidationError naming the offending record.
    void validate() const;

    // True when every bus is reachable over in-service branches, optionally
    // pretending branch `skip` is out of service.
    bool connected(int skip_branch = -1) const;
};

NetworkCase load_case(const std::string& path);
NetworkCase parse_case(const std::string& json_text, const std::string& origin);

// Dense bus admittance matrix, row-major n x n over case bus order.
std::vector<std::vector<Complex>> build_ybus(const NetworkCase& net);

// Copy with one branch out of service. Throws IslandingError when the outage
// splits the network.
NetworkCase apply_contingency(const NetworkCase& net, int branch_index);

}  // namespace tslim
