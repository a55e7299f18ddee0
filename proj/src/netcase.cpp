#include "tslim/netcase.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tslim/errors.hpp"

namespace tslim {

using nlohmann::json;

int NetworkCase::bus_index(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == bus_id) return static_cast<int>(i);
    }
    return -1;
}

const Bus& NetworkCase::bus_by_id(int bus_id) const {
    const int idx = bus_index(bus_id);
    if (idx < 0) throw ValidationError("unknown bus id " + std::to_string(bus_id));
    return buses[idx];
}

int NetworkCase::slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].kind == BusKind::Slack) return static_cast<int>(i);
    }
    return -1;
}

namespace {

// Union-find over bus indices.
struct Dsu {
    std::vector<int> parent;
    explicit Dsu(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

bool NetworkCase::connected(int skip_branch) const {
    if (buses.empty()) return false;
    Dsu dsu(buses.size());
    for (std::size_t k = 0; k < branches.size(); ++k) {
        if (static_cast<int>(k) == skip_branch || !branches[k].in_service) continue;
        dsu.unite(bus_index(branches[k].from), bus_index(branches[k].to));
    }
    const int root = dsu.find(0);
    for (std::size_t i = 1; i < buses.size(); ++i) {
        if (dsu.find(static_cast<int>(i)) != root) return false;
    }
    return true;
}

void NetworkCase::validate() const {
    if (buses.empty()) throw ValidationError("case has no buses");
    std::set<int> ids;
    int n_slack = 0;
    for (const auto& b : buses) {
        if (!ids.insert(b.id).second) {
            throw ValidationError("duplicate bus id " + std::to_string(b.id));
        }
        if (b.v_mag <= 0.0) {
            throw ValidationError("bus " + std::to_string(b.id) + ": v_mag must be positive");
        }
        if (b.kind == BusKind::Slack) ++n_slack;
    }
    if (n_slack != 1) {
        throw ValidationError("case must have exactly one slack bus, found " +
                              std::to_string(n_slack));
    }
    for (std::size_t k = 0; k < branches.size(); ++k) {
        const auto& br = branches[k];
        const std::string tag = "branch " + std::to_string(br.from) + "-" + std::to_string(br.to);
        if (bus_index(br.from) < 0 || bus_index(br.to) < 0) {
            throw ValidationError(tag + ": endpoint bus does not exist");
        }
        if (br.from == br.to) throw ValidationError(tag + ": endpoints must differ");
        if (br.x == 0.0) throw ValidationError(tag + ": reactance must be nonzero");
        if (br.rating <= 0.0) throw ValidationError(tag + ": rating must be positive");
    }
    for (const auto& g : generators) {
        const std::string tag = "generator at bus " + std::to_string(g.bus);
        const int bi = bus_index(g.bus);
        if (bi < 0) throw ValidationError(tag + ": bus does not exist");
        if (buses[bi].kind == BusKind::PQ) {
            throw ValidationError(tag + ": generator bus must be PV or slack");
        }
        if (g.h <= 0.0) throw ValidationError(tag + ": inertia must be positive");
        if (g.xdp <= 0.0) throw ValidationError(tag + ": transient reactance must be positive");
        if (g.q_min > g.q_max) throw ValidationError(tag + ": q_min exceeds q_max");
    }
    for (const auto& [bus_id, spec] : load_models) {
        (void)spec;
        if (bus_index(bus_id) < 0) {
            throw ValidationError("load model at unknown bus " + std::to_string(bus_id));
        }
    }
    if (!connected()) throw ValidationError("in-service network is not connected");
}

NetworkCase parse_case(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text, nullptr, true, true);  // allow comments in case files
    } catch (const json::exception& e) {
        throw ParseError("case file " + origin + ": " + e.what());
    }

    NetworkCase net;
    try {
        const auto& sys = j.at("system");
        net.system_mva_base = sys.value("mva_base", 100.0);
        net.f_hz = sys.value("f_hz", 60.0);
        net.name = sys.value("name", origin);
        const std::string units = sys.value("units", "physical");
        if (units != "pu" && units != "physical") {
            throw ParseError("system.units must be 'pu' or 'physical'");
        }
        // power quantities in physical files are MW/MVAr on no particular base
        const double p_scale = (units == "physical") ? 1.0 / net.system_mva_base : 1.0;

        for (const auto& jb : j.at("buses")) {
            Bus b;
            b.id = jb.at("id").get<int>();
            const std::string kind = jb.value("kind", "PQ");
            if (kind == "Slack") b.kind = BusKind::Slack;
            else if (kind == "PV") b.kind = BusKind::PV;
            else if (kind == "PQ") b.kind = BusKind::PQ;
            else throw ParseError("bus " + std::to_string(b.id) + ": unknown kind " + kind);
            b.v_mag = jb.value("v_mag", 1.0);
            b.v_ang = jb.value("v_ang", 0.0);
            b.p_load = jb.value("p_load", 0.0) * p_scale;
            b.q_load = jb.value("q_load", 0.0) * p_scale;
            b.shunt_b = jb.value("shunt_b", 0.0);
            b.area = jb.value("area", 1);
            net.buses.push_back(b);
        }
        for (const auto& jb : j.at("branches")) {
            Branch br;
            br.from = jb.at("from").get<int>();
            br.to = jb.at("to").get<int>();
            br.r = jb.value("r", 0.0);
            br.x = jb.at("x").get<double>();
            br.b_charging = jb.value("b_charging", 0.0);
            br.rating = jb.value("rating", 1e9 * p_scale) * p_scale;
            br.tap = jb.value("tap", 1.0);
            br.in_service = jb.value("in_service", true);
            net.branches.push_back(br);
        }
        for (const auto& jg : j.at("generators")) {
            Generator g;
            g.bus = jg.at("bus").get<int>();
            g.p_set = jg.value("p_set", 0.0) * p_scale;
            g.v_set = jg.value("v_set", 1.0);
            g.q_min = jg.value("q_min", -1e9) * p_scale;
            g.q_max = jg.value("q_max", 1e9) * p_scale;
            g.p_max = jg.value("p_max", 1e9) * p_scale;
            g.mva_base = jg.value("mva_base", net.system_mva_base);
            g.h = jg.value("h", 3.0);
            g.xdp = jg.value("xdp", 0.2);
            g.d = jg.value("d", 0.0);
            net.generators.push_back(g);
        }
        if (j.contains("load_models")) {
            for (const auto& [key, val] : j.at("load_models").items()) {
                const int bus_id = std::stoi(key);
                net.load_models.emplace(
                    bus_id, LoadModelSpec::from_json_text(val.dump(), origin + "#" + key));
            }
        }
    } catch (const json::exception& e) {
        throw ParseError("case file " + origin + ": " + e.what());
    }

    net.validate();
    return net;
}

NetworkCase load_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open case file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_case(ss.str(), path);
}

std::vector<std::vector<Complex>> build_ybus(const NetworkCase& net) {
    const std::size_t n = net.buses.size();
    std::vector<std::vector<Complex>> y(n, std::vector<Complex>(n, Complex{0.0, 0.0}));

    for (const auto& br : net.branches) {
        if (!br.in_service) continue;
        const std::size_t f = static_cast<std::size_t>(net.bus_index(br.from));
        const std::size_t t = static_cast<std::size_t>(net.bus_index(br.to));
        const Complex ys = 1.0 / Complex{br.r, br.x};
        const Complex ysh{0.0, br.b_charging / 2.0};
        const double a = br.tap;
        y[f][f] += (ys + ysh) / (a * a);
        y[t][t] += ys + ysh;
        y[f][t] -= ys / a;
        y[t][f] -= ys / a;
    }
    for (std::size_t i = 0; i < n; ++i) {
        y[i][i] += Complex{0.0, net.buses[i].shunt_b};
    }
    return y;
}

NetworkCase apply_contingency(const NetworkCase& net, int branch_index) {
    if (branch_index < 0 || branch_index >= static_cast<int>(net.branches.size())) {
        throw ValidationError("contingency branch index out of range");
    }
    if (!net.branches[branch_index].in_service) {
        throw ValidationError("contingency branch already out of service");
    }
    if (!net.connected(branch_index)) {
        const auto& br = net.branches[branch_index];
        throw IslandingError("outage of branch " + std::to_string(br.from) + "-" +
                             std::to_string(br.to) + " islands the network");
    }
    NetworkCase out = net;
    out.branches[branch_index].in_service = false;
    return out;
}

}  // namespace tslim
