#pragma once

#include <string>
#include <vector>

namespace tslim {

// Recorded time series from a simulation run. All series share the `times`
// grid. Buses are monitored load/tie buses (v in pu, p/q in pu consumption on
// the system base); generators carry rotor angle (rad) and speed (pu).
//
// CSV layout, one row per sample:
//   t,<bus>:v,<bus>:p,<bus>:q,...,<gen>:delta,<gen>:omega,...
struct Trajectory {
    std::vector<double> times;

    std::vector<int> bus_ids;
    std::vector<std::vector<double>> bus_v;  // [bus index][sample]
    std::vector<std::vector<double>> bus_p;
    std::vector<std::vector<double>> bus_q;

    std::vector<int> gen_ids;  // generator label = its bus id
    std::vector<std::vector<double>> gen_delta;
    std::vector<std::vector<double>> gen_omega;

    std::size_t n_samples() const { return times.size(); }

    int bus_index(int bus_id) const;

    void write_csv(const std::string& path) const;
    static Trajectory read_csv(const std::string& path);
};

// Canonical floating-point formatting for every CSV/JSON artifact the project
// emits; fixed formatting is what makes identical reruns byte-identical.
std::string format_double(double v);

}  // namespace tslim
