#include "tslim/trajectory.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tslim/errors.hpp"

namespace tslim {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

int Trajectory::bus_index(int bus_id) const {
    for (std::size_t i = 0; i < bus_ids.size(); ++i) {
        if (bus_ids[i] == bus_id) return static_cast<int>(i);
    }
    return -1;
}

void Trajectory::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open trajectory file for writing: " + path);

    out << "t";
    for (int b : bus_ids) out << "," << b << ":v," << b << ":p," << b << ":q";
    for (int g : gen_ids) out << "," << g << ":delta," << g << ":omega";
    out << "\n";

    for (std::size_t k = 0; k < times.size(); ++k) {
        out << format_double(times[k]);
        for (std::size_t i = 0; i < bus_ids.size(); ++i) {
            out << "," << format_double(bus_v[i][k]) << "," << format_double(bus_p[i][k])
                << "," << format_double(bus_q[i][k]);
        }
        for (std::size_t i = 0; i < gen_ids.size(); ++i) {
            out << "," << format_double(gen_delta[i][k]) << ","
                << format_double(gen_omega[i][k]);
        }
        out << "\n";
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Trajectory Trajectory::read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open trajectory file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty trajectory file: " + path);
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "t") {
        throw ParseError("trajectory header must start with 't': " + path);
    }

    Trajectory traj;
    // column k (k >= 1) maps into one of the series; record (series kind, slot)
    struct ColRef {
        int kind;  // 0:v 1:p 2:q 3:delta 4:omega
        std::size_t slot;
    };
    std::vector<ColRef> cols;
    for (std::size_t k = 1; k < header.size(); ++k) {
        const std::string& h = header[k];
        const auto pos = h.find(':');
        if (pos == std::string::npos) throw ParseError("bad trajectory column: " + h);
        const int id = std::stoi(h.substr(0, pos));
        const std::string tag = h.substr(pos + 1);
        if (tag == "v" || tag == "p" || tag == "q") {
            int idx = traj.bus_index(id);
            if (idx < 0) {
                idx = static_cast<int>(traj.bus_ids.size());
                traj.bus_ids.push_back(id);
                traj.bus_v.emplace_back();
                traj.bus_p.emplace_back();
                traj.bus_q.emplace_back();
            }
            cols.push_back({tag == "v" ? 0 : tag == "p" ? 1 : 2,
                            static_cast<std::size_t>(idx)});
        } else if (tag == "delta" || tag == "omega") {
            std::size_t idx = traj.gen_ids.size();
            for (std::size_t i = 0; i < traj.gen_ids.size(); ++i) {
                if (traj.gen_ids[i] == id) idx = i;
            }
            if (idx == traj.gen_ids.size()) {
                traj.gen_ids.push_back(id);
                traj.gen_delta.emplace_back();
                traj.gen_omega.emplace_back();
            }
            cols.push_back({tag == "delta" ? 3 : 4, idx});
        } else {
            throw ParseError("unknown trajectory column tag: " + h);
        }
    }

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ParseError("trajectory row width mismatch in " + path);
        }
        traj.times.push_back(std::stod(cells[0]));
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const double v = std::stod(cells[k + 1]);
            switch (cols[k].kind) {
                case 0: traj.bus_v[cols[k].slot].push_back(v); break;
                case 1: traj.bus_p[cols[k].slot].push_back(v); break;
                case 2: traj.bus_q[cols[k].slot].push_back(v); break;
                case 3: traj.gen_delta[cols[k].slot].push_back(v); break;
                default: traj.gen_omega[cols[k].slot].push_back(v); break;
            }
        }
    }
    return traj;
}

}  // namespace tslim
