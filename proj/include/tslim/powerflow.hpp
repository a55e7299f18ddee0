#pragma once

#include <string>
#include <vector>

#include "tslim/netcase.hpp"

namespace tslim {

struct PowerFlowOptions {
    double tol = 1e-6;       // pu on max |dP|,|dQ|
    int max_iter = 30;
    bool flat_start = true;  // otherwise seed from the case voltage profile
    bool enforce_q_limits = true;
};

struct PowerFlowSolution {
    std::vector<double> v_mag;  // per bus, case order
    std::vector<double> v_ang;  // rad
    std::vector<double> p_gen;  // per generator, pu system base
    std::vector<double> q_gen;
    bool converged = false;
    double max_mismatch = 0.0;
    int iterations = 0;
    std::string trace;  // one line per iteration

    Complex voltage(std::size_t bus_idx) const {
        return std::polar(v_mag[bus_idx], v_ang[bus_idx]);
    }
};

// Full Newton-Raphson on the polar mismatch equations with PV->PQ switching
// at generator Q limits (one switch pass per iteration). Throws NonConvergence
// with the iteration trace attached when the tolerance is not met.
PowerFlowSolution solve_powerflow(const NetworkCase& net, const PowerFlowOptions& opt = {});

// Same solver, but a failed solve returns converged=false instead of throwing.
PowerFlowSolution try_powerflow(const NetworkCase& net, const PowerFlowOptions& opt = {});

struct BranchFlow {
    int branch_index = 0;
    double p_from = 0.0, q_from = 0.0;  // pu into the branch at each end
    double p_to = 0.0, q_to = 0.0;
    double mva_max = 0.0;  // max apparent power over both ends, pu
};

std::vector<BranchFlow> branch_flows(const NetworkCase& net, const PowerFlowSolution& sol);

}  // namespace tslim
