#pragma once

// Grid reference computations for tests, built on the dense tableau solver
// and dense linear algebra only.

#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "drccots/case_model.hpp"
#include "oracles.hpp"

namespace oracle {

using drccots::bus_data;
using drccots::BusData;
using drccots::GridCase;
using drccots::is_connected;
using drccots::NetworkOperators;

// Cheapest dispatch for one topology through the dense tableau solver.
// Variables are shifted to start at zero: g - gmin, theta - theta_min, f + fmax.
inline double dcopf_oracle(const GridCase& g, const NetworkOperators& ops, const std::vector<int>& z) {
    BusData d = bus_data(g);
    const int N = g.num_buses(), L = g.num_lines(), s = g.slack_index();
    std::vector<int> gi(N, -1), ti(N, -1), fi(L);
    int n = 0;
    for (int b = 0; b < N; ++b) {
        if (d.has_generator[b]) gi[b] = n++;
    }
    for (int b = 0; b < N; ++b) {
        if (b != s) ti[b] = n++;
    }
    for (int l = 0; l < L; ++l) fi[l] = n++;
    DenseLp lp;
    lp.c.assign(n, 0.0);
    lp.upper.assign(n, 0.0);
    for (int b = 0; b < N; ++b) {
        if (gi[b] >= 0) {
            lp.c[gi[b]] = d.cost[b] * g.base_mva;
            lp.upper[gi[b]] = d.gmax[b] - d.gmin[b];
        }
        if (ti[b] >= 0) lp.upper[ti[b]] = d.theta_max[b] - d.theta_min[b];
    }
    for (int l = 0; l < L; ++l) {
        lp.upper[fi[l]] = 2.0 * d.flow_max[l];
        if (z[l]) continue;
        // Open line carries no flow.
        std::vector<double> row(n, 0.0);
        row[fi[l]] = 1.0;
        lp.Aeq.push_back(row);
        lp.beq.push_back(d.flow_max[l]);
    }
    // Balance: g - sum_out f + sum_in f = load.
    for (int b = 0; b < N; ++b) {
        std::vector<double> row(n, 0.0);
        double rhs = d.load[b];
        if (gi[b] >= 0) {
            row[gi[b]] = 1.0;
            rhs -= d.gmin[b];
        }
        for (int l = 0; l < L; ++l) {
            int from = g.bus_index(g.lines[l].from), to = g.bus_index(g.lines[l].to);
            double sgn = from == b ? -1.0 : (to == b ? 1.0 : 0.0);
            if (sgn == 0.0) continue;
            row[fi[l]] += sgn;
            rhs -= sgn * -d.flow_max[l];
        }
        lp.Aeq.push_back(row);
        lp.beq.push_back(rhs);
    }
    // b (theta_from - theta_to) - f, equal to zero on closed lines and within M on open ones.
    for (int l = 0; l < L; ++l) {
        int from = g.bus_index(g.lines[l].from), to = g.bus_index(g.lines[l].to);
        double bl = g.lines[l].susceptance;
        std::vector<double> row(n, 0.0);
        double shift = 0.0;
        if (ti[from] >= 0) {
            row[ti[from]] += bl;
            shift += bl * d.theta_min[from];
        }
        if (ti[to] >= 0) {
            row[ti[to]] -= bl;
            shift -= bl * d.theta_min[to];
        }
        row[fi[l]] -= 1.0;
        shift += d.flow_max[l];
        if (z[l]) {
            lp.Aeq.push_back(row);
            lp.beq.push_back(-shift);
        } else {
            lp.Aub.push_back(row);
            lp.bub.push_back(ops.M[l] - shift);
            for (double& v : row) v = -v;
            lp.Aub.push_back(row);
            lp.bub.push_back(ops.M[l] + shift);
        }
    }
    auto r = solve_dense(lp);
    if (!r.feasible) return std::numeric_limits<double>::infinity();
    double obj = r.objective;
    for (int b = 0; b < N; ++b) {
        if (gi[b] >= 0) obj += d.cost[b] * g.base_mva * d.gmin[b];
    }
    return obj;
}

inline double brute_force_ots(const GridCase& g, const NetworkOperators& ops, int lines_out) {
    const int L = g.num_lines();
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> z(L, 1);
    // Open sets enumerated as increasing index tuples.
    std::function<void(int, int)> rec = [&](int start, int left) {
        std::vector<bool> closed(z.begin(), z.end());
        if (is_connected(g, closed)) best = std::min(best, dcopf_oracle(g, ops, z));
        if (left == 0) return;
        for (int l = start; l < L; ++l) {
            if (!g.lines[l].switchable) continue;
            z[l] = 0;
            rec(l + 1, left - 1);
            z[l] = 1;
        }
    };
    rec(0, lines_out);
    return best;
}

// Dense dc solve through the pseudo-inverse of the full Laplacian.
inline Eigen::VectorXd dense_dc(const GridCase& grid, const std::vector<int>& z, const Eigen::VectorXd& p) {
    const int N = grid.num_buses();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(N, N);
    for (int l = 0; l < grid.num_lines(); ++l) {
        if (!z[l]) continue;
        int i = grid.bus_index(grid.lines[l].from), j = grid.bus_index(grid.lines[l].to);
        double b = grid.lines[l].susceptance;
        B(i, i) += b;
        B(j, j) += b;
        B(i, j) -= b;
        B(j, i) -= b;
    }
    Eigen::VectorXd th = B.completeOrthogonalDecomposition().pseudoInverse() * p;
    th.array() -= th[grid.slack_index()];
    return th;
}

}  // namespace oracle
