#pragma once

// Independent reference solvers used only by tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

struct DenseLp {
    // min c^T x  s.t.  Aeq x = beq, Aub x <= bub, 0 <= x <= upper (upper may be inf)
    std::vector<double> c;
    std::vector<std::vector<double>> Aeq, Aub;
    std::vector<double> beq, bub;
    std::vector<double> upper;
};

struct DenseLpResult {
    bool feasible = false;
    bool bounded = true;
    double objective = 0.0;
    std::vector<double> x;
};

// Two-phase tableau simplex with Dantzig pricing and Bland's rule once
// degenerate pivots accumulate.
inline DenseLpResult solve_dense(const DenseLp& lp) {
    const double inf = std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(lp.c.size());
    std::vector<std::vector<double>> rows;
    std::vector<double> rhs;
    std::vector<int> slack_of_row;
    int extra = 0;
    for (std::size_t i = 0; i < lp.Aeq.size(); ++i) {
        rows.push_back(lp.Aeq[i]);
        rhs.push_back(lp.beq[i]);
        slack_of_row.push_back(-1);
    }
    for (std::size_t i = 0; i < lp.Aub.size(); ++i) {
        rows.push_back(lp.Aub[i]);
        rhs.push_back(lp.bub[i]);
        slack_of_row.push_back(extra++);
    }
    for (int j = 0; j < n; ++j) {
        if (!lp.upper.empty() && lp.upper[j] < inf) {
            std::vector<double> r(n, 0.0);
            r[j] = 1.0;
            rows.push_back(r);
            rhs.push_back(lp.upper[j]);
            slack_of_row.push_back(extra++);
        }
    }
    const int m = static_cast<int>(rows.size());
    const int ns = n + extra;       // structurals + slacks
    const int nt = ns + m;          // + artificials
    std::vector<std::vector<double>> T(m + 1, std::vector<double>(nt + 1, 0.0));
    std::vector<int> basis(m);
    for (int i = 0; i < m; ++i) {
        double sgn = rhs[i] < 0 ? -1.0 : 1.0;
        for (int j = 0; j < n; ++j) T[i][j] = sgn * rows[i][j];
        if (slack_of_row[i] >= 0) T[i][n + slack_of_row[i]] = sgn;
        T[i][ns + i] = 1.0;
        T[i][nt] = sgn * rhs[i];
        basis[i] = ns + i;
    }
    auto pivot = [&](int r, int q) {
        double p = T[r][q];
        for (double& v : T[r]) v /= p;
        for (int i = 0; i <= m; ++i) {
            if (i == r || T[i][q] == 0.0) continue;
            double f = T[i][q];
            for (int j = 0; j <= nt; ++j) T[i][j] -= f * T[r][j];
        }
        basis[r] = q;
    };
    auto run = [&](const std::vector<double>& cost, int allowed) -> bool {
        // objective row: reduced costs
        for (int j = 0; j <= nt; ++j) T[m][j] = j < nt ? cost[j] : 0.0;
        for (int i = 0; i < m; ++i) {
            double cb = cost[basis[i]];
            if (cb == 0.0) continue;
            for (int j = 0; j <= nt; ++j) T[m][j] -= cb * T[i][j];
        }
        int degenerate = 0;
        for (int iter = 0; iter < 200000; ++iter) {
            bool bland = degenerate > 50;
            int q = -1;
            double best = -1e-10;
            for (int j = 0; j < allowed; ++j) {
                if (T[m][j] < best) {
                    q = j;
                    if (bland) break;
                    best = T[m][j];
                }
            }
            if (q < 0) return true;
            int r = -1;
            double ratio = inf;
            for (int i = 0; i < m; ++i) {
                if (T[i][q] > 1e-11) {
                    double v = T[i][nt] / T[i][q];
                    if (v < ratio - 1e-13 || (v <= ratio + 1e-13 && r >= 0 && basis[i] < basis[r])) {
                        ratio = v;
                        r = i;
                    }
                }
            }
            if (r < 0) return false;
            degenerate = ratio < 1e-12 ? degenerate + 1 : 0;
            pivot(r, q);
        }
        return true;
    };
    DenseLpResult res;
    std::vector<double> phase1(nt, 0.0);
    for (int i = 0; i < m; ++i) phase1[ns + i] = 1.0;
    run(phase1, nt);
    if (-T[m][nt] > 1e-8) return res;
    // drive artificials out of the basis where possible
    for (int i = 0; i < m; ++i) {
        if (basis[i] < ns) continue;
        for (int j = 0; j < ns; ++j) {
            if (std::abs(T[i][j]) > 1e-9) {
                pivot(i, j);
                break;
            }
        }
    }
    std::vector<double> phase2(nt, 0.0);
    for (int j = 0; j < n; ++j) phase2[j] = lp.c[j];
    for (int i = 0; i < m; ++i) {
        if (basis[i] >= ns) {
            // redundant row: keep artificial fixed at zero by pricing it out
            phase2[basis[i]] = 0.0;
        }
    }
    res.feasible = true;
    if (!run(phase2, ns)) {
        res.bounded = false;
        return res;
    }
    res.x.assign(n, 0.0);
    for (int i = 0; i < m; ++i) {
        if (basis[i] < n) res.x[basis[i]] = T[i][nt];
    }
    res.objective = 0.0;
    for (int j = 0; j < n; ++j) res.objective += lp.c[j] * res.x[j];
    return res;
}

// Worst-case P(a^T xi <= b) over distributions on the given atoms with mean
// mu and E|xi_k - mu_k| <= sigma_k. Atoms with a^T xi == b count as
// violations, which matches the infimum when b is itself an atom.
inline double worst_case_grid(const std::vector<std::vector<double>>& atoms, const std::vector<double>& a, double b,
                              const std::vector<double>& mu, const std::vector<double>& sigma) {
    const int n = static_cast<int>(atoms.size());
    const int K = static_cast<int>(mu.size());
    DenseLp lp;
    lp.c.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double v = 0.0;
        for (int k = 0; k < K; ++k) v += a[k] * atoms[i][k];
        if (v < b - 1e-12) lp.c[i] = 1.0;
    }
    lp.Aeq.push_back(std::vector<double>(n, 1.0));
    lp.beq.push_back(1.0);
    for (int k = 0; k < K; ++k) {
        std::vector<double> row(n);
        for (int i = 0; i < n; ++i) row[i] = atoms[i][k] - mu[k];
        lp.Aeq.push_back(row);
        lp.beq.push_back(0.0);
        std::vector<double> mad(n);
        for (int i = 0; i < n; ++i) mad[i] = std::abs(atoms[i][k] - mu[k]);
        lp.Aub.push_back(mad);
        lp.bub.push_back(sigma[k]);
    }
    DenseLpResult r = solve_dense(lp);
    return r.feasible ? r.objective : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace oracle
