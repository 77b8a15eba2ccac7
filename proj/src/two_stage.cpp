#include "drccots/two_stage.hpp"

#include <cmath>

#include "drccots/errors.hpp"

namespace drccots {

const char* row_kind_name(RowKind kind) {
    switch (kind) {
        case RowKind::ReserveUpper: return "reserve_upper";
        case RowKind::ReserveLower: return "reserve_lower";
        case RowKind::GenUpper: return "gen_upper";
        case RowKind::GenLower: return "gen_lower";
        case RowKind::AngleUpper: return "angle_upper";
        case RowKind::AngleLower: return "angle_lower";
        case RowKind::FlowUpper: return "flow_upper";
        case RowKind::FlowLower: return "flow_lower";
    }
    return "unknown";
}

std::string CcRow::label() const { return std::string(row_kind_name(kind)) + "[" + std::to_string(index) + "]"; }

namespace {

std::string idx(const char* base, int i) { return std::string(base) + "_" + std::to_string(i); }

std::string idx(const char* base, int i, int k) {
    return std::string(base) + "_" + std::to_string(i) + "_" + std::to_string(k);
}

}  // namespace

DecisionLayout add_first_stage(MilpModel& model, const GridCase& grid, const NetworkOperators& ops, int K,
                               int lines_out) {
    const BusData d = bus_data(grid);
    DecisionLayout lay;
    lay.N = grid.num_buses();
    lay.L = grid.num_lines();
    lay.K = K;
    const int slack = grid.slack_index();
    const double base = grid.base_mva;

    for (int n = 0; n < lay.N; ++n) {
        lay.g.push_back(model.add_var(idx("g", n), VarKind::Continuous, d.gmin[n], d.gmax[n], d.cost[n] * base));
    }
    for (int n = 0; n < lay.N; ++n) {
        double lo = n == slack ? 0.0 : d.theta_min[n];
        double hi = n == slack ? 0.0 : d.theta_max[n];
        lay.theta.push_back(model.add_var(idx("theta", n), VarKind::Continuous, lo, hi));
    }
    for (int l = 0; l < lay.L; ++l) {
        lay.f.push_back(model.add_var(idx("f", l), VarKind::Continuous, -d.flow_max[l], d.flow_max[l]));
    }
    for (int l = 0; l < lay.L; ++l) {
        bool fixed = !grid.lines[l].switchable || lines_out == 0;
        lay.z.push_back(model.add_var(idx("z", l), VarKind::Binary, fixed ? 1.0 : 0.0, 1.0));
    }
    if (K > 0) {
        for (int n = 0; n < lay.N; ++n) {
            lay.gamma.push_back(
                model.add_var(idx("gamma", n), VarKind::Continuous, 0.0, d.has_generator[n] ? 1.0 : 0.0));
        }
        double yb = 0.0;
        for (const auto& line : grid.lines) yb += 1.0 / line.susceptance;
        lay.y_theta_bound = yb;
        lay.y_theta.assign(lay.N, {});
        for (int n = 0; n < lay.N; ++n) {
            double b = n == slack ? 0.0 : yb;
            for (int k = 0; k < K; ++k) lay.y_theta[n].push_back(model.add_var(idx("Yt", n, k), VarKind::Continuous, -b, b));
        }
        lay.y_f.assign(lay.L, {});
        for (int l = 0; l < lay.L; ++l) {
            for (int k = 0; k < K; ++k) lay.y_f[l].push_back(model.add_var(idx("Yf", l, k), VarKind::Continuous, -1.0, 1.0));
        }
    }

    // Nodal balance A f - g = -d.
    std::vector<Affine> balance(lay.N);
    for (int l = 0; l < lay.L; ++l) {
        for (SparseMatrix::InnerIterator it(ops.A, l); it; ++it) balance[it.row()].add(lay.f[l], it.value());
    }
    for (int n = 0; n < lay.N; ++n) {
        balance[n].add(lay.g[n], -1.0);
        model.add_con(idx("bal", n), balance[n], Sense::Eq, -d.load[n]);
    }

    for (int l = 0; l < lay.L; ++l) {
        Affine kth;
        for (int n = 0; n < lay.N; ++n) {
            double v = ops.K.coeff(l, n);
            if (v != 0.0) kth.add(lay.theta[n], v);
        }
        bool switchable = model.vars[lay.z[l]].lb < 1.0;
        if (!switchable) {
            Affine e = kth;
            e.add(lay.f[l], -1.0);
            model.add_con(idx("ohm", l), e, Sense::Eq, 0.0);
            continue;
        }
        const double M = ops.M[l];
        Affine lo = kth;
        lo.add(lay.f[l], -1.0).add(lay.z[l], -M);
        model.add_con(idx("ohm_lo", l), lo, Sense::Ge, -M);
        Affine hi = kth;
        hi.add(lay.f[l], -1.0).add(lay.z[l], M);
        model.add_con(idx("ohm_hi", l), hi, Sense::Le, M);
        model.add_con(idx("fcap_hi", l), {{lay.f[l], 1.0}, {lay.z[l], -d.flow_max[l]}}, Sense::Le, 0.0);
        model.add_con(idx("fcap_lo", l), {{lay.f[l], 1.0}, {lay.z[l], d.flow_max[l]}}, Sense::Ge, 0.0);
        for (int k = 0; k < K; ++k) {
            model.add_con(idx("yz_hi", l, k), {{lay.y_f[l][k], 1.0}, {lay.z[l], -1.0}}, Sense::Le, 0.0);
            model.add_con(idx("yz_lo", l, k), {{lay.y_f[l][k], 1.0}, {lay.z[l], 1.0}}, Sense::Ge, 0.0);
        }
    }
    if (lines_out > 0) {
        std::vector<Term> terms;
        for (int l = 0; l < lay.L; ++l) terms.push_back({lay.z[l], 1.0});
        model.add_con("budget", terms, Sense::Ge, static_cast<double>(lay.L - lines_out));
    }
    if (K > 0) {
        std::vector<Term> terms;
        for (int n = 0; n < lay.N; ++n) {
            if (d.has_generator[n]) terms.push_back({lay.gamma[n], 1.0});
        }
        model.add_con("gamma_sum", terms, Sense::Eq, 1.0);
    }
    return lay;
}

std::vector<CcRow> cc_row_set(const GridCase& grid, const DecisionLayout& lay) {
    const BusData d = bus_data(grid);
    std::vector<CcRow> rows;
    auto make = [&](RowKind kind, int index) -> CcRow& {
        CcRow r;
        r.kind = kind;
        r.index = index;
        r.a.assign(lay.K, Affine());
        rows.push_back(std::move(r));
        return rows.back();
    };
    const bool has_gamma = lay.K > 0;
    for (int n = 0; n < lay.N; ++n) {
        auto& up = make(RowKind::ReserveUpper, n);
        for (int k = 0; k < lay.K && has_gamma; ++k) up.a[k].add(lay.gamma[n], 1.0);
        up.b = Affine(d.rmax[n]);
        auto& lo = make(RowKind::ReserveLower, n);
        for (int k = 0; k < lay.K && has_gamma; ++k) lo.a[k].add(lay.gamma[n], -1.0);
        lo.b = Affine(-d.rmin[n]);
    }
    for (int n = 0; n < lay.N; ++n) {
        auto& up = make(RowKind::GenUpper, n);
        for (int k = 0; k < lay.K && has_gamma; ++k) up.a[k].add(lay.gamma[n], 1.0);
        up.b = Affine(d.gmax[n]);
        up.b.add(lay.g[n], -1.0);
        auto& lo = make(RowKind::GenLower, n);
        for (int k = 0; k < lay.K && has_gamma; ++k) lo.a[k].add(lay.gamma[n], -1.0);
        lo.b = Affine(-d.gmin[n]);
        lo.b.add(lay.g[n], 1.0);
    }
    for (int n = 0; n < lay.N; ++n) {
        auto& up = make(RowKind::AngleUpper, n);
        for (int k = 0; k < lay.K; ++k) up.a[k].add(lay.y_theta[n][k], 1.0);
        up.b = Affine(d.theta_max[n]);
        up.b.add(lay.theta[n], -1.0);
        auto& lo = make(RowKind::AngleLower, n);
        for (int k = 0; k < lay.K; ++k) lo.a[k].add(lay.y_theta[n][k], -1.0);
        lo.b = Affine(-d.theta_min[n]);
        lo.b.add(lay.theta[n], 1.0);
    }
    for (int l = 0; l < lay.L; ++l) {
        auto& up = make(RowKind::FlowUpper, l);
        for (int k = 0; k < lay.K; ++k) up.a[k].add(lay.y_f[l][k], 1.0);
        up.b = Affine();
        up.b.add(lay.z[l], d.flow_max[l]).add(lay.f[l], -1.0);
        auto& lo = make(RowKind::FlowLower, l);
        for (int k = 0; k < lay.K; ++k) lo.a[k].add(lay.y_f[l][k], -1.0);
        lo.b = Affine();
        lo.b.add(lay.z[l], d.flow_max[l]).add(lay.f[l], 1.0);
    }
    return rows;
}

void balance_equality_block(MilpModel& model, const NetworkOperators& ops, const DecisionLayout& lay,
                            const Eigen::MatrixXd& F) {
    if (F.rows() != lay.N || F.cols() != lay.K) fail(ErrorKind::DimensionMismatch, "placement matrix shape");
    for (int n = 0; n < lay.N; ++n) {
        for (int k = 0; k < lay.K; ++k) {
            std::vector<Term> terms;
            for (int l = 0; l < lay.L; ++l) {
                double a = ops.A.coeff(n, l);
                if (a != 0.0) terms.push_back({lay.y_f[l][k], a});
            }
            terms.push_back({lay.gamma[n], -1.0});
            model.add_con(idx("ybal", n, k), terms, Sense::Eq, -F(n, k));
        }
    }
}

FlowDualBlock flow_dual_blocks(MilpModel& model, const GridCase& grid, const NetworkOperators& ops,
                               const DecisionLayout& lay, const Polytope& support) {
    if (support.dim() != lay.K) fail(ErrorKind::DimensionMismatch, "support dimension differs from source count");
    const int W = support.rows();
    const bool box = support.is_box();
    FlowDualBlock blk;
    blk.phi1.assign(lay.L, {});
    blk.phi2.assign(lay.L, {});
    for (int l = 0; l < lay.L; ++l) {
        double bound = 1.0 + 2.0 * grid.lines[l].susceptance * lay.y_theta_bound;
        if (!box) bound = 1e6;
        for (int w = 0; w < W; ++w) {
            blk.phi1[l].push_back(model.add_var(idx("phi1", l, w), VarKind::Continuous, 0.0, bound));
            blk.phi2[l].push_back(model.add_var(idx("phi2", l, w), VarKind::Continuous, 0.0, bound));
        }
        Affine kth;
        for (int n = 0; n < lay.N; ++n) {
            double v = ops.K.coeff(l, n);
            if (v != 0.0) kth.add(lay.theta[n], v);
        }
        const double M = ops.M[l];
        for (int side = 0; side < 2; ++side) {
            const auto& phi = side == 0 ? blk.phi1[l] : blk.phi2[l];
            const double sgn = side == 0 ? 1.0 : -1.0;
            for (int k = 0; k < lay.K; ++k) {
                Affine e;
                e.add(lay.y_f[l][k], 1.0);
                for (int n = 0; n < lay.N; ++n) {
                    double v = ops.K.coeff(l, n);
                    if (v != 0.0) e.add(lay.y_theta[n][k], -v);
                }
                for (int w = 0; w < W; ++w) {
                    if (support.U(w, k) != 0.0) e.add(phi[w], -sgn * support.U(w, k));
                }
                model.add_con(idx(side == 0 ? "rob1" : "rob2", l, k), e, Sense::Eq, 0.0);
            }
            // side 0: K theta - f - M z - Phi1 t >= -M ; side 1: f - K theta - M z - Phi2 t >= -M
            Affine r;
            r.add(kth, sgn);
            r.add(lay.f[l], -sgn);
            r.add(lay.z[l], -M);
            for (int w = 0; w < W; ++w) {
                if (support.t[w] != 0.0) r.add(phi[w], -support.t[w]);
            }
            model.add_con(idx(side == 0 ? "robc1" : "robc2", l), r, Sense::Ge, -M);
        }
    }
    return blk;
}

namespace {

Eigen::MatrixXd reduced_laplacian(const GridCase& grid, const NetworkOperators& ops, const std::vector<int>& z) {
    const int N = grid.num_buses();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(N, N);
    for (int l = 0; l < grid.num_lines(); ++l) {
        if (!z[l]) continue;
        int i = grid.bus_index(grid.lines[l].from);
        int j = grid.bus_index(grid.lines[l].to);
        double b = grid.lines[l].susceptance;
        B(i, i) += b;
        B(j, j) += b;
        B(i, j) -= b;
        B(j, i) -= b;
    }
    (void)ops;
    return B;
}

void check_topology(const GridCase& grid, const std::vector<int>& z) {
    if (static_cast<int>(z.size()) != grid.num_lines()) fail(ErrorKind::DimensionMismatch, "status vector length");
    std::vector<bool> closed(z.begin(), z.end());
    if (!is_connected(grid, closed)) fail(ErrorKind::IslandedTopology, "line statuses split the network");
}

// Solves B theta = P with the slack angle at zero.
Eigen::MatrixXd solve_angles(const GridCase& grid, const Eigen::MatrixXd& B, const Eigen::MatrixXd& P) {
    const int N = grid.num_buses();
    const int s = grid.slack_index();
    std::vector<int> keep;
    for (int n = 0; n < N; ++n) {
        if (n != s) keep.push_back(n);
    }
    const int r = N - 1;
    Eigen::MatrixXd Br(r, r), Pr(r, P.cols());
    for (int a = 0; a < r; ++a) {
        Pr.row(a) = P.row(keep[a]);
        for (int b = 0; b < r; ++b) Br(a, b) = B(keep[a], keep[b]);
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, P.cols());
    if (r == 0) return out;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Br);
    Eigen::MatrixXd th = lu.solve(Pr);
    if (!th.allFinite()) fail(ErrorKind::NumericalBreakdown, "angle solve produced non-finite values");
    for (int a = 0; a < r; ++a) out.row(keep[a]) = th.row(a);
    return out;
}

}  // namespace

Eigen::VectorXd dc_angles(const GridCase& grid, const NetworkOperators& ops, const std::vector<int>& z,
                          const Eigen::VectorXd& injection) {
    check_topology(grid, z);
    return solve_angles(grid, reduced_laplacian(grid, ops, z), injection);
}

RecourseMaps recourse_matrices(const GridCase& grid, const NetworkOperators& ops, const std::vector<int>& z,
                               const Eigen::VectorXd& gamma, const Eigen::MatrixXd& F) {
    check_topology(grid, z);
    const int K = static_cast<int>(F.cols());
    Eigen::MatrixXd P = gamma * Eigen::RowVectorXd::Ones(K) - F;
    RecourseMaps out;
    out.Y_theta = solve_angles(grid, reduced_laplacian(grid, ops, z), P);
    Eigen::MatrixXd Kd = Eigen::MatrixXd(ops.K);
    for (int l = 0; l < grid.num_lines(); ++l) {
        if (!z[l]) Kd.row(l).setZero();
    }
    out.Y_f = Kd * out.Y_theta;
    return out;
}

FirstStage read_first_stage(const DecisionLayout& lay, const std::vector<double>& x) {
    FirstStage s;
    s.g.resize(lay.N);
    s.theta.resize(lay.N);
    s.f.resize(lay.L);
    s.gamma = Eigen::VectorXd::Zero(lay.N);
    for (int n = 0; n < lay.N; ++n) {
        s.g[n] = x[lay.g[n]];
        s.theta[n] = x[lay.theta[n]];
        if (!lay.gamma.empty()) s.gamma[n] = x[lay.gamma[n]];
    }
    for (int l = 0; l < lay.L; ++l) {
        s.f[l] = x[lay.f[l]];
        s.z.push_back(x[lay.z[l]] > 0.5 ? 1 : 0);
    }
    return s;
}

RecourseMaps read_recourse(const DecisionLayout& lay, const std::vector<double>& x) {
    RecourseMaps m;
    m.Y_theta = Eigen::MatrixXd::Zero(lay.N, lay.K);
    m.Y_f = Eigen::MatrixXd::Zero(lay.L, lay.K);
    for (int k = 0; k < lay.K; ++k) {
        for (int n = 0; n < lay.N; ++n) m.Y_theta(n, k) = x[lay.y_theta[n][k]];
        for (int l = 0; l < lay.L; ++l) m.Y_f(l, k) = x[lay.y_f[l][k]];
    }
    return m;
}

}  // namespace drccots
