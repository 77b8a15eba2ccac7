#include "drccots/lp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "drccots/errors.hpp"

namespace drccots {

const char* lp_status_name(LpStatus status) {
    switch (status) {
        case LpStatus::Optimal: return "Optimal";
        case LpStatus::Infeasible: return "Infeasible";
        case LpStatus::Unbounded: return "Unbounded";
        case LpStatus::IterationLimit: return "IterationLimit";
    }
    return "Unknown";
}

namespace {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

double pow2_near(double v) { return std::exp2(std::round(std::log2(v))); }

// LU of the basis matrix plus product-form eta updates. Logical columns
// (-e_i) are eliminated up front so only the structural kernel, rows not
// covered by a basic logical, is factorized.
class BasisFactor {
public:
    // head[r] >= n denotes the logical of row head[r] - n.
    bool factorize(int m, int n, const std::vector<int>& head, const std::vector<int>& cstart,
                   const std::vector<int>& crow, const std::vector<double>& cval) {
        etas_.clear();
        m_ = m;
        n_ = n;
        cstart_ = &cstart;
        crow_ = &crow;
        cval_ = &cval;
        struct_pos_.clear();
        struct_col_.clear();
        slack_pos_.assign(m, -1);
        for (int r = 0; r < m; ++r) {
            if (head[r] >= n) {
                int i = head[r] - n;
                if (slack_pos_[i] >= 0) return false;
                slack_pos_[i] = r;
            } else {
                struct_pos_.push_back(r);
                struct_col_.push_back(head[r]);
            }
        }
        const int k = static_cast<int>(struct_pos_.size());
        kernel_row_.assign(m, -1);
        kernel_rows_.clear();
        for (int i = 0; i < m; ++i) {
            if (slack_pos_[i] < 0) {
                kernel_row_[i] = static_cast<int>(kernel_rows_.size());
                kernel_rows_.push_back(i);
            }
        }
        if (static_cast<int>(kernel_rows_.size()) != k) return false;
        if (k == 0) return true;
        std::vector<Eigen::Triplet<double>> trip;
        for (int c = 0; c < k; ++c) {
            int j = struct_col_[c];
            for (int t = cstart[j]; t < cstart[j + 1]; ++t) {
                int kr = kernel_row_[crow[t]];
                if (kr >= 0) trip.emplace_back(kr, c, cval[t]);
            }
        }
        SpMat K(k, k);
        K.setFromTriplets(trip.begin(), trip.end());
        K.makeCompressed();
        lu_.analyzePattern(K);
        lu_.factorize(K);
        if (lu_.info() != Eigen::Success) return false;
        Vec ones = Vec::Ones(k);
        Vec b = K * ones;
        Vec x = lu_.solve(b);
        if (lu_.info() != Eigen::Success || !x.allFinite()) return false;
        return (x - ones).lpNorm<Eigen::Infinity>() < 1e-6;
    }

    // v indexed by row on entry, by basis position on exit.
    void ftran(Vec& v) const {
        if (m_ == 0) return;
        const int k = static_cast<int>(struct_pos_.size());
        Vec out(m_);
        if (k > 0) {
            Vec rhs(k);
            for (int t = 0; t < k; ++t) rhs[t] = v[kernel_rows_[t]];
            Vec xs = lu_.solve(rhs);
            // Logical rows: sum_j a_ij x_j - x_s = v_i.
            Vec acc = Vec::Zero(m_);
            for (int c = 0; c < k; ++c) {
                double xc = xs[c];
                out[struct_pos_[c]] = xc;
                if (xc == 0.0) continue;
                int j = struct_col_[c];
                for (int t = (*cstart_)[j]; t < (*cstart_)[j + 1]; ++t) acc[(*crow_)[t]] += (*cval_)[t] * xc;
            }
            for (int i = 0; i < m_; ++i) {
                if (slack_pos_[i] >= 0) out[slack_pos_[i]] = acc[i] - v[i];
            }
        } else {
            for (int i = 0; i < m_; ++i) out[slack_pos_[i]] = -v[i];
        }
        v.swap(out);
        for (const auto& e : etas_) {
            double xr = v[e.r] / e.pivot;
            if (xr != 0.0) {
                for (std::size_t t = 0; t < e.idx.size(); ++t) v[e.idx[t]] -= e.val[t] * xr;
            }
            v[e.r] = xr;
        }
    }

    // v indexed by basis position on entry, by row on exit.
    void btran(Vec& v) {
        if (m_ == 0) return;
        for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
            double s = v[it->r];
            for (std::size_t t = 0; t < it->idx.size(); ++t) s -= it->val[t] * v[it->idx[t]];
            v[it->r] = s / it->pivot;
        }
        const int k = static_cast<int>(struct_pos_.size());
        Vec y(m_);
        for (int i = 0; i < m_; ++i) {
            if (slack_pos_[i] >= 0) y[i] = -v[slack_pos_[i]];
        }
        if (k > 0) {
            Vec rhs(k);
            for (int c = 0; c < k; ++c) {
                double s = v[struct_pos_[c]];
                int j = struct_col_[c];
                for (int t = (*cstart_)[j]; t < (*cstart_)[j + 1]; ++t) {
                    int i = (*crow_)[t];
                    if (slack_pos_[i] >= 0) s -= (*cval_)[t] * y[i];
                }
                rhs[c] = s;
            }
            Vec yk = lu_.transpose().solve(rhs);
            for (int t = 0; t < k; ++t) y[kernel_rows_[t]] = yk[t];
        }
        v.swap(y);
    }

    void push(int r, const Vec& alpha) {
        Eta e;
        e.r = r;
        e.pivot = alpha[r];
        for (int i = 0; i < alpha.size(); ++i) {
            if (i != r && alpha[i] != 0.0) {
                e.idx.push_back(i);
                e.val.push_back(alpha[i]);
            }
        }
        etas_.push_back(std::move(e));
    }

    int updates() const { return static_cast<int>(etas_.size()); }

private:
    struct Eta {
        int r = 0;
        double pivot = 1.0;
        std::vector<int> idx;
        std::vector<double> val;
    };
    mutable Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
    int m_ = 0;
    int n_ = 0;
    const std::vector<int>* cstart_ = nullptr;
    const std::vector<int>* crow_ = nullptr;
    const std::vector<double>* cval_ = nullptr;
    std::vector<int> struct_pos_, struct_col_, slack_pos_, kernel_row_, kernel_rows_;
    std::vector<Eta> etas_;
};

}  // namespace

struct LpEngine::Impl {
    LpOptions opt;
    int n = 0;
    int m = 0;

    // Original data.
    std::vector<std::vector<Term>> orig_rows;
    std::vector<double> row_lo, row_hi;  // original row bounds
    std::vector<double> orig_lb, orig_ub, orig_cost;
    double obj_offset = 0.0;

    // Scaling: x = C * xs, row activity s = as / R.
    std::vector<double> colscale, rowscale;
    double objscale = 1.0;

    // Scaled matrix in CSC and CSR.
    std::vector<int> cstart, crow;
    std::vector<double> cval;
    std::vector<int> rstart, rcol;
    std::vector<double> rval;
    bool matrix_dirty = true;

    // Scaled bounds and costs, structurals then logicals.
    std::vector<double> lb, ub, cost, cpert;
    std::vector<BasisStatus> status;
    std::vector<double> x;
    std::vector<int> head, pos;
    Vec d, y;
    std::vector<double> dse;
    BasisFactor factor;
    bool factor_valid = false;
    bool warm = false;
    long iterations = 0;

    int total() const { return n + m; }

    void rebuild_matrix() {
        std::vector<int> count(n, 0);
        for (int i = 0; i < m; ++i) {
            for (const auto& t : orig_rows[i]) ++count[t.var];
        }
        cstart.assign(n + 1, 0);
        for (int j = 0; j < n; ++j) cstart[j + 1] = cstart[j] + count[j];
        crow.assign(cstart[n], 0);
        cval.assign(cstart[n], 0.0);
        std::vector<int> fill(cstart.begin(), cstart.end() - 1);
        rstart.assign(m + 1, 0);
        rcol.clear();
        rval.clear();
        for (int i = 0; i < m; ++i) {
            for (const auto& t : orig_rows[i]) {
                double v = t.coef * rowscale[i] * colscale[t.var];
                crow[fill[t.var]] = i;
                cval[fill[t.var]++] = v;
                rcol.push_back(t.var);
                rval.push_back(v);
            }
            rstart[i + 1] = static_cast<int>(rcol.size());
        }
        matrix_dirty = false;
    }

    void compute_scaling() {
        colscale.assign(n, 1.0);
        rowscale.assign(m, 1.0);
        for (int pass = 0; pass < 6; ++pass) {
            for (int i = 0; i < m; ++i) {
                double lo = kInf, hi = 0.0;
                for (const auto& t : orig_rows[i]) {
                    double a = std::abs(t.coef) * colscale[t.var];
                    lo = std::min(lo, a);
                    hi = std::max(hi, a);
                }
                if (hi > 0.0) rowscale[i] = pow2_near(1.0 / std::sqrt(lo * hi));
            }
            std::vector<double> lo(n, kInf), hi(n, 0.0);
            for (int i = 0; i < m; ++i) {
                for (const auto& t : orig_rows[i]) {
                    double a = std::abs(t.coef) * rowscale[i];
                    lo[t.var] = std::min(lo[t.var], a);
                    hi[t.var] = std::max(hi[t.var], a);
                }
            }
            for (int j = 0; j < n; ++j) {
                if (hi[j] > 0.0) colscale[j] = pow2_near(1.0 / std::sqrt(lo[j] * hi[j]));
            }
        }
        for (int i = 0; i < m; ++i) equilibrate_row(i);
        double cmax = 0.0;
        for (int j = 0; j < n; ++j) cmax = std::max(cmax, std::abs(orig_cost[j] * colscale[j]));
        objscale = cmax > 0.0 ? pow2_near(1.0 / cmax) : 1.0;
    }

    void equilibrate_row(int i) {
        double hi = 0.0;
        for (const auto& t : orig_rows[i]) hi = std::max(hi, std::abs(t.coef) * colscale[t.var]);
        rowscale[i] = hi > 0.0 ? pow2_near(1.0 / hi) : 1.0;
    }

    void set_row_bounds(int i) {
        lb[n + i] = std::isfinite(row_lo[i]) ? row_lo[i] * rowscale[i] : -kInf;
        ub[n + i] = std::isfinite(row_hi[i]) ? row_hi[i] * rowscale[i] : kInf;
    }

    void set_col_bounds_scaled(int j) {
        lb[j] = orig_lb[j] / colscale[j];
        ub[j] = orig_ub[j] / colscale[j];
    }

    void load(const MilpModel& model) {
        model.validate();
        n = model.num_vars();
        m = model.num_cons();
        orig_rows.clear();
        row_lo.clear();
        row_hi.clear();
        for (const auto& c : model.cons) {
            orig_rows.push_back(c.terms);
            row_lo.push_back(c.sense == Sense::Le ? -kInf : c.rhs);
            row_hi.push_back(c.sense == Sense::Ge ? kInf : c.rhs);
        }
        orig_lb.resize(n);
        orig_ub.resize(n);
        for (int j = 0; j < n; ++j) {
            orig_lb[j] = model.vars[j].lb;
            orig_ub[j] = model.vars[j].ub;
        }
        orig_cost = model.obj;
        obj_offset = model.obj_offset;
        compute_scaling();
        lb.assign(n + m, 0.0);
        ub.assign(n + m, 0.0);
        cost.assign(n + m, 0.0);
        for (int j = 0; j < n; ++j) {
            set_col_bounds_scaled(j);
            cost[j] = orig_cost[j] * colscale[j] * objscale;
        }
        for (int i = 0; i < m; ++i) set_row_bounds(i);
        matrix_dirty = true;
        slack_basis();
    }

    void slack_basis() {
        status.assign(n + m, BasisStatus::AtLower);
        head.assign(m, 0);
        pos.assign(n + m, -1);
        for (int i = 0; i < m; ++i) {
            status[n + i] = BasisStatus::Basic;
            head[i] = n + i;
            pos[n + i] = i;
        }
        for (int j = 0; j < n; ++j) status[j] = cost[j] >= 0.0 ? BasisStatus::AtLower : BasisStatus::AtUpper;
        dse.assign(m, 1.0);
        factor_valid = false;
        warm = false;
    }

    int add_row(const std::vector<Term>& terms, Sense sense, double rhs) {
        std::vector<Term> row = terms;
        std::sort(row.begin(), row.end(), [](const Term& a, const Term& b) { return a.var < b.var; });
        std::vector<Term> merged;
        for (const auto& t : row) {
            if (t.var < 0 || t.var >= n) fail(ErrorKind::InvalidArgument, "cut references unknown variable");
            if (!merged.empty() && merged.back().var == t.var) {
                merged.back().coef += t.coef;
            } else {
                merged.push_back(t);
            }
        }
        merged.erase(std::remove_if(merged.begin(), merged.end(), [](const Term& t) { return t.coef == 0.0; }),
                     merged.end());
        orig_rows.push_back(merged);
        row_lo.push_back(sense == Sense::Le ? -kInf : rhs);
        row_hi.push_back(sense == Sense::Ge ? kInf : rhs);
        rowscale.push_back(1.0);
        int i = m;
        ++m;
        equilibrate_row(i);
        lb.push_back(0.0);
        ub.push_back(0.0);
        cost.push_back(0.0);
        set_row_bounds(i);
        status.push_back(BasisStatus::Basic);
        pos.push_back(i);
        head.push_back(n + i);
        dse.push_back(1.0);
        matrix_dirty = true;
        factor_valid = false;
        return i;
    }

    void set_basis(const std::vector<BasisStatus>& basis) {
        std::vector<BasisStatus> b = basis;
        if (static_cast<int>(b.size()) > n + m) b.resize(n + m);
        while (static_cast<int>(b.size()) < n + m) b.push_back(BasisStatus::Basic);
        int basics = static_cast<int>(std::count(b.begin(), b.end(), BasisStatus::Basic));
        if (basics != m) {
            slack_basis();
            return;
        }
        status = b;
        warm = true;
        head.clear();
        pos.assign(n + m, -1);
        for (int j = 0; j < n + m; ++j) {
            if (status[j] == BasisStatus::Basic) {
                pos[j] = static_cast<int>(head.size());
                head.push_back(j);
            }
        }
        dse.assign(m, 1.0);
        factor_valid = false;
    }

    // Column j of [A -I], scaled.
    void add_column(int j, double scale, Vec& v) const {
        if (j < n) {
            for (int k = cstart[j]; k < cstart[j + 1]; ++k) v[crow[k]] += scale * cval[k];
        } else {
            v[j - n] -= scale;
        }
    }

    double column_dot(int j, const Vec& v) const {
        if (j < n) {
            double s = 0.0;
            for (int k = cstart[j]; k < cstart[j + 1]; ++k) s += cval[k] * v[crow[k]];
            return s;
        }
        return -v[j - n];
    }

    double nonbasic_value(int j) const {
        switch (status[j]) {
            case BasisStatus::AtUpper: return ub[j];
            case BasisStatus::AtLower:
            case BasisStatus::Fixed: return lb[j];
            default: return x[j];
        }
    }

    bool refactor() {
        if (matrix_dirty) rebuild_matrix();
        factor_valid = factor.factorize(m, n, head, cstart, crow, cval);
        return factor_valid;
    }

    // Refactorizes unless the current factor is fresh.
    bool refactor_if_updated() {
        if (factor_valid && factor.updates() == 0 && !matrix_dirty) return true;
        return refactor();
    }

    // Establishes a factorized basis, falling back to the slack basis.
    void ensure_factor() {
        if (factor_valid) return;
        if (!refactor()) {
            slack_basis();
            if (!refactor()) fail(ErrorKind::NumericalBreakdown, "slack basis factorization failed");
        }
    }

    void sanitize_status() {
        for (int j = 0; j < n + m; ++j) {
            if (status[j] == BasisStatus::Basic) continue;
            if (lb[j] == ub[j]) {
                status[j] = BasisStatus::Fixed;
            } else if (status[j] == BasisStatus::Fixed) {
                status[j] = std::isfinite(lb[j]) ? BasisStatus::AtLower : BasisStatus::AtUpper;
            } else if (status[j] == BasisStatus::AtLower && !std::isfinite(lb[j])) {
                status[j] = BasisStatus::AtUpper;
            } else if (status[j] == BasisStatus::AtUpper && !std::isfinite(ub[j])) {
                status[j] = BasisStatus::AtLower;
            }
        }
    }

    void compute_primal() {
        x.resize(n + m);
        Vec rhs = Vec::Zero(m);
        for (int j = 0; j < n + m; ++j) {
            if (status[j] == BasisStatus::Basic) continue;
            x[j] = nonbasic_value(j);
            if (x[j] != 0.0) add_column(j, -x[j], rhs);
        }
        factor.ftran(rhs);
        for (int r = 0; r < m; ++r) x[head[r]] = rhs[r];
    }

    void compute_duals() {
        y.resize(m);
        for (int r = 0; r < m; ++r) y[r] = cpert[head[r]];
        factor.btran(y);
        d.resize(n + m);
        for (int j = 0; j < n + m; ++j) {
            d[j] = status[j] == BasisStatus::Basic ? 0.0 : cpert[j] - column_dot(j, y);
        }
    }

    bool dual_infeasible(int j, double tol) const {
        switch (status[j]) {
            case BasisStatus::AtLower: return d[j] < -tol;
            case BasisStatus::AtUpper: return d[j] > tol;
            default: return false;
        }
    }

    // Flips boxed variables to the bound matching their reduced cost and
    // shifts costs of the others. Returns true if any primal value moved.
    bool make_dual_feasible() {
        bool moved = false;
        for (int j = 0; j < n + m; ++j) {
            if (status[j] == BasisStatus::Basic || status[j] == BasisStatus::Fixed) continue;
            if (!dual_infeasible(j, opt.dual_tol)) continue;
            bool boxed = std::isfinite(lb[j]) && std::isfinite(ub[j]);
            if (boxed) {
                status[j] = status[j] == BasisStatus::AtLower ? BasisStatus::AtUpper : BasisStatus::AtLower;
                moved = true;
            } else {
                cpert[j] -= d[j];
                d[j] = 0.0;
            }
        }
        return moved;
    }

    void perturb_costs() {
        std::mt19937_64 rng(0x5eed0000ULL + static_cast<unsigned>(n) * 131ULL + static_cast<unsigned>(m));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int j = 0; j < n; ++j) {
            if (lb[j] == ub[j]) continue;
            double mag = (1.0 + unit(rng)) * (5e-7 + 1e-7 * std::abs(cost[j]));
            if (status[j] == BasisStatus::AtUpper) {
                cpert[j] -= mag;
            } else if (status[j] == BasisStatus::AtLower) {
                cpert[j] += mag;
            } else {
                cpert[j] += unit(rng) < 0.5 ? mag : -mag;
            }
        }
    }

    double current_objective() const {
        double v = 0.0;
        for (int j = 0; j < n + m; ++j) v += cpert[j] * x[j];
        return v;
    }

    double primal_infeasibility(int j) const {
        if (x[j] < lb[j] - opt.primal_tol) return lb[j] - x[j];
        if (x[j] > ub[j] + opt.primal_tol) return x[j] - ub[j];
        return 0.0;
    }

    void refresh() {
        if (!refactor_if_updated()) {
            slack_basis();
            sanitize_status();
            if (!refactor()) fail(ErrorKind::NumericalBreakdown, "basis refactorization failed");
        }
        compute_duals();
        if (make_dual_feasible()) {}
        compute_primal();
    }

    enum class Phase { Done, Infeasible, Limit };

    Phase dual_phase() {
        refresh();
        double last_obj = current_objective();
        int stall = 0;
        bool bland = false;
        bool fresh = true;
        Vec rho(m), alpha_q(m), tau(m);
        std::vector<double> alpha_row(n + m, 0.0);
        std::vector<int> candidates;
        while (true) {
            if (iterations >= opt.max_iterations) return Phase::Limit;
            if (factor.updates() >= opt.refactor_interval) {
                refresh();
                fresh = true;
            }
            // Pricing.
            int r = -1;
            double best = 0.0;
            for (int i = 0; i < m; ++i) {
                double inf = primal_infeasibility(head[i]);
                if (inf <= 0.0) continue;
                if (bland) {
                    if (r < 0 || head[i] < head[r]) r = i;
                } else {
                    double score = inf * inf / dse[i];
                    if (score > best) {
                        best = score;
                        r = i;
                    }
                }
            }
            if (r < 0) return Phase::Done;
            const int p = head[r];
            const bool to_lower = x[p] < lb[p];
            const double target = to_lower ? lb[p] : ub[p];
            const double s = to_lower ? -1.0 : 1.0;

            rho.setZero();
            rho[r] = 1.0;
            factor.btran(rho);

            // Pivot row over nonbasic columns.
            candidates.clear();
            for (int i = 0; i < m; ++i) {
                double ri = rho[i];
                if (ri == 0.0) continue;
                for (int k = rstart[i]; k < rstart[i + 1]; ++k) alpha_row[rcol[k]] += ri * rval[k];
                alpha_row[n + i] -= ri;
            }
            int q = -1;
            double q_ratio = kInf;
            {
                double theta_max = kInf;
                for (int j = 0; j < n + m; ++j) {
                    double a = alpha_row[j];
                    if (a == 0.0) continue;
                    if (status[j] == BasisStatus::Basic || status[j] == BasisStatus::Fixed) continue;
                    double at = s * a;
                    bool eligible = (status[j] == BasisStatus::AtLower && at > opt.pivot_tol) ||
                                    (status[j] == BasisStatus::AtUpper && at < -opt.pivot_tol);
                    if (!eligible) continue;
                    candidates.push_back(j);
                    if (bland) {
                        double ratio = std::max(0.0, d[j] / at);
                        if (ratio < q_ratio - 1e-12 || (ratio <= q_ratio + 1e-12 && (q < 0 || j < q))) {
                            q_ratio = ratio;
                            q = j;
                        }
                    } else {
                        double slack = std::abs(d[j]) + opt.dual_tol;
                        theta_max = std::min(theta_max, slack / std::abs(at));
                    }
                }
                if (!bland && !candidates.empty()) {
                    double best_a = 0.0;
                    for (int j : candidates) {
                        double at = std::abs(alpha_row[j]);
                        double ratio = std::max(0.0, d[j] * s / alpha_row[j]);
                        if (ratio <= theta_max && at > best_a) {
                            best_a = at;
                            q = j;
                            q_ratio = ratio;
                        }
                    }
                }
            }
            if (q < 0) {
                std::fill(alpha_row.begin(), alpha_row.end(), 0.0);
                if (!fresh) {
                    refresh();
                    fresh = true;
                    continue;
                }
                return Phase::Infeasible;
            }

            alpha_q.setZero();
            add_column(q, 1.0, alpha_q);
            factor.ftran(alpha_q);
            double piv = alpha_q[r];
            double piv_row = alpha_row[q];
            if (std::abs(piv) < opt.pivot_tol ||
                std::abs(piv - piv_row) > 1e-7 * (1.0 + std::abs(piv))) {
                std::fill(alpha_row.begin(), alpha_row.end(), 0.0);
                if (!fresh) {
                    refresh();
                    fresh = true;
                    continue;
                }
                // Fresh factorization still inconsistent: accept the column value.
                if (std::abs(piv) < opt.pivot_tol) {
                    return Phase::Infeasible;
                }
            }

            // Dual update.
            double theta_d = d[q] / piv_row;
            if (s * theta_d < 0.0) {
                cpert[q] -= d[q];
                d[q] = 0.0;
                theta_d = 0.0;
            }
            if (theta_d != 0.0) {
                for (int j = 0; j < n + m; ++j) {
                    if (alpha_row[j] != 0.0 && status[j] != BasisStatus::Basic) d[j] -= theta_d * alpha_row[j];
                }
            }
            d[q] = 0.0;
            d[p] = -theta_d;

            // Primal update.
            double theta_p = (x[p] - target) / piv;
            for (int i = 0; i < m; ++i) {
                if (alpha_q[i] != 0.0) x[head[i]] -= theta_p * alpha_q[i];
            }
            x[q] += theta_p;
            x[p] = target;

            // Steepest-edge weights.
            double wr = rho.squaredNorm();
            tau = rho;
            factor.ftran(tau);
            for (int i = 0; i < m; ++i) {
                if (i == r || alpha_q[i] == 0.0) continue;
                double k = alpha_q[i] / piv;
                dse[i] = std::max(dse[i] - 2.0 * k * tau[i] + k * k * wr, 1e-6);
            }
            dse[r] = std::max(wr / (piv * piv), 1e-6);

            // Basis change.
            status[p] = lb[p] == ub[p] ? BasisStatus::Fixed : (to_lower ? BasisStatus::AtLower : BasisStatus::AtUpper);
            status[q] = BasisStatus::Basic;
            pos[p] = -1;
            pos[q] = r;
            head[r] = q;
            factor.push(r, alpha_q);
            fresh = false;
            ++iterations;
            std::fill(alpha_row.begin(), alpha_row.end(), 0.0);

            double obj = current_objective();
            if (obj > last_obj + 1e-12 * (1.0 + std::abs(last_obj))) {
                last_obj = obj;
                stall = 0;
                bland = false;
            } else if (++stall > 10 * std::max(m, 10)) {
                bland = true;
            }
        }
    }

    Phase primal_phase() {
        Vec alpha(m), rho(m);
        int stall = 0;
        double last_obj = current_objective();
        while (true) {
            if (iterations >= opt.max_iterations) return Phase::Limit;
            if (factor.updates() >= opt.refactor_interval) {
                if (!refactor()) return Phase::Infeasible;
                compute_primal();
            }
            compute_duals();
            bool bland = stall > 10 * std::max(m, 10);
            int q = -1;
            double best = 0.0;
            for (int j = 0; j < n + m; ++j) {
                if (!dual_infeasible(j, opt.dual_tol)) continue;
                if (bland) {
                    q = j;
                    break;
                }
                if (std::abs(d[j]) > best) {
                    best = std::abs(d[j]);
                    q = j;
                }
            }
            if (q < 0) return Phase::Done;
            const double dir = status[q] == BasisStatus::AtLower ? 1.0 : -1.0;
            alpha.setZero();
            add_column(q, 1.0, alpha);
            factor.ftran(alpha);
            double span = ub[q] - lb[q];
            double tmax = std::isfinite(span) ? span : kInf;
            for (int i = 0; i < m; ++i) {
                double a = dir * alpha[i];
                if (std::abs(a) <= opt.pivot_tol) continue;
                int j = head[i];
                if (a > 0.0 && std::isfinite(lb[j])) {
                    tmax = std::min(tmax, (x[j] - lb[j] + opt.primal_tol) / a);
                } else if (a < 0.0 && std::isfinite(ub[j])) {
                    tmax = std::min(tmax, (ub[j] - x[j] + opt.primal_tol) / -a);
                }
            }
            if (!std::isfinite(tmax)) return Phase::Infeasible;
            int r = -1;
            double t = std::isfinite(span) ? span : kInf;
            double best_a = 0.0;
            for (int i = 0; i < m; ++i) {
                double a = dir * alpha[i];
                if (std::abs(a) <= opt.pivot_tol) continue;
                int j = head[i];
                double ratio;
                if (a > 0.0 && std::isfinite(lb[j])) {
                    ratio = std::max(0.0, (x[j] - lb[j]) / a);
                } else if (a < 0.0 && std::isfinite(ub[j])) {
                    ratio = std::max(0.0, (ub[j] - x[j]) / -a);
                } else {
                    continue;
                }
                if (ratio <= tmax && std::abs(a) > best_a) {
                    best_a = std::abs(a);
                    r = i;
                    t = ratio;
                }
            }
            bool flip = r < 0 || (std::isfinite(span) && span <= t);
            if (flip) t = span;
            for (int i = 0; i < m; ++i) {
                if (alpha[i] != 0.0) x[head[i]] -= dir * t * alpha[i];
            }
            x[q] += dir * t;
            if (flip) {
                status[q] = status[q] == BasisStatus::AtLower ? BasisStatus::AtUpper : BasisStatus::AtLower;
                x[q] = nonbasic_value(q);
            } else {
                int p = head[r];
                double a = dir * alpha[r];
                bool to_lower = a > 0.0;
                x[p] = to_lower ? lb[p] : ub[p];
                status[p] = lb[p] == ub[p] ? BasisStatus::Fixed : (to_lower ? BasisStatus::AtLower : BasisStatus::AtUpper);
                status[q] = BasisStatus::Basic;
                pos[p] = -1;
                pos[q] = r;
                head[r] = q;
                factor.push(r, alpha);
                dse[r] = 1.0;
            }
            ++iterations;
            double obj = current_objective();
            if (obj < last_obj - 1e-12 * (1.0 + std::abs(last_obj))) {
                last_obj = obj;
                stall = 0;
            } else {
                ++stall;
            }
        }
    }

    LpResult solve() {
        LpResult res;
        if (matrix_dirty) rebuild_matrix();
        x.assign(n + m, 0.0);
        cpert = cost;
        sanitize_status();
        ensure_factor();
        compute_duals();
        make_dual_feasible();
        // Perturb only cold starts; warm re-solves after a bound change are short.
        bool perturbed = opt.perturb && !warm;
        if (perturbed) perturb_costs();
        iterations = 0;

        LpStatus status_out = LpStatus::Optimal;
        for (int round = 0; round < 6; ++round) {
            Phase ph = dual_phase();
            if (ph == Phase::Limit) {
                status_out = LpStatus::IterationLimit;
                break;
            }
            if (ph == Phase::Infeasible) {
                if (perturbed) {
                    // Confirm without perturbation before declaring infeasibility.
                    cpert = cost;
                    perturbed = false;
                    continue;
                }
                status_out = LpStatus::Infeasible;
                break;
            }
            cpert = cost;
            perturbed = false;
            if (!refactor_if_updated()) refresh();
            compute_primal();
            compute_duals();
            bool primal_ok = true;
            for (int r = 0; r < m; ++r) {
                if (primal_infeasibility(head[r]) > 0.0) primal_ok = false;
            }
            if (!primal_ok) continue;
            bool dual_ok = true;
            for (int j = 0; j < n + m; ++j) {
                if (dual_infeasible(j, opt.dual_tol)) dual_ok = false;
            }
            if (dual_ok) {
                status_out = LpStatus::Optimal;
                break;
            }
            Phase pp = primal_phase();
            if (pp == Phase::Limit) {
                status_out = LpStatus::IterationLimit;
                break;
            }
            if (!refactor_if_updated()) refresh();
            compute_primal();
            compute_duals();
            primal_ok = true;
            for (int r = 0; r < m; ++r) {
                if (primal_infeasibility(head[r]) > 0.0) primal_ok = false;
            }
            dual_ok = true;
            for (int j = 0; j < n + m; ++j) {
                if (dual_infeasible(j, opt.dual_tol)) dual_ok = false;
            }
            if (primal_ok && dual_ok) {
                status_out = LpStatus::Optimal;
                break;
            }
            if (round == 5) status_out = LpStatus::IterationLimit;
        }
        res.status = status_out;
        warm = status_out == LpStatus::Optimal;
        res.iterations = iterations;
        fill_result(res);
        return res;
    }

    void fill_result(LpResult& res) const {
        res.x.resize(n);
        for (int j = 0; j < n; ++j) {
            double v = x[j] * colscale[j];
            // Snap nonbasic values to their exact original bounds.
            if (status[j] == BasisStatus::AtLower || status[j] == BasisStatus::Fixed) v = orig_lb[j];
            if (status[j] == BasisStatus::AtUpper) v = orig_ub[j];
            res.x[j] = v;
        }
        res.row_activity.assign(m, 0.0);
        for (int i = 0; i < m; ++i) {
            double a = 0.0;
            for (const auto& t : orig_rows[i]) a += t.coef * res.x[t.var];
            res.row_activity[i] = a;
        }
        res.row_duals.assign(m, 0.0);
        if (static_cast<int>(y.size()) == m) {
            for (int i = 0; i < m; ++i) res.row_duals[i] = y[i] * rowscale[i] / objscale;
        }
        res.reduced_costs.assign(n, 0.0);
        for (int j = 0; j < n; ++j) {
            double dj = orig_cost[j];
            for (int k = cstart[j]; k < cstart[j + 1]; ++k) {
                int i = crow[k];
                dj -= cval[k] / (rowscale[i] * colscale[j]) * res.row_duals[i];
            }
            res.reduced_costs[j] = dj;
        }
        double obj = obj_offset;
        for (int j = 0; j < n; ++j) obj += orig_cost[j] * res.x[j];
        res.objective = obj;

        double pres = 0.0;
        for (int j = 0; j < n; ++j) pres = std::max({pres, orig_lb[j] - res.x[j], res.x[j] - orig_ub[j]});
        for (int i = 0; i < m; ++i) {
            double scale = rowscale[i];
            pres = std::max({pres, (row_lo[i] - res.row_activity[i]) * scale, (res.row_activity[i] - row_hi[i]) * scale});
        }
        res.primal_residual = std::max(0.0, pres);
        double dres = 0.0, comp = 0.0;
        for (int j = 0; j < n; ++j) {
            double dj = res.reduced_costs[j] * colscale[j] * objscale;
            switch (status[j]) {
                case BasisStatus::Basic: dres = std::max(dres, std::abs(dj)); break;
                case BasisStatus::AtLower: dres = std::max(dres, -dj); break;
                case BasisStatus::AtUpper: dres = std::max(dres, dj); break;
                default: break;
            }
            double gap = std::min(std::abs(res.x[j] - orig_lb[j]), std::abs(orig_ub[j] - res.x[j])) / colscale[j];
            comp = std::max(comp, std::abs(dj) * std::min(gap, 1.0));
        }
        res.dual_residual = std::max(0.0, dres);
        res.complementarity = comp;
        res.basis = status;
    }
};

LpEngine::LpEngine(const LpOptions& options) : impl_(std::make_unique<Impl>()) { impl_->opt = options; }
LpEngine::~LpEngine() = default;
LpEngine::LpEngine(LpEngine&&) noexcept = default;
LpEngine& LpEngine::operator=(LpEngine&&) noexcept = default;

void LpEngine::load(const MilpModel& model) { impl_->load(model); }
int LpEngine::num_cols() const { return impl_->n; }
int LpEngine::num_rows() const { return impl_->m; }

void LpEngine::set_col_bounds(int j, double lb, double ub) {
    if (lb > ub) fail(ErrorKind::InfeasibleBounds, "column bounds cross");
    impl_->orig_lb[j] = lb;
    impl_->orig_ub[j] = ub;
    impl_->set_col_bounds_scaled(j);
}

double LpEngine::col_lower(int j) const { return impl_->orig_lb[j]; }
double LpEngine::col_upper(int j) const { return impl_->orig_ub[j]; }

int LpEngine::add_row(const std::vector<Term>& terms, Sense sense, double rhs) {
    return impl_->add_row(terms, sense, rhs);
}

void LpEngine::set_basis(const std::vector<BasisStatus>& basis) { impl_->set_basis(basis); }
std::vector<BasisStatus> LpEngine::basis() const { return impl_->status; }

LpResult LpEngine::solve() { return impl_->solve(); }

LpResult solve_lp(const MilpModel& model, const std::vector<BasisStatus>* warm_start, const LpOptions& options) {
    LpEngine engine(options);
    engine.load(model);
    if (warm_start) engine.set_basis(*warm_start);
    return engine.solve();
}

}  // namespace drccots
