#include "drccots/reformulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "drccots/errors.hpp"
#include "drccots/lp_solver.hpp"

namespace drccots {

std::vector<int> Solution::opened_lines() const {
    std::vector<int> out;
    for (std::size_t l = 0; l < x.z.size(); ++l) {
        if (!x.z[l]) out.push_back(static_cast<int>(l) + 1);
    }
    return out;
}

namespace {

std::string tag(const std::string& base, int i) { return base + "_" + std::to_string(i); }

std::string tag(const std::string& base, int i, int j) {
    return base + "_" + std::to_string(i) + "_" + std::to_string(j);
}

Eigen::MatrixXd resolve_placement(const GridCase& grid, const Eigen::MatrixXd& F, int K) {
    Eigen::MatrixXd out = F.size() == 0 ? placement_matrix(grid) : F;
    if (out.rows() != grid.num_buses() || out.cols() != K) {
        fail(ErrorKind::DimensionMismatch, "placement matrix is " + std::to_string(out.rows()) + "x" +
                                               std::to_string(out.cols()) + ", expected " +
                                               std::to_string(grid.num_buses()) + "x" + std::to_string(K));
    }
    return out;
}

// Box around the samples; zero-spread coordinates get a small absolute pad.
Polytope sample_box(const ScenarioSet& s, double margin) {
    Eigen::VectorXd lo = s.samples.colwise().minCoeff().transpose();
    Eigen::VectorXd hi = s.samples.colwise().maxCoeff().transpose();
    Eigen::VectorXd range = hi - lo;
    for (int k = 0; k < s.dim(); ++k) {
        double pad = range[k] > 0.0 ? margin * range[k] : 1e-3 * std::max(1.0, std::abs(lo[k]));
        lo[k] -= pad;
        hi[k] += pad;
    }
    return box_polytope(lo, hi);
}

bool row_is_trivial(const CcRow& r) {
    if (!r.b.is_constant()) return false;
    for (const auto& a : r.a) {
        if (!a.is_constant() || a.constant != 0.0) return false;
    }
    return r.b.constant >= -1e-12;
}

// Shrinks the recourse-map bounds to their range over the LP relaxation of
// the backbone; the big-M values of the sample rows depend on them.
void tighten_recourse_bounds(MilpModel& m, const DecisionLayout& lay) {
    std::vector<int> targets;
    for (const auto& row : lay.y_theta) targets.insert(targets.end(), row.begin(), row.end());
    for (const auto& row : lay.y_f) targets.insert(targets.end(), row.begin(), row.end());
    MilpModel probe = m;
    std::fill(probe.obj.begin(), probe.obj.end(), 0.0);
    probe.obj_offset = 0.0;
    LpEngine engine;
    engine.load(probe);
    LpResult base = engine.solve();
    if (base.status != LpStatus::Optimal) return;
    std::vector<BasisStatus> basis = base.basis;
    for (int v : targets) {
        if (m.vars[v].lb == m.vars[v].ub) continue;
        double range[2] = {m.vars[v].lb, m.vars[v].ub};
        for (int side = 0; side < 2; ++side) {
            probe.obj[v] = side == 0 ? 1.0 : -1.0;
            LpResult r = solve_lp(probe, &basis);
            probe.obj[v] = 0.0;
            if (r.status != LpStatus::Optimal) continue;
            double val = r.x[v];
            double pad = 1e-7 * std::max(1.0, std::abs(val));
            if (side == 0) {
                range[0] = std::max(range[0], val - pad);
            } else {
                range[1] = std::min(range[1], val + pad);
            }
        }
        if (range[0] <= range[1]) {
            m.vars[v].lb = range[0];
            m.vars[v].ub = range[1];
        }
    }
}

BuiltModel backbone(const GridCase& grid, const NetworkOperators& ops, int K, int lines_out,
                    const Eigen::MatrixXd& F_in, const Polytope* support, double eps, const BuildOptions& opts,
                    const std::string& method, const Eigen::VectorXd& mu) {
    if (lines_out < 0 || lines_out > grid.num_lines()) fail(ErrorKind::InvalidArgument, "line-out budget out of range");
    BuiltModel bm;
    bm.method = method;
    bm.eps = eps;
    bm.lines_out = lines_out;
    bm.mu = mu;
    bm.layout = add_first_stage(bm.model, grid, ops, K, lines_out);
    bm.model.meta = {method, eps, lines_out};
    if (K == 0) return bm;
    if (mu.size() != K) fail(ErrorKind::DimensionMismatch, "mean dimension differs from source count");
    bm.F = resolve_placement(grid, F_in, K);
    bm.support = *support;
    balance_equality_block(bm.model, ops, bm.layout, bm.F);
    flow_dual_blocks(bm.model, grid, ops, bm.layout, *support);
    if (opts.tighten_bounds) tighten_recourse_bounds(bm.model, bm.layout);

    const BusData d = bus_data(grid);
    const double mean_sum = mu.sum();
    for (int n = 0; n < bm.layout.N; ++n) {
        if (d.has_generator[n]) bm.model.obj[bm.layout.gamma[n]] += d.recourse_cost[n] * grid.base_mva * mean_sum;
    }
    for (auto& r : cc_row_set(grid, bm.layout)) {
        for (auto& a : r.a) a = bm.model.fold_fixed(a);
        r.b = bm.model.fold_fixed(r.b);
        if (row_is_trivial(r)) continue;
        auto it = opts.eps_override.find(r.label());
        r.eps = it != opts.eps_override.end() ? it->second : eps;
        bm.rows.push_back(std::move(r));
    }
    return bm;
}

void check_eps(double eps) {
    if (!(eps >= 0.0 && eps <= 0.5)) fail(ErrorKind::InvalidArgument, "risk level must lie in [0, 0.5]");
}

// sum_k coef_k a_k(x) - b(x)
Affine combine(const CcRow& r, const Eigen::VectorXd& coef, double b_scale = 1.0) {
    Affine e;
    for (int k = 0; k < static_cast<int>(r.a.size()); ++k) {
        if (coef[k] != 0.0) e.add(r.a[k], coef[k]);
    }
    if (b_scale != 0.0) e.add(r.b, -b_scale);
    e.normalize();
    return e;
}

struct MadBlock {
    std::vector<int> vars;
};

// Linear rows of the scaled MAD dual for one chance row. With fixed_lp set,
// lambda' is the constant *fixed_lp and the (1 - eps) level is the variable zeta.
MadBlock add_mad_block(MilpModel& m, const CcRow& row, const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma,
                       const Polytope& xi, double bound, const std::string& name, const double* fixed_lp,
                       int zeta) {
    const int K = static_cast<int>(mu.size());
    const int W = xi.rows();
    MadBlock blk;
    auto var = [&](const std::string& v, double lo, double hi) {
        int id = m.add_var(name + "_" + v, VarKind::Continuous, lo, hi);
        blk.vars.push_back(id);
        return id;
    };
    auto vec = [&](const std::string& v, int count, double lo, double hi) {
        std::vector<int> out;
        for (int k = 0; k < count; ++k) out.push_back(var(v + std::to_string(k), lo, hi));
        return out;
    };
    int alpha = var("alpha", -bound, bound);
    auto beta = vec("beta", K, -bound, bound);
    auto kappa = vec("kappa", K, 0.0, bound);
    int lambda = fixed_lp ? -1 : var("lambda", 0.0, bound);
    auto pi1 = vec("pi1_", K, 0.0, bound);
    auto tau1 = vec("tau1_", K, 0.0, bound);
    auto pi2 = vec("pi2_", K, 0.0, bound);
    auto tau2 = vec("tau2_", K, 0.0, bound);
    auto psi1 = vec("psi1_", W, 0.0, bound);
    auto psi2 = vec("psi2_", W, 0.0, bound);

    // LL_a
    Affine a;
    a.add(alpha, 1.0);
    for (int k = 0; k < K; ++k) a.add(beta[k], mu[k]).add(kappa[k], -sigma[k]);
    if (fixed_lp) {
        a.add(zeta, -*fixed_lp);
    } else {
        a.add(lambda, -(1.0 - row.eps));
    }
    m.add_con(name + "_a", a, Sense::Ge, 0.0);
    // LL_b and LL_e
    for (int branch = 0; branch < 2; ++branch) {
        const auto& pi = branch == 0 ? pi1 : pi2;
        const auto& tau = branch == 0 ? tau1 : tau2;
        const auto& psi = branch == 0 ? psi1 : psi2;
        Affine e;
        e.add(alpha, 1.0);
        for (int k = 0; k < K; ++k) e.add(pi[k], mu[k]).add(tau[k], -mu[k]);
        for (int w = 0; w < W; ++w) e.add(psi[w], xi.t[w]);
        double rhs = 0.0;
        if (branch == 0) {
            if (fixed_lp) {
                rhs = *fixed_lp;
            } else {
                e.add(lambda, -1.0);
            }
        } else {
            e.add(row.b, -1.0);
        }
        m.add_con(name + (branch == 0 ? "_b" : "_e"), e, Sense::Le, rhs);
        // LL_c / LL_f and LL_d / LL_g
        for (int k = 0; k < K; ++k) {
            Affine c;
            c.add(beta[k], 1.0).add(tau[k], 1.0).add(pi[k], -1.0);
            for (int w = 0; w < W; ++w) {
                if (xi.U(w, k) != 0.0) c.add(psi[w], -xi.U(w, k));
            }
            if (branch == 1) c.add(row.a[k], 1.0);
            m.add_con(tag(name + (branch == 0 ? "_c" : "_f"), k), c, Sense::Eq, 0.0);
            m.add_con(tag(name + (branch == 0 ? "_d" : "_g"), k), {{pi[k], 1.0}, {tau[k], 1.0}, {kappa[k], -1.0}},
                      Sense::Eq, 0.0);
        }
    }
    return blk;
}

}  // namespace

BuiltModel build_deterministic(const GridCase& grid, const NetworkOperators& ops, int lines_out) {
    return backbone(grid, ops, 0, lines_out, Eigen::MatrixXd(), nullptr, 0.0, BuildOptions{}, "det",
                    Eigen::VectorXd());
}

BuiltModel build_saa(const GridCase& grid, const NetworkOperators& ops, const ScenarioSet& scenarios, double eps,
                     int lines_out, const Eigen::MatrixXd& F, const BuildOptions& opts) {
    BuiltModel bm = build_wasserstein(grid, ops, scenarios, 0.0, eps, lines_out, F, opts);
    bm.method = "saa";
    bm.model.meta.method = "saa";
    return bm;
}

BuiltModel build_wasserstein(const GridCase& grid, const NetworkOperators& ops, const ScenarioSet& scenarios,
                             double delta, double eps, int lines_out, const Eigen::MatrixXd& F,
                             const BuildOptions& opts) {
    check_eps(eps);
    if (scenarios.size() < 1) fail(ErrorKind::EmptyFile, "no samples");
    if (!(delta >= 0.0)) fail(ErrorKind::InvalidArgument, "Wasserstein radius must be nonnegative");
    const int K = scenarios.dim();
    const int S = scenarios.size();
    Polytope support = opts.support ? *opts.support : sample_box(scenarios, opts.support_margin);
    Eigen::VectorXd mean = scenarios.samples.colwise().mean().transpose();
    BuiltModel bm = backbone(grid, ops, K, lines_out, F, &support, eps, opts, "wass", mean);
    if (opts.dr_objective && delta > 0.0) {
        const BusData d = bus_data(grid);
        for (int n = 0; n < bm.layout.N; ++n) {
            if (d.has_generator[n]) bm.model.obj[bm.layout.gamma[n]] += d.recourse_cost[n] * grid.base_mva * delta * K;
        }
    }
    MilpModel& m = bm.model;
    for (std::size_t i = 0; i < bm.rows.size(); ++i) {
        const CcRow& r = bm.rows[i];
        const int ii = static_cast<int>(i);
        // ||a(x)||_1 through s >= |a|
        Affine norm;
        double norm_max = 0.0;
        if (delta > 0.0) {
            for (int k = 0; k < K; ++k) {
                double amax = std::max(std::abs(m.max_over_bounds(r.a[k])), std::abs(m.min_over_bounds(r.a[k])));
                norm_max += amax;
                if (r.a[k].is_constant()) {
                    norm.constant += std::abs(r.a[k].constant);
                    continue;
                }
                int s = m.add_var(tag("s", ii, k), VarKind::Continuous, 0.0, amax);
                Affine up = r.a[k];
                up.add(s, -1.0);
                m.add_con(tag("sabs_hi", ii, k), up, Sense::Le, 0.0);
                Affine lo = r.a[k];
                lo.add(s, 1.0);
                m.add_con(tag("sabs_lo", ii, k), lo, Sense::Ge, 0.0);
                norm.add(s, 1.0);
            }
        }
        std::vector<Term> budget;
        for (int j = 0; j < S; ++j) {
            Eigen::VectorXd xi = scenarios.samples.row(j).transpose();
            Affine e = combine(r, xi);  // a^T xi - b
            if (delta > 0.0) e.add(norm, delta);
            double M = m.max_over_bounds(e);
            if (M <= 0.0) continue;
            int w = m.add_binary(tag("w", ii, j));
            e.add(w, -M);
            m.add_con(tag("saa", ii, j), e, Sense::Le, 0.0);
            budget.push_back({w, 1.0});
        }
        if (!budget.empty()) {
            double cap = std::floor(S * r.eps + 1e-9);
            m.add_con(tag("wsum", ii), budget, Sense::Le, cap);
        }
    }
    bm.method = "wass";
    return bm;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::QuantileDomain, "quantile level must lie in (0, 1)");
    // Acklam's rational approximation followed by Newton steps on erfc.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01,  -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= 1 - plow) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        double q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    for (int it = 0; it < 3; ++it) {
        double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        if (pdf <= 0.0) break;
        x -= (cdf - p) / pdf;
    }
    return x;
}

GaussianCutGenerator::GaussianCutGenerator(std::vector<CcRow> rows, Eigen::VectorXd mu, Eigen::MatrixXd Sigma)
    : rows_(std::move(rows)), mu_(std::move(mu)), Sigma_(std::move(Sigma)) {
    for (const auto& r : rows_) {
        if (!(r.eps > 0.0 && r.eps <= 0.5)) fail(ErrorKind::QuantileDomain, "risk level must lie in (0, 0.5]");
        z_.push_back(normal_quantile(1.0 - r.eps));
    }
}

namespace {

struct SocEval {
    Eigen::VectorXd a;
    double b = 0.0;
    double std = 0.0;
    double lhs = 0.0;
};

SocEval soc_eval(const CcRow& r, const Eigen::VectorXd& mu, const Eigen::MatrixXd& Sigma, double z,
                 const std::vector<double>& x) {
    SocEval e;
    const int K = static_cast<int>(r.a.size());
    e.a.resize(K);
    for (int k = 0; k < K; ++k) e.a[k] = r.a[k].value(x);
    e.b = r.b.value(x);
    e.std = std::sqrt(std::max(0.0, e.a.dot(Sigma * e.a)));
    e.lhs = mu.dot(e.a) + z * e.std;
    return e;
}

}  // namespace

std::vector<Cut> GaussianCutGenerator::separate(const std::vector<double>& x, double tol) const {
    std::vector<Cut> cuts;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        SocEval e = soc_eval(rows_[i], mu_, Sigma_, z_[i], x);
        double rel = (e.lhs - e.b) / std::max(1.0, std::abs(e.b));
        if (rel <= tol || e.std <= 1e-12) continue;
        Eigen::VectorXd coef = mu_ + z_[i] * (Sigma_ * e.a) / e.std;
        Affine lhs = combine(rows_[i], coef);
        Cut c;
        c.name = tag("soc", static_cast<int>(i), static_cast<int>(serial_++));
        c.terms = lhs.terms;
        c.sense = Sense::Le;
        c.rhs = -lhs.constant;
        if (!c.terms.empty()) cuts.push_back(std::move(c));
    }
    return cuts;
}

double GaussianCutGenerator::max_relative_violation(const std::vector<double>& x) const {
    double worst = 0.0;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        SocEval e = soc_eval(rows_[i], mu_, Sigma_, z_[i], x);
        worst = std::max(worst, (e.lhs - e.b) / std::max(1.0, std::abs(e.b)));
    }
    return worst;
}

MilpResult solve_with_soc_cuts(MilpModel& model, const GaussianCutGenerator& gen, const SolveOptions& options,
                               const IncumbentCallback& extra, int& rounds, double& final_violation) {
    std::vector<Cut> found;
    auto cb = [&](const std::vector<double>& x) {
        if (extra) {
            auto cuts = extra(x);
            if (!cuts.empty()) return cuts;
        }
        auto cuts = gen.separate(x, 0.1 * options.soc_tol);
        found.insert(found.end(), cuts.begin(), cuts.end());
        return cuts;
    };
    MilpResult res;
    int total_cuts = 0;
    rounds = 0;
    final_violation = 0.0;
    for (int r = 1; r <= options.max_rounds; ++r) {
        rounds = r;
        found.clear();
        res = solve_milp(model, options.milp, cb);
        total_cuts += res.cuts_added;
        if (res.x.empty()) break;
        final_violation = gen.max_relative_violation(res.x);
        for (const auto& c : found) model.add_con(c.name, c.terms, c.sense, c.rhs);
        if (final_violation < options.soc_tol) break;
        auto extra_cuts = gen.separate(res.x, 0.0);
        for (const auto& c : extra_cuts) model.add_con(c.name, c.terms, c.sense, c.rhs);
        total_cuts += static_cast<int>(extra_cuts.size());
    }
    res.cuts_added = total_cuts;
    return res;
}

BuiltModel build_gaussian(const GridCase& grid, const NetworkOperators& ops, const Eigen::VectorXd& mu,
                          const Eigen::MatrixXd& Sigma, double eps, int lines_out, const Eigen::MatrixXd& F,
                          const BuildOptions& opts) {
    if (!(eps > 0.0 && eps <= 0.5)) fail(ErrorKind::QuantileDomain, "risk level must lie in (0, 0.5]");
    const int K = static_cast<int>(mu.size());
    if (Sigma.rows() != K || Sigma.cols() != K) fail(ErrorKind::DimensionMismatch, "covariance shape");
    Polytope support;
    if (opts.support) {
        support = *opts.support;
    } else {
        // Robust flow rows need a bounded set; use mean +/- 4 standard deviations.
        Eigen::VectorXd sd = Sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
        Eigen::VectorXd pad = (4.0 * sd).cwiseMax(1e-3);
        support = box_polytope(mu - pad, mu + pad);
    }
    BuiltModel bm = backbone(grid, ops, K, lines_out, F, &support, eps, opts, "gauss", mu);
    bm.Sigma = Sigma;
    bm.quantile = normal_quantile(1.0 - eps);
    for (std::size_t i = 0; i < bm.rows.size(); ++i) {
        Affine e = combine(bm.rows[i], mu);
        bm.model.add_con(tag("gmean", static_cast<int>(i)), e, Sense::Le, 0.0);
    }
    return bm;
}

BuiltModel build_mad(const GridCase& grid, const NetworkOperators& ops, const Eigen::VectorXd& mu,
                     const Eigen::VectorXd& sigma, const Polytope& support, double eps, int lines_out,
                     const Eigen::MatrixXd& F, const BuildOptions& opts) {
    check_eps(eps);
    validate(MeanMadSpec{mu, sigma, support});
    BuiltModel bm = backbone(grid, ops, static_cast<int>(mu.size()), lines_out, F, &support, eps, opts, "mad", mu);
    bm.dual_bound = opts.dual_bound;
    for (std::size_t i = 0; i < bm.rows.size(); ++i) {
        auto blk = add_mad_block(bm.model, bm.rows[i], mu, sigma, support, opts.dual_bound,
                                 tag("mad", static_cast<int>(i)), nullptr, -1);
        bm.dual_vars.insert(bm.dual_vars.end(), blk.vars.begin(), blk.vars.end());
    }
    return bm;
}

namespace {

// With smallest_lambda set, a second solve keeps the optimal value and picks
// the smallest lambda among the optimal duals.
WorstCaseDual dual_lp(const Eigen::VectorXd& a, double b, const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma,
                      const Polytope& support, double lambda_lo, double lambda_hi, bool smallest_lambda) {
    const int K = static_cast<int>(mu.size());
    const int W = support.rows();
    if (a.size() != K || sigma.size() != K || support.dim() != K) fail(ErrorKind::DimensionMismatch, "worst-case inputs");
    if (!support.strictly_contains(mu)) fail(ErrorKind::UnboundedDual, "mean is not interior to the support");
    const double big = 1e7;
    MilpModel m;
    int alpha = m.add_var("alpha", VarKind::Continuous, -big, big, -1.0);
    std::vector<int> beta, kappa, pi1, tau1, pi2, tau2, psi1, psi2;
    for (int k = 0; k < K; ++k) {
        beta.push_back(m.add_var(tag("beta", k), VarKind::Continuous, -big, big, -mu[k]));
        kappa.push_back(m.add_var(tag("kappa", k), VarKind::Continuous, 0.0, big, sigma[k]));
    }
    for (int k = 0; k < K; ++k) {
        pi1.push_back(m.add_var(tag("pi1", k), VarKind::Continuous, 0.0, big));
        tau1.push_back(m.add_var(tag("tau1", k), VarKind::Continuous, 0.0, big));
        pi2.push_back(m.add_var(tag("pi2", k), VarKind::Continuous, 0.0, big));
        tau2.push_back(m.add_var(tag("tau2", k), VarKind::Continuous, 0.0, big));
    }
    for (int w = 0; w < W; ++w) {
        psi1.push_back(m.add_var(tag("psi1", w), VarKind::Continuous, 0.0, big));
        psi2.push_back(m.add_var(tag("psi2", w), VarKind::Continuous, 0.0, big));
    }
    int lambda = m.add_var("lambda", VarKind::Continuous, lambda_lo, lambda_hi);
    for (int branch = 0; branch < 2; ++branch) {
        const auto& pi = branch == 0 ? pi1 : pi2;
        const auto& tau = branch == 0 ? tau1 : tau2;
        const auto& psi = branch == 0 ? psi1 : psi2;
        Affine e;
        e.add(alpha, 1.0);
        for (int k = 0; k < K; ++k) e.add(pi[k], mu[k]).add(tau[k], -mu[k]);
        for (int w = 0; w < W; ++w) e.add(psi[w], support.t[w]);
        if (branch == 1) e.add(lambda, -b);
        m.add_con(tag("top", branch), e, Sense::Le, branch == 0 ? 1.0 : 0.0);
        for (int k = 0; k < K; ++k) {
            Affine c;
            c.add(beta[k], 1.0).add(tau[k], 1.0).add(pi[k], -1.0);
            for (int w = 0; w < W; ++w) {
                if (support.U(w, k) != 0.0) c.add(psi[w], -support.U(w, k));
            }
            if (branch == 1 && a[k] != 0.0) c.add(lambda, a[k]);
            m.add_con(tag("lin", branch, k), c, Sense::Eq, 0.0);
            m.add_con(tag("abs", branch, k), {{pi[k], 1.0}, {tau[k], 1.0}, {kappa[k], -1.0}}, Sense::Eq, 0.0);
        }
    }
    auto run = [&] {
        LpResult r = solve_lp(m);
        if (r.status == LpStatus::Unbounded) fail(ErrorKind::UnboundedDual, "worst-case dual is unbounded");
        if (r.status != LpStatus::Optimal) {
            fail(ErrorKind::NumericalBreakdown, std::string("worst-case dual LP ended ") + lp_status_name(r.status));
        }
        return r;
    };
    LpResult r = run();
    WorstCaseDual out;
    out.value = std::clamp(-r.objective, 0.0, 1.0);
    out.lambda = r.x[lambda];
    if (-r.objective > 1.0 + 1e-6) fail(ErrorKind::UnboundedDual, "worst-case dual exceeds one");
    if (smallest_lambda) {
        Affine value;
        value.add(alpha, 1.0);
        for (int k = 0; k < K; ++k) value.add(beta[k], mu[k]).add(kappa[k], -sigma[k]);
        const double v = -r.objective;
        m.add_con("value", value, Sense::Ge, v - 1e-9 * std::max(1.0, std::abs(v)));
        std::fill(m.obj.begin(), m.obj.end(), 0.0);
        m.obj[lambda] = 1.0;
        out.lambda = run().x[lambda];
    }
    return out;
}

}  // namespace

WorstCaseDual worst_case_dual(const Eigen::VectorXd& a, double b, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& sigma, const Polytope& support, double lambda_lo,
                              double lambda_hi) {
    return dual_lp(a, b, mu, sigma, support, lambda_lo, lambda_hi, false);
}

namespace {

// Range of a^T xi over the support.
void support_range(const Eigen::VectorXd& a, const Polytope& support, double& amin, double& amax) {
    amin = amax = 0.0;
    if (support.is_box()) {
        Eigen::VectorXd lo, hi;
        support.bounding_box(lo, hi);
        for (int k = 0; k < a.size(); ++k) {
            amax += a[k] > 0 ? a[k] * hi[k] : a[k] * lo[k];
            amin += a[k] > 0 ? a[k] * lo[k] : a[k] * hi[k];
        }
        return;
    }
    for (int side = 0; side < 2; ++side) {
        MilpModel m;
        for (int k = 0; k < a.size(); ++k) {
            m.add_var(tag("xi", k), VarKind::Continuous, -1e6, 1e6, side ? -a[k] : a[k]);
        }
        for (int w = 0; w < support.rows(); ++w) {
            std::vector<Term> terms;
            for (int k = 0; k < a.size(); ++k) terms.push_back({k, support.U(w, k)});
            m.add_con(tag("w", w), terms, Sense::Le, support.t[w]);
        }
        auto r = solve_lp(m);
        if (r.status != LpStatus::Optimal) fail(ErrorKind::UnboundedDual, "support is empty or unbounded");
        (side ? amax : amin) = side ? -r.objective : r.objective;
    }
}

}  // namespace

double worst_case_probability(const Eigen::VectorXd& a, double b, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& sigma, const Polytope& support) {
    if (!support.strictly_contains(mu)) fail(ErrorKind::UnboundedDual, "mean is not interior to the support");
    double amin = 0.0, amax = 0.0;
    support_range(a, support, amin, amax);
    if (b >= amax) return 1.0;
    if (b < amin) return 0.0;
    return worst_case_dual(a, b, mu, sigma, support, 0.0, 1e6).value;
}

namespace {

// No-good style cut: some line leaving each island not holding the slack must close.
std::vector<Cut> islanding_cuts(const GridCase& grid, const DecisionLayout& lay, const std::vector<double>& x) {
    const int N = grid.num_buses();
    std::vector<int> parent(N);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
        while (parent[v] != v) v = parent[v] = parent[parent[v]];
        return v;
    };
    for (int l = 0; l < lay.L; ++l) {
        if (x[lay.z[l]] > 0.5) {
            parent[find(grid.bus_index(grid.lines[l].from))] = find(grid.bus_index(grid.lines[l].to));
        }
    }
    const int root = find(grid.slack_index());
    std::vector<Cut> cuts;
    std::vector<bool> seen(N, false);
    for (int n = 0; n < N; ++n) {
        int c = find(n);
        if (c == root || seen[c]) continue;
        seen[c] = true;
        Cut cut;
        cut.name = "island_" + std::to_string(n);
        for (int l = 0; l < lay.L; ++l) {
            bool in_from = find(grid.bus_index(grid.lines[l].from)) == c;
            bool in_to = find(grid.bus_index(grid.lines[l].to)) == c;
            if (in_from != in_to) cut.terms.push_back({lay.z[l], 1.0});
        }
        cut.sense = Sense::Ge;
        cut.rhs = 1.0;
        cuts.push_back(std::move(cut));
    }
    return cuts;
}

Solution make_solution(const BuiltModel& bm, const MilpResult& res, const GridCase& grid,
                       const NetworkOperators& ops) {
    Solution sol;
    sol.method = bm.method;
    sol.eps = bm.eps;
    sol.lines_out = bm.lines_out;
    sol.mu = bm.mu;
    sol.diag.status = milp_status_name(res.status);
    sol.diag.bound = res.bound;
    sol.diag.gap = res.gap;
    sol.diag.nodes = res.nodes;
    sol.diag.lp_iterations = res.lp_iterations;
    sol.diag.cuts = res.cuts_added;
    sol.diag.wall_time = res.wall_time;
    if (res.x.empty()) return sol;
    sol.raw = res.x;
    sol.objective = res.objective;
    sol.x = read_first_stage(bm.layout, res.x);
    if (bm.layout.K > 0) {
        sol.Y = read_recourse(bm.layout, res.x);
        std::vector<bool> closed(sol.x.z.begin(), sol.x.z.end());
        if (is_connected(grid, closed)) {
            RecourseMaps exact = recourse_matrices(grid, ops, sol.x.z, sol.x.gamma, bm.F);
            double diff = std::max((exact.Y_theta - sol.Y.Y_theta).cwiseAbs().maxCoeff(),
                                   (exact.Y_f - sol.Y.Y_f).cwiseAbs().maxCoeff());
            if (diff > 1e-6) {
                char buf[96];
                std::snprintf(buf, sizeof(buf), "recourse maps differ from the dc solve by %.3g", diff);
                sol.diag.notes.push_back(buf);
            }
        }
    } else {
        sol.x.gamma = Eigen::VectorXd::Zero(bm.layout.N);
        sol.Y.Y_theta = Eigen::MatrixXd::Zero(bm.layout.N, 0);
        sol.Y.Y_f = Eigen::MatrixXd::Zero(bm.layout.L, 0);
    }
    int hits = 0;
    for (int v : bm.dual_vars) {
        const auto& var = bm.model.vars[v];
        double lim = std::max(std::abs(var.lb), std::abs(var.ub));
        if (std::abs(res.x[v]) >= 0.999 * lim && lim > 0.0) ++hits;
    }
    sol.diag.dual_bound_hits = hits;
    if (hits > 0) sol.diag.notes.push_back(std::to_string(hits) + " dual block variables sit at their bound");
    return sol;
}

}  // namespace

Solution solve(BuiltModel& built, const GridCase& grid, const NetworkOperators& ops, const SolveOptions& options) {
    IncumbentCallback island;
    if (options.islanding_cuts && built.lines_out > 0) {
        island = [&](const std::vector<double>& x) { return islanding_cuts(grid, built.layout, x); };
    }
    if (built.method == "gauss" && !built.rows.empty()) {
        GaussianCutGenerator gen(built.rows, built.mu, built.Sigma);
        int rounds = 0;
        double viol = 0.0;
        MilpResult res = solve_with_soc_cuts(built.model, gen, options, island, rounds, viol);
        Solution sol = make_solution(built, res, grid, ops);
        sol.diag.rounds = rounds;
        sol.diag.max_soc_violation = viol;
        if (sol.has_solution() && viol >= options.soc_tol) {
            sol.diag.notes.push_back("cut loop stopped before the SOC tolerance was met");
        }
        return sol;
    }
    MilpResult res = solve_milp(built.model, options.milp, island);
    return make_solution(built, res, grid, ops);
}

MeanMadSpec pooled_spec(const MultiMadSpec& spec) {
    validate(spec);
    const int K = static_cast<int>(spec.modes.front().mu.size());
    MeanMadSpec out;
    out.mu = Eigen::VectorXd::Zero(K);
    for (const auto& m : spec.modes) out.mu += m.p * m.mu;
    out.sigma = Eigen::VectorXd::Zero(K);
    for (const auto& m : spec.modes) out.sigma += m.p * (m.sigma + (m.mu - out.mu).cwiseAbs());
    Eigen::VectorXd lo, hi;
    for (std::size_t j = 0; j < spec.modes.size(); ++j) {
        Eigen::VectorXd l, h;
        spec.modes[j].support.bounding_box(l, h);
        if (j == 0) {
            lo = l;
            hi = h;
        } else {
            lo = lo.cwiseMin(l);
            hi = hi.cwiseMax(h);
        }
    }
    out.support = box_polytope(lo, hi);
    return out;
}

Solution solve_multimodal_bcd(const GridCase& grid, const NetworkOperators& ops, const MultiMadSpec& spec, double eps,
                              int lines_out, const Eigen::MatrixXd& F, const BcdOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    check_eps(eps);
    MeanMadSpec pooled = pooled_spec(spec);
    BuiltModel b0 = build_mad(grid, ops, pooled.mu, pooled.sigma, pooled.support, eps, lines_out, F, options.build);
    Solution cur = solve(b0, grid, ops, options.solve);
    if (!cur.has_solution()) fail(ErrorKind::NoFeasibleStart, "pooled single-mode model is infeasible");
    Solution best = cur;
    std::vector<double> history{cur.objective};
    const int m = static_cast<int>(spec.modes.size());
    const double lambda_lo = 1e-2;
    const double lambda_hi = 1e6;
    bool converged = false;
    int iterations = 0;
    long nodes = cur.diag.nodes;
    std::vector<std::string> notes;
    for (int t = 1; t <= options.t_max; ++t) {
        BuiltModel bt = backbone(grid, ops, static_cast<int>(pooled.mu.size()), lines_out, F, &pooled.support, eps,
                                 options.build, "mad-multi", pooled.mu);
        if (bt.layout.y_f != b0.layout.y_f || bt.rows.size() != b0.rows.size()) {
            fail(ErrorKind::NumericalBreakdown, "backbone layout changed between iterations");
        }
        // Step 3: per-row, per-mode dual at the previous iterate.
        const int R = static_cast<int>(bt.rows.size());
        std::vector<double> lp(static_cast<std::size_t>(R) * m, 0.0);
        std::vector<double> value(lp.size(), 1.0);
        std::vector<char> edge(lp.size(), 0);
        auto work = [&](int from, int to) {
            for (int idx = from; idx < to; ++idx) {
                const CcRow& r = bt.rows[idx / m];
                const MadMode& mode = spec.modes[idx % m];
                Eigen::VectorXd a(r.a.size());
                for (int k = 0; k < a.size(); ++k) a[k] = r.a[k].value(cur.raw);
                double b = r.b.value(cur.raw);
                double amin = 0.0, amax = 0.0;
                support_range(a, mode.support, amin, amax);
                const double tol = 1e-6 * std::max(1.0, amax - amin);
                // Smallest optimal lambda; the robust choice lambda' = 0 would pin rows that hold on the
                // whole support and stall the descent.
                WorstCaseDual d = dual_lp(a, b, mode.mu, mode.sigma, mode.support, lambda_lo, lambda_hi, true);
                // lambda pegged near its cap means the value is only reached in the limit; a tiny lambda'
                // shrinks the block below the solver tolerances, so use the robust form instead.
                lp[idx] = d.lambda >= 0.5 * lambda_hi ? 0.0 : 1.0 / d.lambda;
                value[idx] = d.value;
                // Near b = amax the dual gives the closed-event value or needs lambda past its cap, so the
                // certificate can fall below the true value 1.
                edge[idx] = b >= amax - tol;
            }
        };
        const int total = R * m;
        const int threads = std::max(1, std::min(options.solve.threads, total));
        if (threads == 1) {
            work(0, total);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(threads);
            for (int w = 0; w < threads; ++w) {
                int from = total * w / threads;
                int to = total * (w + 1) / threads;
                pool.emplace_back([&, w, from, to] {
                    try {
                        work(from, to);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (auto& e : errors) {
                if (e) std::rethrow_exception(e);
            }
        }
        // Rows whose mixed certificate falls short keep their robustly satisfied modes at lambda' = 0,
        // so the previous iterate stays feasible.
        for (int i = 0; i < R; ++i) {
            double mix = 0.0;
            for (int j = 0; j < m; ++j) mix += spec.modes[j].p * value[static_cast<std::size_t>(i) * m + j];
            if (mix >= 1.0 - bt.rows[i].eps) continue;
            for (int j = 0; j < m; ++j) {
                if (edge[static_cast<std::size_t>(i) * m + j]) lp[static_cast<std::size_t>(i) * m + j] = 0.0;
            }
        }
        // Step 4: MILP with the multipliers fixed.
        for (int i = 0; i < R; ++i) {
            std::vector<Term> mix;
            for (int j = 0; j < m; ++j) {
                int zeta = bt.model.add_var(tag("zeta", i, j), VarKind::Continuous, 0.0, 1.0);
                double fixed = lp[static_cast<std::size_t>(i) * m + j];
                double bound = options.build.dual_bound * std::max(1.0, fixed);
                auto blk = add_mad_block(bt.model, bt.rows[i], spec.modes[j].mu, spec.modes[j].sigma,
                                         spec.modes[j].support, bound, tag("mm", i, j), &fixed, zeta);
                bt.dual_vars.insert(bt.dual_vars.end(), blk.vars.begin(), blk.vars.end());
                mix.push_back({zeta, spec.modes[j].p});
            }
            bt.model.add_con(tag("mix", i), mix, Sense::Ge, 1.0 - bt.rows[i].eps);
        }
        Solution next = solve(bt, grid, ops, options.solve);
        nodes += next.diag.nodes;
        if (!next.has_solution()) {
            notes.push_back("step 4 infeasible at iteration " + std::to_string(t));
            break;
        }
        iterations = t;
        history.push_back(next.objective);
        double change = std::abs(next.objective - cur.objective);
        if (next.objective < best.objective) best = next;
        cur = std::move(next);
        if (change < options.omega) {
            converged = true;
            break;
        }
    }
    best.method = "mad-multi";
    best.mu = pooled.mu;
    best.diag.objective_history = history;
    best.diag.bcd_iterations = iterations;
    best.diag.iteration_cap = !converged;
    best.diag.nodes = nodes;
    best.diag.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (auto& n : notes) best.diag.notes.push_back(n);
    if (!converged) best.diag.notes.push_back("iteration cap reached before convergence");
    return best;
}

}  // namespace drccots
