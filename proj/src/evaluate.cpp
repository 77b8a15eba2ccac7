#include "drccots/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <memory>
#include <numeric>
#include <thread>

#include "drccots/errors.hpp"
#include "drccots/lp_solver.hpp"

namespace drccots {

std::string NumericRow::label() const { return std::string(row_kind_name(kind)) + "[" + std::to_string(index) + "]"; }

RecourseMaps evaluation_maps(const Solution& sol, const GridCase& grid, const NetworkOperators& ops) {
    std::vector<bool> closed(sol.x.z.begin(), sol.x.z.end());
    if (sol.Y.Y_theta.cols() > 0 && is_connected(grid, closed)) {
        return recourse_matrices(grid, ops, sol.x.z, sol.x.gamma, placement_matrix(grid));
    }
    return sol.Y;
}

std::vector<NumericRow> evaluation_rows(const Solution& sol, const GridCase& grid, const RecourseMaps& Y) {
    const BusData d = bus_data(grid);
    const int N = grid.num_buses();
    const int L = grid.num_lines();
    const int K = static_cast<int>(Y.Y_theta.cols());
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(K);
    std::vector<NumericRow> rows;
    auto add = [&](RowKind kind, int index, const Eigen::VectorXd& a, double b) {
        rows.push_back({kind, index, a, b});
    };
    for (int n = 0; n < N; ++n) {
        if (!d.has_generator[n]) continue;
        add(RowKind::ReserveUpper, n, sol.x.gamma[n] * ones, d.rmax[n]);
        add(RowKind::ReserveLower, n, -sol.x.gamma[n] * ones, -d.rmin[n]);
    }
    for (int n = 0; n < N; ++n) {
        if (!d.has_generator[n]) continue;
        add(RowKind::GenUpper, n, sol.x.gamma[n] * ones, d.gmax[n] - sol.x.g[n]);
        add(RowKind::GenLower, n, -sol.x.gamma[n] * ones, sol.x.g[n] - d.gmin[n]);
    }
    const int slack = grid.slack_index();
    for (int n = 0; n < N; ++n) {
        if (n == slack) continue;
        Eigen::VectorXd a = Y.Y_theta.row(n).transpose();
        add(RowKind::AngleUpper, n, a, d.theta_max[n] - sol.x.theta[n]);
        add(RowKind::AngleLower, n, -a, sol.x.theta[n] - d.theta_min[n]);
    }
    for (int l = 0; l < L; ++l) {
        if (!sol.x.z[l]) continue;
        Eigen::VectorXd a = Y.Y_f.row(l).transpose();
        add(RowKind::FlowUpper, l, a, d.flow_max[l] - sol.x.f[l]);
        add(RowKind::FlowLower, l, -a, sol.x.f[l] + d.flow_max[l]);
    }
    return rows;
}

double dispatch_cost(const Solution& sol, const GridCase& grid, double mean_sum) {
    const BusData d = bus_data(grid);
    double cost = 0.0;
    for (int n = 0; n < grid.num_buses(); ++n) {
        cost += d.cost[n] * sol.x.g[n] * grid.base_mva;
        if (sol.x.gamma.size() > 0) cost += d.recourse_cost[n] * sol.x.gamma[n] * grid.base_mva * mean_sum;
    }
    return cost;
}

Curtailer::Curtailer(const Solution& sol, const GridCase& grid, const NetworkOperators& ops, bool paper_exact)
    : base_mva_(grid.base_mva), paper_exact_(paper_exact) {
    RecourseMaps Y = evaluation_maps(sol, grid, ops);
    for (auto& r : evaluation_rows(sol, grid, Y)) {
        if (r.kind == RowKind::AngleUpper || r.kind == RowKind::AngleLower || r.kind == RowKind::FlowUpper ||
            r.kind == RowKind::FlowLower) {
            rows_.push_back(std::move(r));
        }
    }
}

double Curtailer::violation(const Eigen::VectorXd& xi) const {
    double worst = 0.0;
    for (const auto& r : rows_) worst = std::max(worst, r.a.dot(xi) - r.b);
    return worst;
}

CurtailmentResult Curtailer::solve(const Eigen::VectorXd& xi) const {
    const int K = static_cast<int>(xi.size());
    CurtailmentResult out;
    out.xi_c = Eigen::VectorXd::Zero(K);
    if (violation(xi) <= 1e-7) return out;
    // a^T (xi - xi_c) <= b  <=>  a^T xi_c >= a^T xi - b
    MilpModel m;
    for (int k = 0; k < K; ++k) {
        // the engine wants finite bounds; 1e4 p.u. never binds
        double cap = paper_exact_ ? 1e4 : std::max(xi[k], 0.0);
        m.add_var("xc_" + std::to_string(k), VarKind::Continuous, 0.0, cap, 1.0);
    }
    for (const auto& r : rows_) {
        double need = r.a.dot(xi) - r.b;
        std::vector<Term> terms;
        for (int k = 0; k < K; ++k) {
            if (r.a[k] != 0.0) terms.push_back({k, r.a[k]});
        }
        if (terms.empty()) {
            if (need > 1e-7) {
                out.feasible = false;
                return out;
            }
            continue;
        }
        m.add_con(r.label(), terms, Sense::Ge, need);
    }
    LpResult lp = solve_lp(m);
    if (lp.status != LpStatus::Optimal) {
        out.feasible = false;
        return out;
    }
    for (int k = 0; k < K; ++k) out.xi_c[k] = std::max(0.0, lp.x[k]);
    out.total_mw = out.xi_c.sum() * base_mva_;
    return out;
}

CurtailmentResult curtailment(const Solution& sol, const Eigen::VectorXd& xi, const GridCase& grid,
                              const NetworkOperators& ops, bool paper_exact) {
    if (sol.Y.Y_theta.cols() != xi.size()) fail(ErrorKind::DimensionMismatch, "scenario dimension differs from the solution");
    return Curtailer(sol, grid, ops, paper_exact).solve(xi);
}

namespace {

// Scenario indices in lexicographic order of their values, so every
// statistic is independent of the input order.
std::vector<int> canonical_order(const ScenarioSet& s) {
    std::vector<int> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        for (int k = 0; k < s.dim(); ++k) {
            if (s.samples(a, k) != s.samples(b, k)) return s.samples(a, k) < s.samples(b, k);
        }
        return false;
    });
    return idx;
}

template <typename Fn>
void parallel_for(int count, int threads, const Fn& fn) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int w = 0; w < threads; ++w) {
        int from = static_cast<int>(static_cast<long>(count) * w / threads);
        int to = static_cast<int>(static_cast<long>(count) * (w + 1) / threads);
        pool.emplace_back([&, w, from, to] {
            try {
                for (int i = from; i < to; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double sorted_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double nearest_rank(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0.0;
    int idx = static_cast<int>(std::ceil(p * sorted.size())) - 1;
    idx = std::clamp(idx, 0, static_cast<int>(sorted.size()) - 1);
    return sorted[idx];
}

void check_dimension(const Solution& sol, const ScenarioSet& test) {
    if (!sol.has_solution()) fail(ErrorKind::InvalidArgument, "solution holds no decisions");
    if (sol.Y.Y_theta.cols() != test.dim() || test.dim() == 0) {
        fail(ErrorKind::DimensionMismatch, "scenarios have " + std::to_string(test.dim()) + " columns, solution has " +
                                               std::to_string(sol.Y.Y_theta.cols()) + " sources");
    }
}

CurtailmentSummary summarize(const std::vector<double>& values, int infeasible, int bins) {
    CurtailmentSummary s;
    s.infeasible = infeasible;
    s.scenarios = static_cast<int>(values.size()) + infeasible;
    std::vector<double> v = values;
    std::sort(v.begin(), v.end());
    const int n = static_cast<int>(v.size());
    if (n == 0) return s;
    s.mean_mw = sorted_sum(v) / n;
    std::vector<double> sq;
    sq.reserve(n);
    for (double x : v) sq.push_back((x - s.mean_mw) * (x - s.mean_mw));
    s.stderr_mw = n > 1 ? std::sqrt(sorted_sum(sq) / (n - 1) / n) : 0.0;
    s.max_mw = v.back();
    s.p50_mw = nearest_rank(v, 0.5);
    s.p90_mw = nearest_rank(v, 0.9);
    s.p99_mw = nearest_rank(v, 0.99);
    for (double x : v) s.nonzero += x > 0.0;
    bins = std::max(1, bins);
    double top = s.max_mw > 0.0 ? s.max_mw : 1.0;
    s.hist_counts.assign(bins, 0);
    for (int b = 0; b <= bins; ++b) s.hist_edges.push_back(top * b / bins);
    for (double x : v) {
        int b = std::min(bins - 1, static_cast<int>(x / top * bins));
        ++s.hist_counts[std::max(0, b)];
    }
    return s;
}

}  // namespace

CurtailmentSummary monte_carlo_curtailment(const Solution& sol, const ScenarioSet& test, const GridCase& grid,
                                           const NetworkOperators& ops, const EvalOptions& options) {
    check_dimension(sol, test);
    Curtailer cut(sol, grid, ops, options.paper_exact);
    std::vector<int> order = canonical_order(test);
    std::vector<CurtailmentResult> res(order.size());
    parallel_for(static_cast<int>(order.size()), options.threads, [&](int i) {
        res[i] = cut.solve(test.samples.row(order[i]).transpose());
    });
    std::vector<double> values;
    int infeasible = 0;
    for (const auto& r : res) {
        if (r.feasible) {
            values.push_back(r.total_mw);
        } else {
            ++infeasible;
        }
    }
    return summarize(values, infeasible, options.histogram_bins);
}

EvaluationReport oos_evaluate(const Solution& sol, const ScenarioSet& test, const GridCase& grid,
                              const NetworkOperators& ops, const EvalOptions& options) {
    check_dimension(sol, test);
    EvaluationReport rep;
    rep.method = sol.method;
    rep.eps = sol.eps;
    rep.lines_out = sol.lines_out;
    rep.opened_lines = sol.opened_lines();
    rep.objective = sol.objective;
    rep.nodes = sol.diag.nodes;
    rep.samples = test.size();
    const RecourseMaps Y = evaluation_maps(sol, grid, ops);
    const std::vector<NumericRow> rows = evaluation_rows(sol, grid, Y);
    const int R = static_cast<int>(rows.size());
    const int S = test.size();
    for (const auto& r : rows) rep.row_labels.push_back(r.label());

    std::vector<int> order = canonical_order(test);
    std::vector<std::vector<char>> viol(S, std::vector<char>(R, 0));
    std::vector<double> sums(S, 0.0);
    std::vector<CurtailmentResult> curt(options.curtailment ? S : 0);
    std::unique_ptr<Curtailer> cut;
    if (options.curtailment) cut = std::make_unique<Curtailer>(sol, grid, ops, options.paper_exact);
    parallel_for(S, options.threads, [&](int i) {
        Eigen::VectorXd xi = test.samples.row(order[i]).transpose();
        sums[i] = xi.sum();
        for (int r = 0; r < R; ++r) viol[i][r] = rows[r].a.dot(xi) > rows[r].b + options.tol;
        if (cut) curt[i] = cut->solve(xi);
    });

    std::vector<long> count(R, 0);
    long joint = 0;
    for (int i = 0; i < S; ++i) {
        bool any = false;
        for (int r = 0; r < R; ++r) {
            count[r] += viol[i][r];
            any = any || viol[i][r];
        }
        joint += any;
    }
    for (int r = 0; r < R; ++r) {
        double rate = S > 0 ? static_cast<double>(count[r]) / S : 0.0;
        rep.row_rates.push_back(rate);
        rep.max_row_rate = std::max(rep.max_row_rate, rate);
    }
    rep.average_rate = R > 0 ? sorted_sum(rep.row_rates) / R : 0.0;
    rep.joint_rate = S > 0 ? static_cast<double>(joint) / S : 0.0;
    rep.oos_cost = dispatch_cost(sol, grid, S > 0 ? sorted_sum(sums) / S : 0.0);

    if (cut) {
        std::vector<double> values;
        int infeasible = 0;
        for (const auto& r : curt) {
            if (r.feasible) {
                values.push_back(r.total_mw);
            } else {
                ++infeasible;
            }
        }
        rep.has_curtailment = true;
        rep.curtailment = summarize(values, infeasible, options.histogram_bins);
    }

    // Re-solve a fraction of the scenarios with the dc equations.
    std::vector<bool> closed(sol.x.z.begin(), sol.x.z.end());
    if (options.cross_check_fraction > 0.0 && is_connected(grid, closed)) {
        const int stride = std::max(1, static_cast<int>(std::lround(1.0 / options.cross_check_fraction)));
        const Eigen::MatrixXd F = placement_matrix(grid);
        for (int i = 0; i < S; i += stride) {
            Eigen::VectorXd xi = test.samples.row(order[i]).transpose();
            Eigen::VectorXd inj = sol.x.gamma * xi.sum() - F * xi;
            Eigen::VectorXd th = dc_angles(grid, ops, sol.x.z, inj);
            rep.cross_check_error = std::max(rep.cross_check_error, (Y.Y_theta * xi - th).cwiseAbs().maxCoeff());
            ++rep.cross_checked;
        }
    }
    return rep;
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

nlohmann::json mat_json(const Eigen::MatrixXd& m) {
    nlohmann::json out = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) out.push_back(vec_json(m.row(i).transpose()));
    return out;
}

Eigen::VectorXd json_vec(const nlohmann::json& j) {
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

Eigen::MatrixXd json_mat(const nlohmann::json& j, int cols_if_empty) {
    if (j.empty()) return Eigen::MatrixXd(0, cols_if_empty);
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (static_cast<int>(j[i].size()) != cols) fail(ErrorKind::MalformedDocument, "ragged matrix in solution");
        for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::string format_line_list(const std::vector<int>& lines) {
    std::string s = "[";
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) s += ";";
        s += std::to_string(lines[i]);
    }
    return s + "]";
}

nlohmann::json solution_to_json(const Solution& sol) {
    nlohmann::json j;
    j["schema"] = kSolutionSchema;
    j["method"] = sol.method;
    j["eps"] = sol.eps;
    j["lines_out"] = sol.lines_out;
    j["objective"] = sol.objective;
    j["mu"] = vec_json(sol.mu);
    j["opened_lines"] = sol.opened_lines();
    nlohmann::json x;
    x["g"] = vec_json(sol.x.g);
    x["theta"] = vec_json(sol.x.theta);
    x["f"] = vec_json(sol.x.f);
    x["gamma"] = vec_json(sol.x.gamma);
    x["z"] = sol.x.z;
    j["first_stage"] = x;
    j["recourse"] = {{"Y_theta", mat_json(sol.Y.Y_theta)},
                     {"Y_f", mat_json(sol.Y.Y_f)},
                     {"sources", sol.Y.Y_theta.cols()}};
    const auto& d = sol.diag;
    j["diagnostics"] = {{"status", d.status},
                        {"bound", d.bound},
                        {"gap", d.gap},
                        {"nodes", d.nodes},
                        {"lp_iterations", d.lp_iterations},
                        {"cuts", d.cuts},
                        {"rounds", d.rounds},
                        {"max_soc_violation", d.max_soc_violation},
                        {"dual_bound_hits", d.dual_bound_hits},
                        {"bcd_iterations", d.bcd_iterations},
                        {"iteration_cap", d.iteration_cap},
                        {"objective_history", d.objective_history},
                        {"notes", d.notes}};
    j["units"] = "per unit on the case base; objective in $/h";
    return j;
}

Solution solution_from_json(const nlohmann::json& j) {
    try {
        if (j.value("schema", "") != kSolutionSchema) fail(ErrorKind::MalformedDocument, "not a solution document");
        Solution sol;
        sol.method = j.at("method").get<std::string>();
        sol.eps = j.at("eps").get<double>();
        sol.lines_out = j.at("lines_out").get<int>();
        sol.objective = j.at("objective").get<double>();
        sol.mu = json_vec(j.at("mu"));
        const auto& x = j.at("first_stage");
        sol.x.g = json_vec(x.at("g"));
        sol.x.theta = json_vec(x.at("theta"));
        sol.x.f = json_vec(x.at("f"));
        sol.x.gamma = json_vec(x.at("gamma"));
        sol.x.z = x.at("z").get<std::vector<int>>();
        const auto& y = j.at("recourse");
        const int K = y.at("sources").get<int>();
        sol.Y.Y_theta = json_mat(y.at("Y_theta"), K);
        sol.Y.Y_f = json_mat(y.at("Y_f"), K);
        if (sol.Y.Y_theta.rows() == 0) sol.Y.Y_theta = Eigen::MatrixXd::Zero(sol.x.g.size(), K);
        if (sol.Y.Y_f.rows() == 0) sol.Y.Y_f = Eigen::MatrixXd::Zero(sol.x.z.size(), K);
        const auto& d = j.at("diagnostics");
        sol.diag.status = d.at("status").get<std::string>();
        sol.diag.bound = d.at("bound").get<double>();
        sol.diag.gap = d.at("gap").get<double>();
        sol.diag.nodes = d.at("nodes").get<long>();
        sol.diag.lp_iterations = d.at("lp_iterations").get<long>();
        sol.diag.cuts = d.at("cuts").get<int>();
        sol.diag.rounds = d.at("rounds").get<int>();
        sol.diag.max_soc_violation = d.at("max_soc_violation").get<double>();
        sol.diag.dual_bound_hits = d.at("dual_bound_hits").get<int>();
        sol.diag.bcd_iterations = d.at("bcd_iterations").get<int>();
        sol.diag.iteration_cap = d.at("iteration_cap").get<bool>();
        sol.diag.objective_history = d.at("objective_history").get<std::vector<double>>();
        sol.diag.notes = d.at("notes").get<std::vector<std::string>>();
        const auto n = sol.x.g.size();
        if (sol.x.theta.size() != static_cast<long>(n) || sol.x.gamma.size() != static_cast<long>(n) ||
            sol.x.f.size() != static_cast<long>(sol.x.z.size()) || sol.Y.Y_theta.rows() != static_cast<long>(n) ||
            sol.Y.Y_f.rows() != static_cast<long>(sol.x.z.size())) {
            fail(ErrorKind::MalformedDocument, "solution arrays have inconsistent lengths");
        }
        return sol;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::MalformedDocument, std::string("solution document: ") + e.what());
    }
}

nlohmann::json report_to_json(const EvaluationReport& r) {
    nlohmann::json j;
    j["schema"] = kReportSchema;
    j["method"] = r.method;
    j["eps"] = r.eps;
    j["lines_out"] = r.lines_out;
    j["opened_lines"] = r.opened_lines;
    j["switching"] = format_line_list(r.opened_lines);
    j["objective"] = r.objective;
    j["nodes"] = r.nodes;
    j["samples"] = r.samples;
    j["oos_cost"] = r.oos_cost;
    j["violation"] = {{"average_rate", r.average_rate},
                      {"max_row_rate", r.max_row_rate},
                      {"joint_rate", r.joint_rate},
                      {"tolerance", 1e-7}};
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < r.row_labels.size(); ++i) {
        rows.push_back({{"row", r.row_labels[i]}, {"rate", r.row_rates[i]}});
    }
    j["rows"] = rows;
    if (r.has_curtailment) {
        const auto& c = r.curtailment;
        j["curtailment_mw"] = {{"scenarios", c.scenarios},   {"infeasible", c.infeasible},
                               {"nonzero", c.nonzero},       {"mean", c.mean_mw},
                               {"stderr", c.stderr_mw},      {"max", c.max_mw},
                               {"p50", c.p50_mw},            {"p90", c.p90_mw},
                               {"p99", c.p99_mw},            {"hist_edges", c.hist_edges},
                               {"hist_counts", c.hist_counts}};
    }
    j["cross_check"] = {{"scenarios", r.cross_checked}, {"max_angle_error", r.cross_check_error}};
    return j;
}

std::string report_csv(const EvaluationReport& r) {
    std::string out =
        "method,eps,lines_out,switching,nodes,objective,oos_cost,avg_violation_rate,max_row_violation_rate,"
        "joint_violation_rate,curtailment_mean_mw,curtailment_stderr_mw,curtailment_infeasible,samples\n";
    out += r.method + "," + num(r.eps) + "," + std::to_string(r.lines_out) + "," + format_line_list(r.opened_lines) +
           "," + std::to_string(r.nodes) + "," + num(r.objective) + "," + num(r.oos_cost) + "," +
           num(r.average_rate) + "," + num(r.max_row_rate) + "," + num(r.joint_rate) + ",";
    if (r.has_curtailment) {
        out += num(r.curtailment.mean_mw) + "," + num(r.curtailment.stderr_mw) + "," +
               std::to_string(r.curtailment.infeasible);
    } else {
        out += ",,";
    }
    out += "," + std::to_string(r.samples) + "\n";
    return out;
}

}  // namespace drccots
