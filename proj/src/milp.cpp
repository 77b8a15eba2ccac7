#include "drccots/milp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <queue>

#include "drccots/errors.hpp"

namespace drccots {

const char* milp_status_name(MilpStatus status) {
    switch (status) {
        case MilpStatus::Optimal: return "Optimal";
        case MilpStatus::Feasible: return "Feasible";
        case MilpStatus::Infeasible: return "Infeasible";
        case MilpStatus::NodeLimit: return "NodeLimit";
    }
    return "Unknown";
}

namespace {

struct Node {
    long id = 0;
    int depth = 0;
    double bound = -kInf;
    std::vector<std::pair<int, signed char>> fixes;  // binary position -> value
    std::shared_ptr<const std::vector<BasisStatus>> basis;
};

struct NodeOrder {
    bool operator()(const Node& a, const Node& b) const {
        if (a.bound != b.bound) return a.bound > b.bound;
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.id > b.id;
    }
};

// Rows touching each column, for the rounding heuristic.
struct ColumnRows {
    std::vector<std::vector<std::pair<int, double>>> rows;
    explicit ColumnRows(const MilpModel& model) : rows(model.num_vars()) {
        for (int i = 0; i < model.num_cons(); ++i) {
            for (const auto& t : model.cons[i].terms) rows[t.var].push_back({i, t.coef});
        }
    }
};

double row_violation(const Constraint& c, double activity) {
    switch (c.sense) {
        case Sense::Le: return std::max(0.0, activity - c.rhs);
        case Sense::Ge: return std::max(0.0, c.rhs - activity);
        case Sense::Eq: return std::abs(activity - c.rhs);
    }
    return 0.0;
}

double row_scale(const Constraint& c) {
    double s = 0.0;
    for (const auto& t : c.terms) s = std::max(s, std::abs(t.coef));
    return s > 0.0 ? s : 1.0;
}

}  // namespace

MilpResult solve_milp(const MilpModel& model, const MilpOptions& options, const IncumbentCallback& on_incumbent) {
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    model.validate();
    MilpResult result;
    const std::vector<int> bins = model.binaries();
    const int nb = static_cast<int>(bins.size());
    std::vector<signed char> root_state(nb, -1);
    for (int k = 0; k < nb; ++k) {
        const auto& v = model.vars[bins[k]];
        if (v.lb == v.ub) root_state[k] = static_cast<signed char>(v.lb > 0.5);
        if (v.lb > 0.0 && v.ub < 1.0) {
            result.status = MilpStatus::Infeasible;
            return result;
        }
    }
    std::vector<signed char> applied = root_state;

    LpEngine engine(options.lp);
    engine.load(model);
    ColumnRows column_rows(model);
    std::vector<Constraint> cut_rows;  // cuts appended after the model rows

    double incumbent = kInf;
    std::vector<double> best_x;
    long next_id = 0;
    std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
    Node root;
    root.id = next_id++;
    open.push(root);

    auto prune_threshold = [&] {
        if (!std::isfinite(incumbent)) return kInf;
        return incumbent - std::max(options.gap_tol * std::max(1.0, std::abs(incumbent)), 1e-9);
    };

    auto apply_node = [&](const Node& node) {
        std::vector<signed char> target = root_state;
        for (const auto& [k, v] : node.fixes) target[k] = v;
        for (int k = 0; k < nb; ++k) {
            if (target[k] == applied[k]) continue;
            int j = bins[k];
            if (target[k] < 0) {
                engine.set_col_bounds(j, model.vars[j].lb, model.vars[j].ub);
            } else {
                engine.set_col_bounds(j, target[k], target[k]);
            }
            applied[k] = target[k];
        }
    };

    auto all_constraints_ok = [&](const std::vector<double>& x) {
        for (int j = 0; j < model.num_vars(); ++j) {
            if (x[j] < model.vars[j].lb - options.feas_tol || x[j] > model.vars[j].ub + options.feas_tol) return false;
        }
        auto check = [&](const Constraint& c) {
            double a = 0.0;
            for (const auto& t : c.terms) a += t.coef * x[t.var];
            return row_violation(c, a) <= options.feas_tol * row_scale(c);
        };
        for (const auto& c : model.cons) {
            if (!check(c)) return false;
        }
        for (const auto& c : cut_rows) {
            if (!check(c)) return false;
        }
        return true;
    };

    // Offers an integral point; returns true if it became the incumbent.
    auto offer = [&](std::vector<double> x, bool& cuts_added, bool use_callback = true) -> bool {
        cuts_added = false;
        for (int j : bins) x[j] = std::round(x[j]);
        if (on_incumbent && use_callback) {
            auto cuts = on_incumbent(x);
            if (!cuts.empty()) {
                for (auto& c : cuts) {
                    engine.add_row(c.terms, c.sense, c.rhs);
                    Constraint row{c.name, c.terms, c.sense, c.rhs};
                    cut_rows.push_back(row);
                    ++result.cuts_added;
                }
                cuts_added = true;
                return false;
            }
        }
        double obj = model.objective_value(x);
        if (obj < incumbent - 1e-12 * std::max(1.0, std::abs(obj))) {
            incumbent = obj;
            best_x = std::move(x);
            return true;
        }
        return false;
    };

    // Greedy rounding of fractional binaries driven by row activities.
    auto try_rounding = [&](const std::vector<double>& lp_x, const std::vector<int>& frac) -> bool {
        std::vector<double> x = lp_x;
        std::vector<double> act(model.num_cons(), 0.0);
        for (int i = 0; i < model.num_cons(); ++i) {
            for (const auto& t : model.cons[i].terms) act[i] += t.coef * x[t.var];
        }
        std::vector<int> order = frac;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return std::abs(lp_x[bins[a]] - 0.5) > std::abs(lp_x[bins[b]] - 0.5);
        });
        for (int k : order) {
            int j = bins[k];
            double best_v = std::round(x[j]);
            double best_cost = kInf;
            for (double v : {std::round(x[j]), 1.0 - std::round(x[j])}) {
                double cost = 0.0;
                for (const auto& [i, a] : column_rows.rows[j]) {
                    const auto& c = model.cons[i];
                    cost += row_violation(c, act[i] + a * (v - x[j])) / row_scale(c);
                }
                if (cost < best_cost - 1e-15) {
                    best_cost = cost;
                    best_v = v;
                }
            }
            for (const auto& [i, a] : column_rows.rows[j]) act[i] += a * (best_v - x[j]);
            x[j] = best_v;
        }
        if (!all_constraints_ok(x)) return false;
        bool cuts = false;
        return offer(std::move(x), cuts);
    };

    bool plunging = true;
    std::vector<Node> plunge_stack;
    while (!open.empty() || !plunge_stack.empty()) {
        if (options.node_limit > 0 && result.nodes >= options.node_limit) {
            result.limit_reached = true;
            break;
        }
        if (options.time_limit > 0.0 && elapsed() > options.time_limit) {
            result.limit_reached = true;
            break;
        }
        Node node;
        if (plunging && !plunge_stack.empty()) {
            node = std::move(plunge_stack.back());
            plunge_stack.pop_back();
        } else {
            if (!plunge_stack.empty()) {
                for (auto& n : plunge_stack) open.push(std::move(n));
                plunge_stack.clear();
            }
            node = open.top();
            open.pop();
        }
        if (node.bound >= prune_threshold()) continue;
        ++result.nodes;
        apply_node(node);
        if (node.basis) engine.set_basis(*node.basis);

        for (int round = 0; round <= options.max_cut_rounds; ++round) {
            LpResult lp = engine.solve();
            result.lp_iterations += lp.iterations;
            if (lp.status == LpStatus::Infeasible) break;
            if (lp.status != LpStatus::Optimal) {
                fail(ErrorKind::NumericalBreakdown,
                     "node " + std::to_string(node.id) + " LP ended with status " + lp_status_name(lp.status));
            }
            double bound = std::max(lp.objective, node.bound);
            if (bound >= prune_threshold()) break;

            int branch = -1;
            double best_frac = -1.0;
            std::vector<int> frac;
            for (int k = 0; k < nb; ++k) {
                double v = lp.x[bins[k]];
                double f = std::abs(v - std::round(v));
                if (f > options.int_tol) {
                    frac.push_back(k);
                    double score = 0.5 - std::abs(v - std::floor(v) - 0.5);
                    if (score > best_frac + 1e-12) {
                        best_frac = score;
                        branch = k;
                    }
                }
            }
            if (branch < 0) {
                // After the last cut round the candidate is taken as is.
                bool cuts = false;
                offer(lp.x, cuts, round < options.max_cut_rounds);
                if (cuts) continue;
                if (std::isfinite(incumbent)) plunging = false;
                break;
            }
            if (options.rounding_heuristic) {
                try_rounding(lp.x, frac);
                if (bound >= prune_threshold()) break;
            }
            auto basis = std::make_shared<const std::vector<BasisStatus>>(lp.basis);
            double v = lp.x[bins[branch]];
            signed char first = v >= 0.5 ? 1 : 0;
            Node child[2];
            for (int c = 0; c < 2; ++c) {
                child[c].id = next_id++;
                child[c].depth = node.depth + 1;
                child[c].bound = bound;
                child[c].fixes = node.fixes;
                child[c].fixes.push_back({branch, c == 0 ? first : static_cast<signed char>(1 - first)});
                child[c].basis = basis;
            }
            if (plunging && !std::isfinite(incumbent)) {
                plunge_stack.push_back(std::move(child[1]));
                plunge_stack.push_back(std::move(child[0]));
            } else {
                open.push(std::move(child[0]));
                open.push(std::move(child[1]));
            }
            break;
        }
        if (std::isfinite(incumbent)) plunging = false;
        // Stop early once the open bound is within tolerance.
        if (std::isfinite(incumbent) && plunge_stack.empty()) {
            double best_open = open.empty() ? incumbent : open.top().bound;
            double gap = (incumbent - best_open) / std::max(1.0, std::abs(incumbent));
            if (gap <= options.gap_tol) {
                while (!open.empty()) open.pop();
            }
        }
    }

    double best_open = incumbent;
    if (!open.empty()) best_open = std::min(best_open, open.top().bound);
    for (const auto& n : plunge_stack) best_open = std::min(best_open, n.bound);
    result.wall_time = elapsed();
    if (!std::isfinite(incumbent)) {
        result.status = result.limit_reached ? MilpStatus::NodeLimit : MilpStatus::Infeasible;
        result.bound = result.limit_reached ? best_open : kInf;
        return result;
    }
    result.x = best_x;
    result.objective = incumbent;
    result.bound = std::min(best_open, incumbent);
    result.gap = std::max(0.0, (incumbent - result.bound) / std::max(1.0, std::abs(incumbent)));
    result.status = result.limit_reached && result.gap > options.gap_tol ? MilpStatus::Feasible : MilpStatus::Optimal;
    return result;
}

}  // namespace drccots
