#pragma once

#include <functional>
#include <string>
#include <vector>

#include "drccots/lp_solver.hpp"
#include "drccots/model.hpp"

namespace drccots {

enum class MilpStatus { Optimal, Feasible, Infeasible, NodeLimit };

const char* milp_status_name(MilpStatus status);

struct MilpOptions {
    double gap_tol = 1e-2;
    long node_limit = 0;       // 0 = unlimited
    double time_limit = 0.0;   // seconds, 0 = unlimited
    double int_tol = 1e-6;
    double feas_tol = 1e-6;    // acceptance tolerance for heuristic incumbents
    int max_cut_rounds = 200;  // callback re-solves per node
    bool rounding_heuristic = true;
    LpOptions lp;
};

struct Cut {
    std::string name;
    std::vector<Term> terms;
    Sense sense = Sense::Le;
    double rhs = 0.0;
};

// Called with every integral candidate. Returning cuts rejects the candidate;
// the cuts are added globally and the node is re-solved.
using IncumbentCallback = std::function<std::vector<Cut>(const std::vector<double>& x)>;

struct MilpResult {
    MilpStatus status = MilpStatus::Infeasible;
    std::vector<double> x;
    double objective = 0.0;
    double bound = 0.0;
    double gap = 0.0;
    long nodes = 0;
    long lp_iterations = 0;
    int cuts_added = 0;
    double wall_time = 0.0;
    bool limit_reached = false;
};

MilpResult solve_milp(const MilpModel& model, const MilpOptions& options = {},
                      const IncumbentCallback& on_incumbent = {});

// Seam for swapping in a different engine; the embedded one is the default.
class MilpBackend {
public:
    virtual ~MilpBackend() = default;
    virtual std::string name() const = 0;
    virtual MilpResult solve(const MilpModel& model, const MilpOptions& options,
                             const IncumbentCallback& on_incumbent) = 0;
};

class EmbeddedBackend : public MilpBackend {
public:
    std::string name() const override { return "embedded"; }
    MilpResult solve(const MilpModel& model, const MilpOptions& options,
                     const IncumbentCallback& on_incumbent) override {
        return solve_milp(model, options, on_incumbent);
    }
};

}  // namespace drccots
