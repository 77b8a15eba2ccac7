#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "drccots/model.hpp"

namespace drccots {

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

const char* lp_status_name(LpStatus status);

enum class BasisStatus : std::uint8_t { Basic, AtLower, AtUpper, Fixed };

struct LpOptions {
    double primal_tol = 1e-9;
    double dual_tol = 1e-7;
    double pivot_tol = 1e-9;
    int max_iterations = 1000000;
    int refactor_interval = 64;
    bool perturb = true;
};

struct LpResult {
    LpStatus status = LpStatus::Infeasible;
    std::vector<double> x;             // structural values
    std::vector<double> row_activity;  // A x
    std::vector<double> row_duals;
    std::vector<double> reduced_costs;
    double objective = 0.0;
    long iterations = 0;
    double primal_residual = 0.0;  // max bound/row violation, unscaled
    double dual_residual = 0.0;    // max reduced-cost sign violation, unscaled
    double complementarity = 0.0;
    std::vector<BasisStatus> basis;  // structurals then logicals
};

// Bounded dual simplex with a primal cleanup phase. Every structural
// variable must have finite bounds. The engine keeps its basis between
// calls so bound changes and appended rows warm start.
class LpEngine {
public:
    explicit LpEngine(const LpOptions& options = {});
    ~LpEngine();
    LpEngine(LpEngine&&) noexcept;
    LpEngine& operator=(LpEngine&&) noexcept;

    void load(const MilpModel& model);
    int num_cols() const;
    int num_rows() const;

    void set_col_bounds(int j, double lb, double ub);
    double col_lower(int j) const;
    double col_upper(int j) const;
    int add_row(const std::vector<Term>& terms, Sense sense, double rhs);

    void set_basis(const std::vector<BasisStatus>& basis);
    std::vector<BasisStatus> basis() const;

    LpResult solve();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

LpResult solve_lp(const MilpModel& model, const std::vector<BasisStatus>* warm_start = nullptr,
                  const LpOptions& options = {});

}  // namespace drccots
