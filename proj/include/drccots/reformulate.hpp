#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "drccots/case_model.hpp"
#include "drccots/milp.hpp"
#include "drccots/model.hpp"
#include "drccots/two_stage.hpp"
#include "drccots/uncertainty.hpp"

namespace drccots {

struct BuildOptions {
    std::map<std::string, double> eps_override;  // keyed by CcRow::label()
    std::optional<Polytope> support;             // default: sample box with margin
    double support_margin = 0.1;
    double dual_bound = 1e4;                     // bound on the MAD dual block variables
    bool dr_objective = false;
    bool tighten_bounds = true;  // LP bound tightening of the recourse maps
};

struct BuiltModel {
    MilpModel model;
    DecisionLayout layout;
    std::vector<CcRow> rows;  // folded, trivially satisfied rows dropped
    std::string method;
    double eps = 0.0;
    int lines_out = 0;
    Eigen::VectorXd mu;       // mean entering the recourse cost
    Eigen::MatrixXd F;
    Polytope support;
    // gauss only
    Eigen::MatrixXd Sigma;
    double quantile = 0.0;
    // mad only: indices of the dual block variables and their bound
    std::vector<int> dual_vars;
    double dual_bound = 0.0;
};

struct SolveDiagnostics {
    std::string status = "Infeasible";
    double bound = 0.0;
    double gap = 0.0;
    long nodes = 0;
    long lp_iterations = 0;
    int cuts = 0;
    int rounds = 0;             // gauss outer rounds
    double max_soc_violation = 0.0;
    int dual_bound_hits = 0;
    int bcd_iterations = 0;
    bool iteration_cap = false;
    std::vector<double> objective_history;
    double wall_time = 0.0;
    std::vector<std::string> notes;
};

struct Solution {
    std::string method;
    double eps = 0.0;
    int lines_out = 0;
    FirstStage x;
    RecourseMaps Y;
    double objective = 0.0;  // $/h
    Eigen::VectorXd mu;      // per unit, the mean used in the recourse cost
    SolveDiagnostics diag;
    std::vector<double> raw;  // solver vector, empty when read from a file

    bool has_solution() const { return x.g.size() > 0; }
    std::vector<int> opened_lines() const;  // 1-based line positions
};

struct SolveOptions {
    MilpOptions milp;
    bool islanding_cuts = true;
    int max_rounds = 50;     // gauss outer rounds
    double soc_tol = 1e-6;   // relative SOC violation target
    int threads = 1;         // bcd step 3
};

BuiltModel build_deterministic(const GridCase& grid, const NetworkOperators& ops, int lines_out);

BuiltModel build_saa(const GridCase& grid, const NetworkOperators& ops, const ScenarioSet& scenarios, double eps,
                     int lines_out, const Eigen::MatrixXd& F, const BuildOptions& opts = {});

BuiltModel build_gaussian(const GridCase& grid, const NetworkOperators& ops, const Eigen::VectorXd& mu,
                          const Eigen::MatrixXd& Sigma, double eps, int lines_out, const Eigen::MatrixXd& F,
                          const BuildOptions& opts = {});

BuiltModel build_mad(const GridCase& grid, const NetworkOperators& ops, const Eigen::VectorXd& mu,
                     const Eigen::VectorXd& sigma, const Polytope& support, double eps, int lines_out,
                     const Eigen::MatrixXd& F, const BuildOptions& opts = {});

BuiltModel build_wasserstein(const GridCase& grid, const NetworkOperators& ops, const ScenarioSet& scenarios,
                             double delta, double eps, int lines_out, const Eigen::MatrixXd& F,
                             const BuildOptions& opts = {});

// Standard normal quantile.
double normal_quantile(double p);

// Tangent cuts for  mu^T a(x) + z ||Sigma^{1/2} a(x)|| <= b(x).
class GaussianCutGenerator {
public:
    GaussianCutGenerator(std::vector<CcRow> rows, Eigen::VectorXd mu, Eigen::MatrixXd Sigma);
    std::vector<Cut> separate(const std::vector<double>& x, double tol) const;
    double max_relative_violation(const std::vector<double>& x) const;

private:
    std::vector<CcRow> rows_;
    std::vector<double> z_;
    Eigen::VectorXd mu_;
    Eigen::MatrixXd Sigma_;
    mutable long serial_ = 0;
};

// Adds the SOC rows as cuts until converged; used by solve() for gauss models.
MilpResult solve_with_soc_cuts(MilpModel& model, const GaussianCutGenerator& gen, const SolveOptions& options,
                               const IncumbentCallback& extra, int& rounds, double& final_violation);

// Worst-case P(a^T xi <= b) over the mean-MAD set with support.
double worst_case_probability(const Eigen::VectorXd& a, double b, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& sigma, const Polytope& support);

struct WorstCaseDual {
    double value = 0.0;
    double lambda = 0.0;
};

// Dual LP with lambda restricted to [lambda_lo, lambda_hi]; no shortcut checks.
WorstCaseDual worst_case_dual(const Eigen::VectorXd& a, double b, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& sigma, const Polytope& support, double lambda_lo,
                              double lambda_hi);

Solution solve(BuiltModel& built, const GridCase& grid, const NetworkOperators& ops, const SolveOptions& options);

struct BcdOptions {
    double omega = 1e-3;
    int t_max = 20;
    SolveOptions solve;
    BuildOptions build;
};

Solution solve_multimodal_bcd(const GridCase& grid, const NetworkOperators& ops, const MultiMadSpec& spec, double eps,
                              int lines_out, const Eigen::MatrixXd& F, const BcdOptions& options = {});

// Pooled single-mode set covering the mixture.
MeanMadSpec pooled_spec(const MultiMadSpec& spec);

}  // namespace drccots
