#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "drccots/case_model.hpp"
#include "drccots/reformulate.hpp"
#include "drccots/two_stage.hpp"
#include "drccots/uncertainty.hpp"

namespace drccots {

// a^T xi <= b with the first-stage decisions substituted.
struct NumericRow {
    RowKind kind = RowKind::ReserveUpper;
    int index = 0;
    Eigen::VectorXd a;
    double b = 0.0;

    std::string label() const;
};

// Recourse maps used for evaluation: recomputed from (z, gamma) when the
// topology is connected, otherwise the stored ones.
RecourseMaps evaluation_maps(const Solution& sol, const GridCase& grid, const NetworkOperators& ops);

// Rows at generator buses (reserve, generation), non-slack buses (angle) and
// closed lines (flow), in that order.
std::vector<NumericRow> evaluation_rows(const Solution& sol, const GridCase& grid, const RecourseMaps& Y);

// c^T g + q^T gamma * mean_sum in $/h.
double dispatch_cost(const Solution& sol, const GridCase& grid, double mean_sum);

struct CurtailmentResult {
    bool feasible = true;
    Eigen::VectorXd xi_c;  // per unit
    double total_mw = 0.0;
};

// Minimum L1 curtailment restoring the angle and flow limits at one scenario.
class Curtailer {
public:
    Curtailer(const Solution& sol, const GridCase& grid, const NetworkOperators& ops, bool paper_exact = false);
    CurtailmentResult solve(const Eigen::VectorXd& xi) const;
    // Largest angle or flow violation at xi, zero when all rows hold.
    double violation(const Eigen::VectorXd& xi) const;

private:
    std::vector<NumericRow> rows_;
    double base_mva_ = 100.0;
    bool paper_exact_ = false;
};

CurtailmentResult curtailment(const Solution& sol, const Eigen::VectorXd& xi, const GridCase& grid,
                              const NetworkOperators& ops, bool paper_exact = false);

struct CurtailmentSummary {
    int scenarios = 0;
    int infeasible = 0;
    int nonzero = 0;
    double mean_mw = 0.0;
    double stderr_mw = 0.0;
    double max_mw = 0.0;
    double p50_mw = 0.0;
    double p90_mw = 0.0;
    double p99_mw = 0.0;
    std::vector<double> hist_edges;
    std::vector<int> hist_counts;
};

struct EvalOptions {
    double tol = 1e-7;
    bool curtailment = true;
    bool paper_exact = false;
    int threads = 1;
    double cross_check_fraction = 0.01;
    int histogram_bins = 20;
};

struct EvaluationReport {
    std::string method;
    double eps = 0.0;
    int lines_out = 0;
    std::vector<int> opened_lines;
    double objective = 0.0;
    long nodes = 0;
    int samples = 0;
    std::vector<std::string> row_labels;
    std::vector<double> row_rates;
    double average_rate = 0.0;  // mean over rows of the per-row frequency
    double max_row_rate = 0.0;
    double joint_rate = 0.0;    // scenarios violating any row
    double oos_cost = 0.0;      // $/h
    bool has_curtailment = false;
    CurtailmentSummary curtailment;
    int cross_checked = 0;
    double cross_check_error = 0.0;  // rad, Y-map angles against a dc re-solve
};

CurtailmentSummary monte_carlo_curtailment(const Solution& sol, const ScenarioSet& test, const GridCase& grid,
                                           const NetworkOperators& ops, const EvalOptions& options = {});

EvaluationReport oos_evaluate(const Solution& sol, const ScenarioSet& test, const GridCase& grid,
                              const NetworkOperators& ops, const EvalOptions& options = {});

// Files. Wall times are kept out so equal runs give equal bytes.
inline constexpr const char* kSolutionSchema = "drccots.solution/1";
inline constexpr const char* kReportSchema = "drccots.report/1";

nlohmann::json solution_to_json(const Solution& sol);
Solution solution_from_json(const nlohmann::json& doc);
nlohmann::json report_to_json(const EvaluationReport& report);
std::string report_csv(const EvaluationReport& report);

// "[9;18]"
std::string format_line_list(const std::vector<int>& lines);

}  // namespace drccots
