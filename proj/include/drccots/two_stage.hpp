#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "drccots/case_model.hpp"
#include "drccots/model.hpp"
#include "drccots/uncertainty.hpp"

namespace drccots {

// Variable indices of the first-stage decisions and the recourse maps.
struct DecisionLayout {
    int N = 0;
    int L = 0;
    int K = 0;
    std::vector<int> g, theta, f, z, gamma;
    std::vector<std::vector<int>> y_theta;  // N x K
    std::vector<std::vector<int>> y_f;      // L x K
    double y_theta_bound = 0.0;
};

enum class RowKind { ReserveUpper, ReserveLower, GenUpper, GenLower, AngleUpper, AngleLower, FlowUpper, FlowLower };

const char* row_kind_name(RowKind kind);

// Chance-constrained row  a(x)^T xi <= b(x).
struct CcRow {
    RowKind kind = RowKind::ReserveUpper;
    int index = 0;  // bus or line position
    std::vector<Affine> a;
    Affine b;
    double eps = 0.0;

    std::string label() const;
};

struct FirstStage {
    Eigen::VectorXd g, theta, f, gamma;  // per unit
    std::vector<int> z;
};

struct RecourseMaps {
    Eigen::MatrixXd Y_theta;  // N x K
    Eigen::MatrixXd Y_f;      // L x K
};

struct FlowDualBlock {
    std::vector<std::vector<int>> phi1, phi2;  // L x W variable indices
};

// Adds g, theta, f, z (and gamma, Y when K > 0) with the deterministic
// network constraints, the line-out budget and, for K > 0, the
// participation simplex and the open-line recourse linking.
DecisionLayout add_first_stage(MilpModel& model, const GridCase& grid, const NetworkOperators& ops, int K,
                               int lines_out);

// Two rows (upper and lower) per bus for reserve, generation and angle and
// per line for flow, in that order.
std::vector<CcRow> cc_row_set(const GridCase& grid, const DecisionLayout& layout);

// A * Y_f = gamma 1^T - F
void balance_equality_block(MilpModel& model, const NetworkOperators& ops, const DecisionLayout& layout,
                            const Eigen::MatrixXd& F);

// Robust big-M flow rows over the support, dualized with multipliers >= 0.
FlowDualBlock flow_dual_blocks(MilpModel& model, const GridCase& grid, const NetworkOperators& ops,
                               const DecisionLayout& layout, const Polytope& support);

// Angles with the slack fixed at zero for a connected topology.
Eigen::VectorXd dc_angles(const GridCase& grid, const NetworkOperators& ops, const std::vector<int>& z,
                          const Eigen::VectorXd& injection);

RecourseMaps recourse_matrices(const GridCase& grid, const NetworkOperators& ops, const std::vector<int>& z,
                               const Eigen::VectorXd& gamma, const Eigen::MatrixXd& F);

FirstStage read_first_stage(const DecisionLayout& layout, const std::vector<double>& x);
RecourseMaps read_recourse(const DecisionLayout& layout, const std::vector<double>& x);

}  // namespace drccots
