#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace drccots {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

struct Bus {
    int id = 0;
    double theta_min = -0.6;  // rad
    double theta_max = 0.6;
};

struct Line {
    int from = 0;
    int to = 0;
    double susceptance = 0.0;  // per unit
    double flow_max = 0.0;     // MW, lower limit is -flow_max
    bool switchable = true;
    std::optional<double> dtheta_max;  // rad, overrides the endpoint rule
};

struct Generator {
    int bus = 0;
    double pmin = 0.0;  // MW
    double pmax = 0.0;
    double rmin = 0.0;  // MW, <= 0
    double rmax = 0.0;  // MW, >= 0
    double cost = 0.0;  // $/MWh
    double recourse_cost = 0.0;
};

// Quantities are stored in document units (MW, $/MWh); builders convert to
// per unit on base_mva.
struct GridCase {
    std::string name;
    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<Generator> generators;
    std::map<int, double> loads;  // bus id -> MW
    int slack_bus = 0;
    double base_mva = 100.0;
    std::vector<int> wind_buses;  // bus of each uncertainty source

    int num_buses() const { return static_cast<int>(buses.size()); }
    int num_lines() const { return static_cast<int>(lines.size()); }
    int bus_index(int id) const;
    int slack_index() const { return bus_index(slack_bus); }
};

struct NetworkOperators {
    SparseMatrix A;  // N x L incidence, +1 at the from bus
    SparseMatrix K;  // L x N, row l = b_l (e_from - e_to)^T
    Eigen::VectorXd M;
    Eigen::VectorXd dtheta_max;
};

// Per-bus aggregates in per unit. Generators at one bus are summed.
struct BusData {
    Eigen::VectorXd gmin, gmax, rmin, rmax;
    Eigen::VectorXd cost, recourse_cost;  // $/MWh
    Eigen::VectorXd load;
    Eigen::VectorXd theta_min, theta_max;
    Eigen::VectorXd flow_max;  // per line
    std::vector<bool> has_generator;
};

GridCase parse_case(const std::string& document);
GridCase load_case_file(const std::string& path);
std::string serialize_case(const GridCase& grid);

struct MatpowerOptions {
    double theta_limit = 0.6;
    double reserve_fraction = 0.2;
    double unlimited_flow = 9999.0;
    double recourse_cost = 0.0;
};
GridCase parse_matpower(const std::string& text, const MatpowerOptions& options = {});

void validate_case(const GridCase& grid);
GridCase flow_limit_scale(const GridCase& grid, double factor);

Eigen::VectorXd default_dtheta_max(const GridCase& grid);
NetworkOperators build_operators(const GridCase& grid);
NetworkOperators build_operators(const GridCase& grid, const Eigen::VectorXd& dtheta_max);

BusData bus_data(const GridCase& grid);

// Connectivity of the subgraph formed by lines with closed[l] true.
bool is_connected(const GridCase& grid, const std::vector<bool>& closed);

// Placement matrix: column k is the unit vector of wind_buses[k].
Eigen::MatrixXd placement_matrix(const GridCase& grid);

}  // namespace drccots
