#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace drccots {

// Rows are samples, columns are uncertainty sources.
struct ScenarioSet {
    Eigen::MatrixXd samples;

    int size() const { return static_cast<int>(samples.rows()); }
    int dim() const { return static_cast<int>(samples.cols()); }
};

// {xi : U xi <= t}
struct Polytope {
    Eigen::MatrixXd U;
    Eigen::VectorXd t;

    int dim() const { return static_cast<int>(U.cols()); }
    int rows() const { return static_cast<int>(U.rows()); }
    bool contains(const Eigen::VectorXd& xi, double tol = 1e-9) const;
    bool strictly_contains(const Eigen::VectorXd& xi, double tol = 1e-12) const;
    // Axis-aligned bounding box, computed by LP for general polytopes.
    void bounding_box(Eigen::VectorXd& lower, Eigen::VectorXd& upper) const;
    // Extreme points of a box polytope (U = [I; -I]); empty if not a box.
    std::vector<Eigen::VectorXd> box_vertices() const;
    bool is_box() const;
};

Polytope box_polytope(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

// Largest ball radius inside the polytope; positive iff full-dimensional.
double chebyshev_radius(const Polytope& poly);

struct MadMoments {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;
};

struct GaussianFit {
    Eigen::VectorXd mu;
    Eigen::MatrixXd Sigma;
};

struct MadMode {
    double p = 1.0;
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;
    Polytope support;
};

struct EmpiricalSpec {
    ScenarioSet samples;
};
struct GaussianSpec {
    Eigen::VectorXd mu;
    Eigen::MatrixXd Sigma;
};
struct MeanMadSpec {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;
    Polytope support;
};
struct WassersteinSpec {
    double delta = 0.0;
    ScenarioSet samples;
    Polytope support;
};
struct MultiMadSpec {
    std::vector<MadMode> modes;
};

using AmbiguitySpec = std::variant<EmpiricalSpec, GaussianSpec, MeanMadSpec, WassersteinSpec, MultiMadSpec>;

ScenarioSet parse_scenarios(const std::string& csv);
ScenarioSet load_scenarios(const std::string& path);
std::string scenarios_to_csv(const ScenarioSet& s);

Polytope box_support(const ScenarioSet& s, double margin);
MadMoments moment_stats(const ScenarioSet& s);
GaussianFit fit_gaussian(const ScenarioSet& s);
MultiMadSpec partition_modes(const ScenarioSet& s, int m, std::uint64_t seed, double margin = 0.05);

// Reads the ambiguity.json sidecar; values are scaled by `scale`.
AmbiguitySpec parse_ambiguity(const std::string& document, double scale = 1.0);

void validate(const MeanMadSpec& spec);
void validate(const MultiMadSpec& spec);

}  // namespace drccots
