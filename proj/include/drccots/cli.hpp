#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "drccots/errors.hpp"
#include "drccots/evaluate.hpp"
#include "drccots/reformulate.hpp"

namespace drccots {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kCaseSchema = "drccots.case/1";
inline constexpr const char* kScenarioSchema = "drccots.scenarios/1";

struct RunConfig {
    std::string case_path;
    std::string scenarios;   // training samples
    std::string ambiguity;   // ambiguity.json sidecar
    std::string test;        // test samples
    std::string solution;    // input solution for evaluate / curtail
    std::string out_dir = ".";
    std::string method = "mad";
    double eps = 0.05;
    int lines_out = 1;
    double radius = 0.0;     // wass
    int modes = 2;           // mad-multi
    double omega = 1e-3;
    int t_max = 20;
    unsigned long long seed = 1;
    double gap_tol = 1e-2;
    long node_limit = 0;
    double flow_limit_scale = 1.0;
    bool paper_exact = false;
    int threads = 1;
    double support_margin = 0.1;
    std::string units = "mw";  // scenario and sidecar values: mw or pu
    std::string wind_buses;    // "3,5" overrides the case file
    bool curtailment = true;
    std::string sweep_eps = "0.05,0.1";
    std::string sweep_lo = "1";
};

nlohmann::json config_to_json(const RunConfig& c);
// Keys missing from the document keep their current value.
void apply_config_json(RunConfig& c, const nlohmann::json& doc);
void validate_config(const RunConfig& c, const std::string& command);

// "a:step:b" or "a,b,c".
std::vector<double> parse_grid(const std::string& text);

// Exit code for an error kind: 2 infeasible, 3 limit or numerical, 4 input.
int exit_code_for(ErrorKind kind);

// Status of a solve mapped to an exit code.
int exit_code_for(const Solution& sol);

// Entry point of the drccots binary. Messages go to out, error JSON to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace drccots
