#include "drccots/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "drccots/errors.hpp"

namespace drccots {

namespace {

using json = nlohmann::json;

// One config field: json key, command-line flag and member pointer.
struct Field {
    std::string key;
    std::function<void(json&, const RunConfig&)> save;
    std::function<void(RunConfig&, const json&)> load;
    std::function<void(RunConfig&, const RunConfig&)> copy;
    std::function<CLI::Option*(CLI::App*, RunConfig&)> add;
};

template <typename T>
Field field(const std::string& key, T RunConfig::*m, const std::string& flag, const std::string& help) {
    Field f;
    f.key = key;
    f.save = [key, m](json& j, const RunConfig& c) { j[key] = c.*m; };
    f.load = [key, m](RunConfig& c, const json& j) {
        if (j.contains(key)) c.*m = j.at(key).get<T>();
    };
    f.copy = [m](RunConfig& to, const RunConfig& from) { to.*m = from.*m; };
    f.add = [m, flag, help](CLI::App* app, RunConfig& c) -> CLI::Option* {
        if constexpr (std::is_same_v<T, bool>) {
            return app->add_flag(flag, c.*m, help);
        } else {
            return app->add_option(flag, c.*m, help);
        }
    };
    return f;
}

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        field("case", &RunConfig::case_path, "--case", "case file (.json or MATPOWER .m)"),
        field("scenarios", &RunConfig::scenarios, "--scenarios", "training scenario CSV"),
        field("ambiguity", &RunConfig::ambiguity, "--ambiguity", "ambiguity.json sidecar"),
        field("test", &RunConfig::test, "--test", "test scenario CSV"),
        field("solution", &RunConfig::solution, "--solution", "solution.json to evaluate"),
        field("out", &RunConfig::out_dir, "--out", "output directory"),
        field("method", &RunConfig::method, "--method", "det, saa, gauss, mad, mad-multi or wass"),
        field("eps", &RunConfig::eps, "--eps", "risk level"),
        field("lines_out", &RunConfig::lines_out, "--lo", "number of lines that may open"),
        field("radius", &RunConfig::radius, "--radius", "Wasserstein radius (per unit)"),
        field("modes", &RunConfig::modes, "--modes", "number of modes for mad-multi"),
        field("omega", &RunConfig::omega, "--omega", "BCD stopping tolerance"),
        field("t_max", &RunConfig::t_max, "--t-max", "BCD iteration cap"),
        field("seed", &RunConfig::seed, "--seed", "seed for mode partitioning"),
        field("gap_tol", &RunConfig::gap_tol, "--gap", "relative MILP gap"),
        field("node_limit", &RunConfig::node_limit, "--node-limit", "branch-and-bound node limit, 0 = none"),
        field("flow_limit_scale", &RunConfig::flow_limit_scale, "--flow-limit-scale", "factor on every flow limit"),
        field("paper_exact", &RunConfig::paper_exact, "--paper-exact", "no upper bound on curtailment"),
        field("threads", &RunConfig::threads, "--threads", "worker threads for evaluation and BCD"),
        field("support_margin", &RunConfig::support_margin, "--support-margin", "relative margin of the sample box"),
        field("units", &RunConfig::units, "--units", "scenario units: mw or pu"),
        field("wind_buses", &RunConfig::wind_buses, "--wind-buses", "comma separated bus ids of the sources"),
        field("curtailment", &RunConfig::curtailment, "--curtailment,!--no-curtailment", "compute curtailment"),
        field("sweep_eps", &RunConfig::sweep_eps, "--sweep-eps", "risk levels, a:step:b or a,b,c"),
        field("sweep_lo", &RunConfig::sweep_lo, "--sweep-lo", "line-out budgets, a:step:b or a,b,c"),
    };
    return all;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed for " + path);
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::MalformedDocument, path + ": " + e.what());
    }
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

struct Inputs {
    GridCase grid;
    NetworkOperators ops;
    Eigen::MatrixXd F;
    double scale = 1.0;  // file units -> per unit
};

Inputs load_inputs(const RunConfig& cfg) {
    Inputs in;
    in.grid = load_case_file(cfg.case_path);
    if (!cfg.wind_buses.empty()) {
        in.grid.wind_buses.clear();
        for (double b : parse_grid(cfg.wind_buses)) in.grid.wind_buses.push_back(static_cast<int>(b));
        validate_case(in.grid);
    }
    if (cfg.flow_limit_scale != 1.0) in.grid = flow_limit_scale(in.grid, cfg.flow_limit_scale);
    in.ops = build_operators(in.grid);
    in.F = placement_matrix(in.grid);
    in.scale = cfg.units == "mw" ? 1.0 / in.grid.base_mva : 1.0;
    return in;
}

ScenarioSet load_set(const std::string& path, const Inputs& in) {
    ScenarioSet s = load_scenarios(path);
    s.samples *= in.scale;
    if (s.dim() != static_cast<int>(in.grid.wind_buses.size())) {
        fail(ErrorKind::DimensionMismatch, path + " has " + std::to_string(s.dim()) + " columns, the case has " +
                                               std::to_string(in.grid.wind_buses.size()) + " sources");
    }
    return s;
}

template <typename Spec>
std::optional<Spec> sidecar(const RunConfig& cfg, const Inputs& in) {
    if (cfg.ambiguity.empty()) return std::nullopt;
    AmbiguitySpec spec = parse_ambiguity(read_text(cfg.ambiguity), in.scale);
    if (!std::holds_alternative<Spec>(spec)) {
        fail(ErrorKind::InvalidArgument, "ambiguity sidecar type does not match method " + cfg.method);
    }
    return std::get<Spec>(spec);
}

ScenarioSet training(const RunConfig& cfg, const Inputs& in) {
    if (cfg.scenarios.empty()) fail(ErrorKind::InvalidArgument, "method " + cfg.method + " needs --scenarios");
    return load_set(cfg.scenarios, in);
}

Solution build_and_solve(const RunConfig& cfg, const Inputs& in, double eps, int lines_out) {
    SolveOptions so;
    so.milp.gap_tol = cfg.gap_tol;
    so.milp.node_limit = cfg.node_limit;
    so.threads = cfg.threads;
    BuildOptions bo;
    bo.support_margin = cfg.support_margin;
    const auto& g = in.grid;
    if (cfg.method == "det") {
        BuiltModel bm = build_deterministic(g, in.ops, lines_out);
        return solve(bm, g, in.ops, so);
    }
    if (in.F.cols() == 0) fail(ErrorKind::InvalidArgument, "the case has no uncertainty sources");
    if (cfg.method == "saa") {
        BuiltModel bm = build_saa(g, in.ops, training(cfg, in), eps, lines_out, in.F, bo);
        return solve(bm, g, in.ops, so);
    }
    if (cfg.method == "wass") {
        BuiltModel bm = build_wasserstein(g, in.ops, training(cfg, in), cfg.radius, eps, lines_out, in.F, bo);
        return solve(bm, g, in.ops, so);
    }
    if (cfg.method == "gauss") {
        GaussianSpec spec;
        if (auto s = sidecar<GaussianSpec>(cfg, in)) {
            spec = *s;
        } else {
            GaussianFit fit = fit_gaussian(training(cfg, in));
            spec = {fit.mu, fit.Sigma};
        }
        BuiltModel bm = build_gaussian(g, in.ops, spec.mu, spec.Sigma, eps, lines_out, in.F, bo);
        return solve(bm, g, in.ops, so);
    }
    if (cfg.method == "mad") {
        MeanMadSpec spec;
        if (auto s = sidecar<MeanMadSpec>(cfg, in)) {
            spec = *s;
        } else {
            ScenarioSet s2 = training(cfg, in);
            MadMoments m = moment_stats(s2);
            spec = {m.mu, m.sigma, box_support(s2, cfg.support_margin)};
        }
        BuiltModel bm = build_mad(g, in.ops, spec.mu, spec.sigma, spec.support, eps, lines_out, in.F, bo);
        return solve(bm, g, in.ops, so);
    }
    if (cfg.method == "mad-multi") {
        MultiMadSpec spec;
        if (auto s = sidecar<MultiMadSpec>(cfg, in)) {
            spec = *s;
        } else {
            spec = partition_modes(training(cfg, in), cfg.modes, cfg.seed, cfg.support_margin);
        }
        BcdOptions bcd;
        bcd.omega = cfg.omega;
        bcd.t_max = cfg.t_max;
        bcd.solve = so;
        bcd.build = bo;
        return solve_multimodal_bcd(g, in.ops, spec, eps, lines_out, in.F, bcd);
    }
    fail(ErrorKind::InvalidArgument, "unknown method " + cfg.method);
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + cfg.out_dir);
    return (dir / name).string();
}

class Log {
public:
    Log(std::ostream& out, const RunConfig& cfg, const std::string& name) : out_(out), path_(out_path(cfg, name)) {}
    ~Log() {
        try {
            write_text(path_, text_.str());
        } catch (...) {
        }
    }
    void line(const std::string& s) {
        out_ << s << "\n";
        text_ << s << "\n";
    }

private:
    std::ostream& out_;
    std::string path_;
    std::ostringstream text_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_solve(const RunConfig& cfg, std::ostream& out) {
    auto t0 = std::chrono::steady_clock::now();
    Inputs in = load_inputs(cfg);
    Log log(out, cfg, "solve.log");
    log.line("method " + cfg.method + "  eps " + num(cfg.eps) + "  lines_out " + std::to_string(cfg.lines_out));
    Solution sol = build_and_solve(cfg, in, cfg.eps, cfg.lines_out);
    log.line("status " + sol.diag.status + "  objective " + num(sol.objective) + " $/h  gap " + num(sol.diag.gap) +
             "  nodes " + std::to_string(sol.diag.nodes));
    log.line("switching " + format_line_list(sol.opened_lines()));
    if (sol.method == "mad-multi") {
        log.line("bcd iterations " + std::to_string(sol.diag.bcd_iterations) +
                 (sol.diag.iteration_cap ? "  (iteration cap reached)" : ""));
    }
    for (const auto& n : sol.diag.notes) log.line("note " + n);
    if (sol.has_solution()) {
        json doc = solution_to_json(sol);
        doc["config"] = config_to_json(cfg);
        write_text(out_path(cfg, "solution.json"), doc.dump(2) + "\n");
    }
    log.line("wall time " + num(seconds_since(t0)) + " s");
    return exit_code_for(sol);
}

Solution read_solution(const RunConfig& cfg) {
    if (cfg.solution.empty()) fail(ErrorKind::InvalidArgument, "--solution is required");
    return solution_from_json(parse_json_file(cfg.solution));
}

EvalOptions eval_options(const RunConfig& cfg) {
    EvalOptions o;
    o.curtailment = cfg.curtailment;
    o.paper_exact = cfg.paper_exact;
    o.threads = cfg.threads;
    return o;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
    auto t0 = std::chrono::steady_clock::now();
    Inputs in = load_inputs(cfg);
    Solution sol = read_solution(cfg);
    if (cfg.test.empty()) fail(ErrorKind::InvalidArgument, "--test is required");
    ScenarioSet test = load_set(cfg.test, in);
    Log log(out, cfg, "evaluate.log");
    EvaluationReport rep = oos_evaluate(sol, test, in.grid, in.ops, eval_options(cfg));
    json doc = report_to_json(rep);
    doc["config"] = config_to_json(cfg);
    write_text(out_path(cfg, "report.json"), doc.dump(2) + "\n");
    write_text(out_path(cfg, "report.csv"), report_csv(rep));
    log.line("method " + rep.method + "  switching " + format_line_list(rep.opened_lines) + "  samples " +
             std::to_string(rep.samples));
    log.line("oos cost " + num(rep.oos_cost) + " $/h  average violation " + num(rep.average_rate) + "  max row " +
             num(rep.max_row_rate) + "  joint " + num(rep.joint_rate));
    if (rep.has_curtailment) {
        log.line("curtailment mean " + num(rep.curtailment.mean_mw) + " MW  stderr " + num(rep.curtailment.stderr_mw) +
                 "  infeasible " + std::to_string(rep.curtailment.infeasible));
    }
    log.line("wall time " + num(seconds_since(t0)) + " s");
    return 0;
}

int cmd_curtail(const RunConfig& cfg, std::ostream& out) {
    Inputs in = load_inputs(cfg);
    Solution sol = read_solution(cfg);
    if (cfg.test.empty()) fail(ErrorKind::InvalidArgument, "--test is required");
    ScenarioSet test = load_set(cfg.test, in);
    Log log(out, cfg, "curtail.log");
    CurtailmentSummary c = monte_carlo_curtailment(sol, test, in.grid, in.ops, eval_options(cfg));
    json doc;
    doc["schema"] = "drccots.curtailment/1";
    doc["curtailment_mw"] = {{"scenarios", c.scenarios}, {"infeasible", c.infeasible}, {"nonzero", c.nonzero},
                             {"mean", c.mean_mw},        {"stderr", c.stderr_mw},      {"max", c.max_mw},
                             {"p50", c.p50_mw},          {"p90", c.p90_mw},            {"p99", c.p99_mw},
                             {"hist_edges", c.hist_edges}, {"hist_counts", c.hist_counts}};
    doc["config"] = config_to_json(cfg);
    write_text(out_path(cfg, "curtailment.json"), doc.dump(2) + "\n");
    log.line("curtailment mean " + num(c.mean_mw) + " MW  stderr " + num(c.stderr_mw) + "  max " + num(c.max_mw) +
             "  infeasible " + std::to_string(c.infeasible) + " of " + std::to_string(c.scenarios));
    return 0;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
    Inputs in = load_inputs(cfg);
    std::optional<ScenarioSet> test;
    if (!cfg.test.empty()) test = load_set(cfg.test, in);
    Log log(out, cfg, "sweep.log");
    std::string csv = "method,lines_out,eps,status,objective,nodes,switching";
    if (test) csv += ",avg_violation_rate,oos_cost,curtailment_mean_mw";
    csv += "\n";
    for (double lo_value : parse_grid(cfg.sweep_lo)) {
        const int lo = static_cast<int>(std::lround(lo_value));
        for (double eps : parse_grid(cfg.sweep_eps)) {
            std::string row = cfg.method + "," + std::to_string(lo) + "," + num(eps) + ",";
            try {
                Solution sol = build_and_solve(cfg, in, eps, lo);
                row += sol.diag.status + "," + num(sol.objective) + "," + std::to_string(sol.diag.nodes) + "," +
                       format_line_list(sol.opened_lines());
                if (test && sol.has_solution() && sol.Y.Y_theta.cols() == test->dim()) {
                    EvaluationReport rep = oos_evaluate(sol, *test, in.grid, in.ops, eval_options(cfg));
                    row += "," + num(rep.average_rate) + "," + num(rep.oos_cost) + "," +
                           (rep.has_curtailment ? num(rep.curtailment.mean_mw) : std::string());
                } else if (test) {
                    row += ",,,";
                }
                log.line("lines_out " + std::to_string(lo) + "  eps " + num(eps) + "  " + sol.diag.status +
                         "  objective " + num(sol.objective));
            } catch (const Error& e) {
                row += std::string(error_kind_name(e.kind())) + ",,,";
                if (test) row += ",,,";
                log.line("lines_out " + std::to_string(lo) + "  eps " + num(eps) + "  " + error_kind_name(e.kind()) +
                         ": " + e.what());
            }
            csv += row + "\n";
        }
    }
    write_text(out_path(cfg, "plotdata.csv"), csv);
    return 0;
}

std::string version_text() {
    return std::string("drccots ") + kVersion + "\ncase " + kCaseSchema + "\nscenarios " + kScenarioSchema +
           "\nsolution " + kSolutionSchema + "\nreport " + kReportSchema;
}

void error_json(std::ostream& err, const std::string& kind, const std::string& message, int code) {
    json j = {{"error", kind}, {"message", message}, {"exit_code", code}};
    err << j.dump() << "\n";
}

}  // namespace

json config_to_json(const RunConfig& c) {
    json j = json::object();
    for (const auto& f : fields()) f.save(j, c);
    return j;
}

void apply_config_json(RunConfig& c, const json& doc) {
    if (!doc.is_object()) fail(ErrorKind::MalformedDocument, "config must be a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        bool known = false;
        for (const auto& f : fields()) known = known || f.key == it.key();
        if (!known) fail(ErrorKind::MalformedDocument, "unknown config key " + it.key());
    }
    try {
        for (const auto& f : fields()) f.load(c, doc);
    } catch (const json::exception& e) {
        fail(ErrorKind::MalformedDocument, std::string("config value: ") + e.what());
    }
}

void validate_config(const RunConfig& c, const std::string& command) {
    static const std::vector<std::string> methods = {"det", "saa", "gauss", "mad", "mad-multi", "wass"};
    auto bad = [](const std::string& m) { fail(ErrorKind::InvalidArgument, m); };
    if (c.case_path.empty()) bad("--case is required");
    if (c.units != "mw" && c.units != "pu") bad("--units must be mw or pu");
    if (!(c.flow_limit_scale > 0.0)) bad("--flow-limit-scale must be positive");
    if (c.threads < 1) bad("--threads must be at least 1");
    if (c.support_margin < 0.0) bad("--support-margin must be non-negative");
    if (command == "solve" || command == "sweep") {
        if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) bad("unknown method " + c.method);
        if (c.lines_out < 0) bad("--lo must be non-negative");
        if (!(c.gap_tol >= 0.0)) bad("--gap must be non-negative");
        if (c.node_limit < 0) bad("--node-limit must be non-negative");
        if (c.method == "wass" && !(c.radius >= 0.0)) bad("--radius must be non-negative");
        if (c.method == "mad-multi" && (c.modes < 1 || c.t_max < 1 || !(c.omega > 0.0))) {
            bad("mad-multi needs --modes >= 1, --t-max >= 1 and --omega > 0");
        }
    }
    if (command == "solve" && c.method != "det" && !(c.eps > 0.0 && c.eps <= 0.5)) bad("--eps must lie in (0, 0.5]");
    if (command == "sweep") {
        for (double e : parse_grid(c.sweep_eps)) {
            if (!(e >= 0.0 && e <= 0.5)) bad("sweep risk levels must lie in [0, 0.5]");
        }
        for (double l : parse_grid(c.sweep_lo)) {
            if (l < 0.0 || l != std::floor(l)) bad("sweep line-out budgets must be non-negative integers");
        }
    }
}

std::vector<double> parse_grid(const std::string& text) {
    auto number = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            fail(ErrorKind::InvalidArgument, "bad number '" + s + "' in " + text);
        }
    };
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(text);
        std::string p;
        while (std::getline(ss, p, ':')) parts.push_back(p);
        if (parts.size() != 3) fail(ErrorKind::InvalidArgument, "range must be a:step:b, got " + text);
        double a = number(parts[0]), step = number(parts[1]), b = number(parts[2]);
        if (!(step > 0.0) || b < a) fail(ErrorKind::InvalidArgument, "empty range " + text);
        const long n = static_cast<long>(std::floor((b - a) / step + 1e-9));
        for (long i = 0; i <= n; ++i) out.push_back(a + step * static_cast<double>(i));
        return out;
    }
    std::stringstream ss(text);
    std::string p;
    while (std::getline(ss, p, ',')) {
        if (!p.empty()) out.push_back(number(p));
    }
    if (out.empty()) fail(ErrorKind::InvalidArgument, "empty list " + text);
    return out;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::IslandedTopology:
        case ErrorKind::NoFeasibleStart:
        case ErrorKind::CurtailmentInfeasible:
            return 2;
        case ErrorKind::NumericalBreakdown:
        case ErrorKind::UnboundedDual:
            return 3;
        default:
            return 4;
    }
}

int exit_code_for(const Solution& sol) {
    if (!sol.has_solution() || sol.diag.status == "Infeasible") return sol.diag.status == "NodeLimit" ? 3 : 2;
    if (sol.diag.status == "Feasible" || sol.diag.status == "NodeLimit" || sol.diag.iteration_cap) return 3;
    return 0;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Chance-constrained transmission switching under uncertainty"};
    app.set_version_flag("--version", version_text());
    app.require_subcommand(1);
    RunConfig flags;
    std::string config_file;
    struct Sub {
        CLI::App* app;
        std::vector<std::pair<CLI::Option*, const Field*>> opts;
    };
    std::vector<Sub> subs;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"solve", "build and solve one model, write solution.json"},
        {"evaluate", "out-of-sample report for a solution, write report.json and report.csv"},
        {"curtail", "Monte Carlo curtailment for a solution, write curtailment.json"},
        {"sweep", "solve over a grid of risk levels and line-out budgets, write plotdata.csv"},
    };
    for (const auto& [name, help] : commands) {
        Sub s{app.add_subcommand(name, help), {}};
        s.app->add_option("--config", config_file, "JSON config; flags take precedence");
        for (const auto& f : fields()) s.opts.push_back({f.add(s.app, flags), &f});
        subs.push_back(std::move(s));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        out << version_text() << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        error_json(err, "InvalidArgument", e.what(), 4);
        return 4;
    }

    try {
        const Sub* chosen = nullptr;
        for (const auto& s : subs) {
            if (s.app->parsed()) chosen = &s;
        }
        const std::string command = chosen->app->get_name();
        RunConfig cfg;
        if (!config_file.empty()) apply_config_json(cfg, parse_json_file(config_file));
        for (const auto& [opt, f] : chosen->opts) {
            if (opt->count() > 0) f->copy(cfg, flags);
        }
        validate_config(cfg, command);
        if (command == "solve") return cmd_solve(cfg, out);
        if (command == "evaluate") return cmd_evaluate(cfg, out);
        if (command == "curtail") return cmd_curtail(cfg, out);
        return cmd_sweep(cfg, out);
    } catch (const Error& e) {
        int code = exit_code_for(e.kind());
        error_json(err, error_kind_name(e.kind()), e.what(), code);
        return code;
    } catch (const std::exception& e) {
        error_json(err, "Internal", e.what(), 1);
        return 1;
    }
}

}  // namespace drccots
