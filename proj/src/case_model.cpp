#include "drccots/case_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "drccots/errors.hpp"

namespace drccots {

using nlohmann::json;

int GridCase::bus_index(int id) const {
    for (int i = 0; i < num_buses(); ++i) {
        if (buses[i].id == id) return i;
    }
    return -1;
}

namespace {

double number(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number()) {
        fail(ErrorKind::MalformedDocument, std::string("missing numeric field '") + key + "'");
    }
    return j.at(key).get<double>();
}

double number_or(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) {
        fail(ErrorKind::MalformedDocument, std::string("field '") + key + "' is not a number");
    }
    return j.at(key).get<double>();
}

int integer(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number_integer()) {
        fail(ErrorKind::MalformedDocument, std::string("missing integer field '") + key + "'");
    }
    return j.at(key).get<int>();
}

}  // namespace

GridCase parse_case(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::exception& e) {
        fail(ErrorKind::MalformedDocument, std::string("case is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) fail(ErrorKind::MalformedDocument, "case document must be an object");
    for (const char* key : {"buses", "lines", "generators"}) {
        if (!doc.contains(key) || !doc.at(key).is_array()) {
            fail(ErrorKind::MalformedDocument, std::string("missing array '") + key + "'");
        }
    }

    GridCase grid;
    if (doc.contains("name") && doc["name"].is_string()) grid.name = doc["name"].get<std::string>();
    grid.base_mva = number_or(doc, "base_mva", 100.0);
    if (!(grid.base_mva > 0.0)) fail(ErrorKind::MalformedDocument, "base_mva must be positive");

    for (const auto& b : doc["buses"]) {
        Bus bus;
        bus.id = integer(b, "id");
        bus.theta_min = number_or(b, "theta_min", bus.theta_min);
        bus.theta_max = number_or(b, "theta_max", bus.theta_max);
        grid.buses.push_back(bus);
    }
    for (const auto& l : doc["lines"]) {
        Line line;
        line.from = integer(l, "from");
        line.to = integer(l, "to");
        line.susceptance = number(l, "susceptance");
        line.flow_max = number(l, "flow_max");
        if (l.contains("switchable")) {
            if (!l["switchable"].is_boolean()) fail(ErrorKind::MalformedDocument, "switchable must be boolean");
            line.switchable = l["switchable"].get<bool>();
        }
        if (l.contains("dtheta_max")) line.dtheta_max = number(l, "dtheta_max");
        grid.lines.push_back(line);
    }
    for (const auto& g : doc["generators"]) {
        Generator gen;
        gen.bus = integer(g, "bus");
        gen.pmin = number_or(g, "pmin", 0.0);
        gen.pmax = number(g, "pmax");
        gen.rmin = number_or(g, "rmin", 0.0);
        gen.rmax = number_or(g, "rmax", 0.0);
        gen.cost = number(g, "cost");
        gen.recourse_cost = number_or(g, "recourse_cost", 0.0);
        grid.generators.push_back(gen);
    }
    if (doc.contains("loads")) {
        if (!doc["loads"].is_object()) fail(ErrorKind::MalformedDocument, "loads must map bus id to MW");
        for (const auto& [key, value] : doc["loads"].items()) {
            int id = 0;
            try {
                std::size_t used = 0;
                id = std::stoi(key, &used);
                if (used != key.size()) throw std::invalid_argument(key);
            } catch (const std::exception&) {
                fail(ErrorKind::MalformedDocument, "load key '" + key + "' is not a bus id");
            }
            if (!value.is_number()) fail(ErrorKind::MalformedDocument, "load value is not a number");
            grid.loads[id] = value.get<double>();
        }
    }
    grid.slack_bus = integer(doc, "slack_bus");
    if (doc.contains("wind_buses")) {
        if (!doc["wind_buses"].is_array()) fail(ErrorKind::MalformedDocument, "wind_buses must be an array");
        for (const auto& w : doc["wind_buses"]) {
            if (!w.is_number_integer()) fail(ErrorKind::MalformedDocument, "wind bus id must be an integer");
            grid.wind_buses.push_back(w.get<int>());
        }
    }
    validate_case(grid);
    return grid;
}

GridCase load_case_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open case file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::string text = buffer.str();
    if (path.size() >= 2 && path.substr(path.size() - 2) == ".m") return parse_matpower(text);
    return parse_case(text);
}

std::string serialize_case(const GridCase& grid) {
    json doc;
    doc["name"] = grid.name;
    doc["base_mva"] = grid.base_mva;
    doc["slack_bus"] = grid.slack_bus;
    doc["buses"] = json::array();
    for (const auto& b : grid.buses) {
        doc["buses"].push_back({{"id", b.id}, {"theta_min", b.theta_min}, {"theta_max", b.theta_max}});
    }
    doc["lines"] = json::array();
    for (const auto& l : grid.lines) {
        json j = {{"from", l.from},
                  {"to", l.to},
                  {"susceptance", l.susceptance},
                  {"flow_max", l.flow_max},
                  {"switchable", l.switchable}};
        if (l.dtheta_max) j["dtheta_max"] = *l.dtheta_max;
        doc["lines"].push_back(j);
    }
    doc["generators"] = json::array();
    for (const auto& g : grid.generators) {
        doc["generators"].push_back({{"bus", g.bus},
                                     {"pmin", g.pmin},
                                     {"pmax", g.pmax},
                                     {"rmin", g.rmin},
                                     {"rmax", g.rmax},
                                     {"cost", g.cost},
                                     {"recourse_cost", g.recourse_cost}});
    }
    doc["loads"] = json::object();
    for (const auto& [bus, mw] : grid.loads) doc["loads"][std::to_string(bus)] = mw;
    doc["wind_buses"] = grid.wind_buses;
    return doc.dump(2);
}

void validate_case(const GridCase& grid) {
    if (grid.buses.empty()) fail(ErrorKind::MalformedDocument, "case has no buses");
    std::vector<int> ids;
    for (const auto& b : grid.buses) {
        ids.push_back(b.id);
        if (!(b.theta_min < b.theta_max)) {
            fail(ErrorKind::InfeasibleBounds, "bus " + std::to_string(b.id) + " angle bounds are empty");
        }
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        fail(ErrorKind::MalformedDocument, "duplicate bus id");
    }
    auto exists = [&](int id) { return std::binary_search(ids.begin(), ids.end(), id); };
    for (const auto& l : grid.lines) {
        if (!exists(l.from) || !exists(l.to)) {
            fail(ErrorKind::DanglingLineEndpoint,
                 "line (" + std::to_string(l.from) + "," + std::to_string(l.to) + ") references an unknown bus");
        }
        if (l.from == l.to) fail(ErrorKind::MalformedDocument, "line endpoints coincide");
        if (!(l.susceptance > 0.0)) fail(ErrorKind::MalformedDocument, "line susceptance must be positive");
        if (!(l.flow_max >= 0.0)) fail(ErrorKind::InfeasibleBounds, "line flow limit must be nonnegative");
        if (l.dtheta_max && !(*l.dtheta_max > 0.0)) {
            fail(ErrorKind::InfeasibleBounds, "dtheta_max must be positive");
        }
    }
    for (const auto& g : grid.generators) {
        if (!exists(g.bus)) fail(ErrorKind::DanglingLineEndpoint, "generator at unknown bus " + std::to_string(g.bus));
        if (!(g.pmin <= g.pmax)) fail(ErrorKind::InfeasibleBounds, "generator pmin exceeds pmax");
        if (!(g.rmin <= 0.0 && 0.0 <= g.rmax)) fail(ErrorKind::InfeasibleBounds, "reserve range must contain 0");
    }
    for (const auto& [bus, mw] : grid.loads) {
        if (!exists(bus)) fail(ErrorKind::DanglingLineEndpoint, "load at unknown bus " + std::to_string(bus));
        if (!std::isfinite(mw)) fail(ErrorKind::MalformedDocument, "load is not finite");
    }
    if (!exists(grid.slack_bus)) fail(ErrorKind::DanglingLineEndpoint, "slack bus does not exist");
    for (int w : grid.wind_buses) {
        if (!exists(w)) fail(ErrorKind::DanglingLineEndpoint, "wind bus " + std::to_string(w) + " does not exist");
    }
    std::map<int, double> cost_at_bus;
    for (const auto& g : grid.generators) {
        auto [it, inserted] = cost_at_bus.emplace(g.bus, g.cost);
        if (!inserted && it->second != g.cost) {
            fail(ErrorKind::MalformedDocument,
                 "generators sharing bus " + std::to_string(g.bus) + " must have equal cost");
        }
    }
    if (!is_connected(grid, std::vector<bool>(grid.lines.size(), true))) {
        fail(ErrorKind::DisconnectedBaseGraph, "closed-line graph is not connected");
    }
}

GridCase flow_limit_scale(const GridCase& grid, double factor) {
    if (!(factor > 0.0)) fail(ErrorKind::InvalidArgument, "flow limit scale must be positive");
    GridCase scaled = grid;
    for (auto& l : scaled.lines) l.flow_max *= factor;
    return scaled;
}

bool is_connected(const GridCase& grid, const std::vector<bool>& closed) {
    const int n = grid.num_buses();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    int components = n;
    for (int l = 0; l < grid.num_lines(); ++l) {
        if (!closed[l]) continue;
        int a = find(grid.bus_index(grid.lines[l].from));
        int b = find(grid.bus_index(grid.lines[l].to));
        if (a != b) {
            parent[a] = b;
            --components;
        }
    }
    return components == 1;
}

Eigen::VectorXd default_dtheta_max(const GridCase& grid) {
    Eigen::VectorXd out(grid.num_lines());
    for (int l = 0; l < grid.num_lines(); ++l) {
        const auto& line = grid.lines[l];
        if (line.dtheta_max) {
            out[l] = *line.dtheta_max;
            continue;
        }
        const auto& bi = grid.buses[grid.bus_index(line.from)];
        const auto& bj = grid.buses[grid.bus_index(line.to)];
        out[l] = std::max(bi.theta_max - bj.theta_min, bj.theta_max - bi.theta_min);
    }
    return out;
}

NetworkOperators build_operators(const GridCase& grid) {
    return build_operators(grid, default_dtheta_max(grid));
}

NetworkOperators build_operators(const GridCase& grid, const Eigen::VectorXd& dtheta_max) {
    const int n = grid.num_buses();
    const int L = grid.num_lines();
    if (dtheta_max.size() != L) fail(ErrorKind::DimensionMismatch, "dtheta_max length differs from line count");
    std::vector<Eigen::Triplet<double>> a_entries, k_entries;
    NetworkOperators ops;
    ops.M.resize(L);
    ops.dtheta_max = dtheta_max;
    for (int l = 0; l < L; ++l) {
        const auto& line = grid.lines[l];
        if (!(dtheta_max[l] > 0.0)) fail(ErrorKind::InvalidArgument, "dtheta_max must be positive");
        int i = grid.bus_index(line.from);
        int j = grid.bus_index(line.to);
        a_entries.emplace_back(i, l, 1.0);
        a_entries.emplace_back(j, l, -1.0);
        k_entries.emplace_back(l, i, line.susceptance);
        k_entries.emplace_back(l, j, -line.susceptance);
        ops.M[l] = line.susceptance * dtheta_max[l];
    }
    ops.A.resize(n, L);
    ops.A.setFromTriplets(a_entries.begin(), a_entries.end());
    ops.K.resize(L, n);
    ops.K.setFromTriplets(k_entries.begin(), k_entries.end());
    return ops;
}

BusData bus_data(const GridCase& grid) {
    const int n = grid.num_buses();
    const double base = grid.base_mva;
    BusData d;
    d.gmin = d.gmax = d.rmin = d.rmax = d.cost = d.recourse_cost = d.load = Eigen::VectorXd::Zero(n);
    d.theta_min.resize(n);
    d.theta_max.resize(n);
    d.has_generator.assign(n, false);
    for (int i = 0; i < n; ++i) {
        d.theta_min[i] = grid.buses[i].theta_min;
        d.theta_max[i] = grid.buses[i].theta_max;
    }
    for (const auto& g : grid.generators) {
        int i = grid.bus_index(g.bus);
        d.gmin[i] += g.pmin / base;
        d.gmax[i] += g.pmax / base;
        d.rmin[i] += g.rmin / base;
        d.rmax[i] += g.rmax / base;
        d.cost[i] = g.cost;
        d.recourse_cost[i] = std::max(d.recourse_cost[i], g.recourse_cost);
        d.has_generator[i] = true;
    }
    for (const auto& [bus, mw] : grid.loads) d.load[grid.bus_index(bus)] += mw / base;
    d.flow_max.resize(grid.num_lines());
    for (int l = 0; l < grid.num_lines(); ++l) d.flow_max[l] = grid.lines[l].flow_max / base;
    return d;
}

Eigen::MatrixXd placement_matrix(const GridCase& grid) {
    const int k = static_cast<int>(grid.wind_buses.size());
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(grid.num_buses(), k);
    for (int c = 0; c < k; ++c) F(grid.bus_index(grid.wind_buses[c]), c) = 1.0;
    return F;
}

namespace {

// Rows of a MATPOWER matrix assignment such as "mpc.bus = [ ... ];".
std::vector<std::vector<double>> matpower_table(const std::string& text, const std::string& field) {
    std::regex start("mpc\\." + field + "\\s*=\\s*\\[");
    std::smatch m;
    if (!std::regex_search(text, m, start)) {
        fail(ErrorKind::MalformedDocument, "MATPOWER table mpc." + field + " not found");
    }
    std::size_t begin = m.position(0) + m.length(0);
    std::size_t end = text.find(']', begin);
    if (end == std::string::npos) fail(ErrorKind::MalformedDocument, "unterminated mpc." + field);
    std::string body = text.substr(begin, end - begin);
    std::vector<std::vector<double>> rows;
    std::stringstream lines(body);
    std::string line;
    while (std::getline(lines, line, '\n')) {
        auto pct = line.find('%');
        if (pct != std::string::npos) line = line.substr(0, pct);
        std::stringstream parts(line);
        std::string chunk;
        while (std::getline(parts, chunk, ';')) {
            std::replace(chunk.begin(), chunk.end(), ',', ' ');
            std::stringstream cells(chunk);
            std::vector<double> row;
            std::string cell;
            while (cells >> cell) {
                try {
                    row.push_back(std::stod(cell));
                } catch (const std::exception&) {
                    fail(ErrorKind::MalformedDocument, "non-numeric entry '" + cell + "' in mpc." + field);
                }
            }
            if (!row.empty()) rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace

GridCase parse_matpower(const std::string& text, const MatpowerOptions& options) {
    GridCase grid;
    std::smatch m;
    if (std::regex_search(text, m, std::regex("mpc\\.baseMVA\\s*=\\s*([0-9.eE+-]+)"))) {
        grid.base_mva = std::stod(m[1].str());
    }
    auto bus_rows = matpower_table(text, "bus");
    auto gen_rows = matpower_table(text, "gen");
    auto branch_rows = matpower_table(text, "branch");
    std::vector<std::vector<double>> cost_rows;
    if (text.find("mpc.gencost") != std::string::npos) cost_rows = matpower_table(text, "gencost");

    bool have_slack = false;
    for (const auto& r : bus_rows) {
        if (r.size() < 3) fail(ErrorKind::MalformedDocument, "bus row too short");
        Bus bus;
        bus.id = static_cast<int>(r[0]);
        bus.theta_min = -options.theta_limit;
        bus.theta_max = options.theta_limit;
        grid.buses.push_back(bus);
        if (static_cast<int>(r[1]) == 3 && !have_slack) {
            grid.slack_bus = bus.id;
            have_slack = true;
        }
        if (r[2] != 0.0) grid.loads[bus.id] += r[2];
    }
    if (!have_slack && !grid.buses.empty()) grid.slack_bus = grid.buses.front().id;
    for (const auto& r : branch_rows) {
        if (r.size() < 6) fail(ErrorKind::MalformedDocument, "branch row too short");
        if (r.size() > 10 && r[10] == 0.0) continue;  // out of service
        Line line;
        line.from = static_cast<int>(r[0]);
        line.to = static_cast<int>(r[1]);
        if (r[3] == 0.0) fail(ErrorKind::MalformedDocument, "branch with zero reactance");
        line.susceptance = 1.0 / std::abs(r[3]);
        line.flow_max = r[5] > 0.0 ? r[5] : options.unlimited_flow;
        grid.lines.push_back(line);
    }
    for (std::size_t g = 0; g < gen_rows.size(); ++g) {
        const auto& r = gen_rows[g];
        if (r.size() < 10) fail(ErrorKind::MalformedDocument, "gen row too short");
        if (r[7] <= 0.0) continue;
        Generator gen;
        gen.bus = static_cast<int>(r[0]);
        gen.pmax = r[8];
        gen.pmin = std::max(0.0, r[9]);
        gen.rmax = options.reserve_fraction * gen.pmax;
        gen.rmin = -gen.rmax;
        gen.recourse_cost = options.recourse_cost;
        if (g < cost_rows.size()) {
            const auto& c = cost_rows[g];
            // polynomial model: [2 startup shutdown n c_{n-1} ... c_0]; keep the linear term
            if (c.size() >= 5 && static_cast<int>(c[0]) == 2) {
                int n = static_cast<int>(c[3]);
                if (n >= 2 && static_cast<int>(c.size()) >= 4 + n) gen.cost = c[4 + n - 2];
            }
        }
        grid.generators.push_back(gen);
    }
    // Generators sharing a bus must share a cost; use the cheapest.
    std::map<int, double> cheapest;
    for (const auto& g : grid.generators) {
        auto it = cheapest.find(g.bus);
        if (it == cheapest.end() || g.cost < it->second) cheapest[g.bus] = g.cost;
    }
    for (auto& g : grid.generators) g.cost = cheapest[g.bus];
    validate_case(grid);
    return grid;
}

}  // namespace drccots
