#include "drccots/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "drccots/errors.hpp"
#include "drccots/lp_solver.hpp"

namespace drccots {

bool Polytope::contains(const Eigen::VectorXd& xi, double tol) const {
    return ((U * xi - t).array() <= tol).all();
}

bool Polytope::strictly_contains(const Eigen::VectorXd& xi, double tol) const {
    return ((U * xi - t).array() < -tol).all();
}

bool Polytope::is_box() const {
    const int k = dim();
    if (rows() != 2 * k) return false;
    Eigen::MatrixXd expected(2 * k, k);
    expected << Eigen::MatrixXd::Identity(k, k), -Eigen::MatrixXd::Identity(k, k);
    return U == expected;
}

std::vector<Eigen::VectorXd> Polytope::box_vertices() const {
    std::vector<Eigen::VectorXd> out;
    if (!is_box()) return out;
    const int k = dim();
    for (long mask = 0; mask < (1L << k); ++mask) {
        Eigen::VectorXd v(k);
        for (int c = 0; c < k; ++c) v[c] = (mask >> c) & 1 ? t[c] : -t[k + c];
        out.push_back(v);
    }
    return out;
}

void Polytope::bounding_box(Eigen::VectorXd& lower, Eigen::VectorXd& upper) const {
    const int k = dim();
    lower.resize(k);
    upper.resize(k);
    if (is_box()) {
        upper = t.head(k);
        lower = -t.tail(k);
        return;
    }
    const double big = 1e6;
    for (int c = 0; c < k; ++c) {
        for (int side = 0; side < 2; ++side) {
            MilpModel m;
            for (int v = 0; v < k; ++v) {
                m.add_var("xi" + std::to_string(v), VarKind::Continuous, -big, big, v == c ? (side ? -1.0 : 1.0) : 0.0);
            }
            for (int w = 0; w < rows(); ++w) {
                std::vector<Term> terms;
                for (int v = 0; v < k; ++v) terms.push_back({v, U(w, v)});
                m.add_con("w" + std::to_string(w), terms, Sense::Le, t[w]);
            }
            auto r = solve_lp(m);
            if (r.status != LpStatus::Optimal) fail(ErrorKind::DegenerateCoordinate, "support polytope is empty");
            if (std::abs(r.x[c]) >= big * 0.999) fail(ErrorKind::InvalidArgument, "support polytope is unbounded");
            (side ? upper : lower)[c] = r.x[c];
        }
    }
}

Polytope box_polytope(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    const int k = static_cast<int>(lower.size());
    Polytope p;
    p.U.resize(2 * k, k);
    p.U << Eigen::MatrixXd::Identity(k, k), -Eigen::MatrixXd::Identity(k, k);
    p.t.resize(2 * k);
    p.t << upper, -lower;
    return p;
}

double chebyshev_radius(const Polytope& poly) {
    const int k = poly.dim();
    if (poly.is_box()) {
        double r = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) r = std::min(r, 0.5 * (poly.t[c] + poly.t[k + c]));
        return r;
    }
    const double big = 1e6;
    MilpModel m;
    for (int v = 0; v < k; ++v) m.add_var("xi" + std::to_string(v), VarKind::Continuous, -big, big);
    int r = m.add_var("r", VarKind::Continuous, -1.0, big, -1.0);
    for (int w = 0; w < poly.rows(); ++w) {
        std::vector<Term> terms;
        for (int v = 0; v < k; ++v) terms.push_back({v, poly.U(w, v)});
        terms.push_back({r, poly.U.row(w).norm()});
        m.add_con("w" + std::to_string(w), terms, Sense::Le, poly.t[w]);
    }
    auto res = solve_lp(m);
    if (res.status != LpStatus::Optimal) return -1.0;
    return res.x[r];
}

ScenarioSet parse_scenarios(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::vector<std::vector<double>> rows;
    std::size_t width = 0;
    bool first = true;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t");
            auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        if (first) {
            first = false;
            bool header = false;
            for (auto& c : cells) {
                std::string v = trim(c);
                if (!v.empty() && (std::isalpha(static_cast<unsigned char>(v[0])) || v[0] == '_')) header = true;
            }
            if (header) {
                width = cells.size();
                continue;
            }
        }
        if (width == 0) width = cells.size();
        if (cells.size() != width) {
            fail(ErrorKind::RaggedRows, "line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                            " cells, expected " + std::to_string(width));
        }
        std::vector<double> row;
        for (auto& c : cells) {
            std::string v = trim(c);
            try {
                std::size_t used = 0;
                double value = std::stod(v, &used);
                if (used != v.size() || !std::isfinite(value)) throw std::invalid_argument(v);
                row.push_back(value);
            } catch (const std::exception&) {
                fail(ErrorKind::NonNumericCell, "line " + std::to_string(line_no) + " has non-numeric cell '" + v + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty() || width == 0) fail(ErrorKind::EmptyFile, "scenario file has no samples");
    ScenarioSet s;
    s.samples.resize(static_cast<long>(rows.size()), static_cast<long>(width));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < width; ++k) s.samples(static_cast<long>(i), static_cast<long>(k)) = rows[i][k];
    }
    return s;
}

ScenarioSet load_scenarios(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open scenario file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_scenarios(buffer.str());
}

std::string scenarios_to_csv(const ScenarioSet& s) {
    std::ostringstream out;
    for (int k = 0; k < s.dim(); ++k) out << (k ? "," : "") << "xi_" << (k + 1);
    out << '\n';
    char buf[40];
    for (int i = 0; i < s.size(); ++i) {
        for (int k = 0; k < s.dim(); ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", s.samples(i, k));
            out << (k ? "," : "") << buf;
        }
        out << '\n';
    }
    return out.str();
}

Polytope box_support(const ScenarioSet& s, double margin) {
    if (s.size() < 1 || s.dim() < 1) fail(ErrorKind::EmptyFile, "empty scenario set");
    if (margin < 0.0) fail(ErrorKind::InvalidArgument, "margin must be nonnegative");
    Eigen::VectorXd lo = s.samples.colwise().minCoeff().transpose();
    Eigen::VectorXd hi = s.samples.colwise().maxCoeff().transpose();
    Eigen::VectorXd range = hi - lo;
    for (int k = 0; k < s.dim(); ++k) {
        if (!(range[k] > 0.0)) {
            fail(ErrorKind::DegenerateCoordinate, "coordinate " + std::to_string(k + 1) + " has zero spread");
        }
    }
    return box_polytope(lo - margin * range, hi + margin * range);
}

MadMoments moment_stats(const ScenarioSet& s) {
    if (s.size() < 1) fail(ErrorKind::EmptyFile, "empty scenario set");
    MadMoments out;
    out.mu = s.samples.colwise().mean().transpose();
    out.sigma = (s.samples.rowwise() - out.mu.transpose()).cwiseAbs().colwise().mean().transpose();
    return out;
}

GaussianFit fit_gaussian(const ScenarioSet& s) {
    if (s.size() < 1) fail(ErrorKind::EmptyFile, "empty scenario set");
    GaussianFit out;
    const int k = s.dim();
    out.mu = s.samples.colwise().mean().transpose();
    Eigen::MatrixXd centered = s.samples.rowwise() - out.mu.transpose();
    if (s.size() > 1) {
        out.Sigma = (centered.transpose() * centered) / static_cast<double>(s.size() - 1);
    } else {
        out.Sigma = Eigen::MatrixXd::Zero(k, k);
    }
    out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.Sigma);
    if (eig.eigenvalues().minCoeff() < 1e-10) {
        double shift = 1e-8 * std::max(out.Sigma.trace() / k, 1.0);
        out.Sigma += shift * Eigen::MatrixXd::Identity(k, k);
    }
    return out;
}

MultiMadSpec partition_modes(const ScenarioSet& s, int m, std::uint64_t seed, double margin) {
    if (m < 1) fail(ErrorKind::InvalidArgument, "mode count must be positive");
    if (s.size() < m) fail(ErrorKind::InvalidArgument, "fewer samples than modes");
    const int S = s.size();
    const int K = s.dim();
    Eigen::VectorXd glo = s.samples.colwise().minCoeff().transpose();
    Eigen::VectorXd ghi = s.samples.colwise().maxCoeff().transpose();
    Eigen::VectorXd grange = (ghi - glo).cwiseMax(1e-9);

    std::vector<int> assign(S, 0);
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(attempt));
        Eigen::MatrixXd centers(m, K);
        std::uniform_int_distribution<int> pick(0, S - 1);
        centers.row(0) = s.samples.row(pick(rng));
        Eigen::VectorXd dist2(S);
        for (int c = 1; c < m; ++c) {
            for (int i = 0; i < S; ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (int j = 0; j < c; ++j) best = std::min(best, (s.samples.row(i) - centers.row(j)).squaredNorm());
                dist2[i] = best;
            }
            double total = dist2.sum();
            int chosen = 0;
            if (total > 0.0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double target = u(rng);
                double acc = 0.0;
                chosen = S - 1;
                for (int i = 0; i < S; ++i) {
                    acc += dist2[i];
                    if (acc >= target && dist2[i] > 0.0) {
                        chosen = i;
                        break;
                    }
                }
            } else {
                chosen = pick(rng);
            }
            centers.row(c) = s.samples.row(chosen);
        }
        for (int iter = 0; iter < 200; ++iter) {
            bool changed = false;
            for (int i = 0; i < S; ++i) {
                int best_c = 0;
                double best = std::numeric_limits<double>::infinity();
                for (int c = 0; c < m; ++c) {
                    double d = (s.samples.row(i) - centers.row(c)).squaredNorm();
                    if (d < best) {
                        best = d;
                        best_c = c;
                    }
                }
                if (assign[i] != best_c || iter == 0) {
                    changed = changed || assign[i] != best_c;
                    assign[i] = best_c;
                }
            }
            std::vector<int> count(m, 0);
            Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m, K);
            for (int i = 0; i < S; ++i) {
                ++count[assign[i]];
                sum.row(assign[i]) += s.samples.row(i);
            }
            bool empty = false;
            for (int c = 0; c < m; ++c) {
                if (count[c] == 0) {
                    empty = true;
                } else {
                    centers.row(c) = sum.row(c) / count[c];
                }
            }
            if (empty) break;
            if (!changed && iter > 0) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            std::vector<int> count(m, 0);
            for (int a : assign) ++count[a];
            ok = std::all_of(count.begin(), count.end(), [](int c) { return c > 0; });
        }
    }
    if (!ok) fail(ErrorKind::EmptyCluster, "k-means left a cluster empty after 10 restarts");

    std::vector<MadMode> modes(m);
    for (int c = 0; c < m; ++c) {
        std::vector<int> members;
        for (int i = 0; i < S; ++i) {
            if (assign[i] == c) members.push_back(i);
        }
        ScenarioSet sub;
        sub.samples.resize(static_cast<long>(members.size()), K);
        for (std::size_t r = 0; r < members.size(); ++r) sub.samples.row(static_cast<long>(r)) = s.samples.row(members[r]);
        auto mom = moment_stats(sub);
        modes[c].p = static_cast<double>(members.size()) / S;
        modes[c].mu = mom.mu;
        modes[c].sigma = mom.sigma;
        Eigen::VectorXd lo = sub.samples.colwise().minCoeff().transpose();
        Eigen::VectorXd hi = sub.samples.colwise().maxCoeff().transpose();
        // Margins are relative to the global range so singleton clusters keep a full-dimensional box.
        Eigen::VectorXd pad = margin * grange;
        if (margin == 0.0) {
            for (int k = 0; k < K; ++k) {
                if (!(hi[k] > lo[k])) fail(ErrorKind::DegenerateCoordinate, "cluster has zero spread and margin is 0");
            }
        }
        modes[c].support = box_polytope(lo - pad, hi + pad);
    }
    std::stable_sort(modes.begin(), modes.end(), [](const MadMode& a, const MadMode& b) {
        for (int k = 0; k < a.mu.size(); ++k) {
            if (a.mu[k] != b.mu[k]) return a.mu[k] < b.mu[k];
        }
        return false;
    });
    MultiMadSpec out;
    out.modes = std::move(modes);
    return out;
}

namespace {

using nlohmann::json;

Eigen::VectorXd json_vector(const json& j, const char* key, double scale) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        fail(ErrorKind::MalformedDocument, std::string("ambiguity field '") + key + "' must be an array");
    }
    const auto& a = j.at(key);
    Eigen::VectorXd v(static_cast<long>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) fail(ErrorKind::MalformedDocument, std::string("non-numeric entry in '") + key + "'");
        v[static_cast<long>(i)] = a[i].get<double>() * scale;
    }
    return v;
}

Polytope json_support(const json& j, double scale) {
    if (!j.contains("support")) fail(ErrorKind::MalformedDocument, "ambiguity lacks a support");
    const auto& s = j.at("support");
    if (s.contains("lower")) return box_polytope(json_vector(s, "lower", scale), json_vector(s, "upper", scale));
    if (!s.contains("U") || !s.contains("t")) fail(ErrorKind::MalformedDocument, "support needs lower/upper or U/t");
    Eigen::VectorXd t = json_vector(s, "t", scale);
    const auto& u = s.at("U");
    if (!u.is_array() || u.size() != static_cast<std::size_t>(t.size())) {
        fail(ErrorKind::MalformedDocument, "support U must have one row per t entry");
    }
    Polytope p;
    p.t = t;
    std::size_t k = u.empty() ? 0 : u[0].size();
    p.U.resize(t.size(), static_cast<long>(k));
    for (std::size_t r = 0; r < u.size(); ++r) {
        if (u[r].size() != k) fail(ErrorKind::RaggedRows, "support U is ragged");
        for (std::size_t c = 0; c < k; ++c) p.U(static_cast<long>(r), static_cast<long>(c)) = u[r][c].get<double>();
    }
    return p;
}

}  // namespace

AmbiguitySpec parse_ambiguity(const std::string& document, double scale) {
    json j;
    try {
        j = json::parse(document);
    } catch (const json::exception& e) {
        fail(ErrorKind::MalformedDocument, std::string("ambiguity is not valid JSON: ") + e.what());
    }
    if (!j.contains("type") || !j["type"].is_string()) fail(ErrorKind::MalformedDocument, "ambiguity lacks 'type'");
    std::string type = j["type"].get<std::string>();
    if (type == "mean_mad") {
        MeanMadSpec spec{json_vector(j, "mu", scale), json_vector(j, "sigma", scale), json_support(j, scale)};
        validate(spec);
        return spec;
    }
    if (type == "gaussian") {
        GaussianSpec spec;
        spec.mu = json_vector(j, "mu", scale);
        const auto& S = j.at("Sigma");
        const long k = spec.mu.size();
        spec.Sigma.resize(k, k);
        if (!S.is_array() || static_cast<long>(S.size()) != k) fail(ErrorKind::DimensionMismatch, "Sigma shape");
        for (long r = 0; r < k; ++r) {
            if (static_cast<long>(S[r].size()) != k) fail(ErrorKind::DimensionMismatch, "Sigma shape");
            for (long c = 0; c < k; ++c) spec.Sigma(r, c) = S[r][c].get<double>() * scale * scale;
        }
        return spec;
    }
    if (type == "multi_mad") {
        MultiMadSpec spec;
        if (!j.contains("modes") || !j["modes"].is_array()) fail(ErrorKind::MalformedDocument, "multi_mad needs modes");
        for (const auto& mj : j["modes"]) {
            MadMode mode;
            if (!mj.contains("p") || !mj["p"].is_number()) fail(ErrorKind::MalformedDocument, "mode lacks p");
            mode.p = mj["p"].get<double>();
            mode.mu = json_vector(mj, "mu", scale);
            mode.sigma = json_vector(mj, "sigma", scale);
            mode.support = json_support(mj, scale);
            spec.modes.push_back(mode);
        }
        validate(spec);
        return spec;
    }
    fail(ErrorKind::MalformedDocument, "unknown ambiguity type '" + type + "'");
}

void validate(const MeanMadSpec& spec) {
    if (spec.mu.size() != spec.sigma.size() || spec.mu.size() != spec.support.dim()) {
        fail(ErrorKind::DimensionMismatch, "mean, MAD and support dimensions differ");
    }
    if ((spec.sigma.array() < 0.0).any()) fail(ErrorKind::InvalidArgument, "MAD bound must be nonnegative");
    if (!spec.support.strictly_contains(spec.mu)) {
        fail(ErrorKind::MeanOutsideSupport, "mean is not strictly inside the support");
    }
}

void validate(const MultiMadSpec& spec) {
    if (spec.modes.empty()) fail(ErrorKind::InvalidArgument, "no modes");
    double total = 0.0;
    for (const auto& m : spec.modes) {
        if (!(m.p > 0.0)) fail(ErrorKind::InvalidArgument, "mode probability must be positive");
        total += m.p;
        validate(MeanMadSpec{m.mu, m.sigma, m.support});
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::InvalidArgument, "mode probabilities must sum to 1");
}

}  // namespace drccots
