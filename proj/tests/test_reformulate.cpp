#include <doctest.h>

#include <random>

#include "drccots/errors.hpp"
#include "drccots/reformulate.hpp"
#include "grid_oracles.hpp"
#include "oracles.hpp"

using namespace drccots;

namespace {

GridCase fixture(const char* name) { return load_case_file(std::string(DRCCOTS_DATA_DIR) + "/cases/" + name); }

SolveOptions tight() {
    SolveOptions o;
    o.milp.gap_tol = 1e-7;
    return o;
}

ScenarioSet uniform_samples(int S, int K, double half, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-half, half);
    ScenarioSet s;
    s.samples.resize(S, K);
    for (int i = 0; i < S; ++i) {
        for (int k = 0; k < K; ++k) s.samples(i, k) = u(rng);
    }
    return s;
}

// Per-row violation counts for each sample, recomputed from a dc solve of the
// realized injections rather than from the model rows.
std::vector<int> violations_per_row(const GridCase& g, const NetworkOperators& ops, const Solution& sol,
                                    const ScenarioSet& s, double tol) {
    BusData d = bus_data(g);
    const int N = g.num_buses(), L = g.num_lines();
    std::vector<int> count(2 * (3 * N + L), 0);
    Eigen::MatrixXd F = placement_matrix(g);
    for (int j = 0; j < s.size(); ++j) {
        Eigen::VectorXd xi = s.samples.row(j).transpose();
        Eigen::VectorXd r = sol.x.gamma * xi.sum();
        Eigen::VectorXd inj = r - F * xi;
        // Base angles from the first-stage schedule plus the dc response.
        Eigen::VectorXd th = sol.x.theta + dc_angles(g, ops, sol.x.z, inj);
        for (int n = 0; n < N; ++n) {
            double gen = sol.x.g[n] + r[n];
            int k = 0;
            auto tally = [&](double v) {
                if (v > tol) ++count[k * N + n];
                ++k;
            };
            tally(r[n] - d.rmax[n]);
            tally(d.rmin[n] - r[n]);
            tally(d.has_generator[n] ? gen - d.gmax[n] : 0.0);
            tally(d.has_generator[n] ? d.gmin[n] - gen : 0.0);
            tally(th[n] - d.theta_max[n]);
            tally(d.theta_min[n] - th[n]);
        }
        for (int l = 0; l < L; ++l) {
            if (!sol.x.z[l]) continue;
            int from = g.bus_index(g.lines[l].from), to = g.bus_index(g.lines[l].to);
            double f = g.lines[l].susceptance * (th[from] - th[to]);
            if (f - d.flow_max[l] > tol) ++count[6 * N + l];
            if (-d.flow_max[l] - f > tol) ++count[6 * N + L + l];
        }
    }
    return count;
}

}  // namespace

TEST_CASE("deterministic switching matches topology enumeration") {
    for (const char* name : {"three_bus.json", "ieee14.json"}) {
        GridCase g = fixture(name);
        auto ops = build_operators(g);
        for (int lo = 0; lo <= 2; ++lo) {
            CAPTURE(std::string(name));
            CAPTURE(lo);
            auto bm = build_deterministic(g, ops, lo);
            Solution sol = solve(bm, g, ops, tight());
            double ref = oracle::brute_force_ots(g, ops, lo);
            REQUIRE(sol.has_solution());
            CHECK(sol.diag.status == "Optimal");
            CAPTURE(sol.objective);
            CAPTURE(ref);
            CHECK(std::abs(sol.objective - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
            CHECK(static_cast<int>(sol.opened_lines().size()) <= lo);
        }
    }
}

TEST_CASE("saa below one sample of risk satisfies every sample") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    ScenarioSet s = uniform_samples(10, 1, 0.3, 5);
    auto bm = build_saa(g, ops, s, 0.05, 1, {});
    Solution sol = solve(bm, g, ops, tight());
    REQUIRE(sol.has_solution());
    for (int c : violations_per_row(g, ops, sol, s, 1e-7)) CHECK(c == 0);
}

TEST_CASE("saa violation count per row stays within the sample budget") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    ScenarioSet s = uniform_samples(20, 1, 0.5, 9);
    for (double eps : {0.1, 0.2}) {
        auto bm = build_saa(g, ops, s, eps, 1, {});
        Solution sol = solve(bm, g, ops, tight());
        REQUIRE(sol.has_solution());
        int cap = static_cast<int>(std::floor(20 * eps + 1e-9));
        for (int c : violations_per_row(g, ops, sol, s, 1e-7)) CHECK(c <= cap);
    }
}

TEST_CASE("saa cost is non-increasing in the risk level") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    ScenarioSet s = uniform_samples(20, 1, 0.5, 9);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {0.0, 0.05, 0.1, 0.2}) {
        auto bm = build_saa(g, ops, s, eps, 1, {});
        Solution sol = solve(bm, g, ops, tight());
        REQUIRE(sol.has_solution());
        CHECK(sol.objective <= prev + 1e-6 * std::abs(prev));
        prev = sol.objective;
    }
}

TEST_CASE("wasserstein at radius zero is the saa model") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    ScenarioSet s = uniform_samples(10, 1, 0.4, 3);
    auto a = build_saa(g, ops, s, 0.1, 1, {});
    auto b = build_wasserstein(g, ops, s, 0.0, 0.1, 1, {});
    REQUIRE(a.model.num_cons() == b.model.num_cons());
    REQUIRE(a.model.num_vars() == b.model.num_vars());
    for (int i = 0; i < a.model.num_cons(); ++i) {
        CHECK(a.model.cons[i].rhs == b.model.cons[i].rhs);
        CHECK(a.model.cons[i].terms.size() == b.model.cons[i].terms.size());
    }
    Solution sa = solve(a, g, ops, tight());
    Solution sb = solve(b, g, ops, tight());
    REQUIRE(sa.has_solution());
    CHECK(sa.objective == doctest::Approx(sb.objective).epsilon(1e-9));
}

TEST_CASE("wasserstein cost grows with the radius") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    ScenarioSet s = uniform_samples(10, 1, 0.4, 3);
    double prev = -std::numeric_limits<double>::infinity();
    for (double delta : {0.0, 0.02, 0.05, 0.1}) {
        auto bm = build_wasserstein(g, ops, s, delta, 0.1, 1, {});
        Solution sol = solve(bm, g, ops, tight());
        REQUIRE(sol.has_solution());
        CHECK(sol.objective >= prev - 1e-6 * std::abs(prev));
        prev = sol.objective;
    }
}

TEST_CASE("normal quantile") {
    CHECK(normal_quantile(0.95) == doctest::Approx(1.6448536269514722).epsilon(1e-12));
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normal_quantile(0.001) == doctest::Approx(-3.090232306167813).epsilon(1e-10));
    for (double p : {1e-6, 0.01, 0.2, 0.7, 0.99}) {
        double z = normal_quantile(p);
        CHECK(0.5 * std::erfc(-z / std::sqrt(2.0)) == doctest::Approx(p).epsilon(1e-12));
    }
}

TEST_CASE("single-source gaussian row converges to the analytic quantile") {
    const double mu = 0.3, sd = 0.2;
    MilpModel m;
    int y = m.add_var("y", VarKind::Continuous, -10.0, 10.0, 1.0);
    CcRow row;
    row.a = {Affine{}};
    row.a[0].constant = 1.0;
    row.b.add(y, 1.0);
    row.eps = 0.05;
    Eigen::VectorXd muv(1);
    muv << mu;
    Eigen::MatrixXd S(1, 1);
    S << sd * sd;
    m.add_con("gmean", {{y, 1.0}}, Sense::Ge, mu);
    GaussianCutGenerator gen({row}, muv, S);
    SolveOptions o = tight();
    int rounds = 0;
    double viol = 0.0;
    MilpResult r = solve_with_soc_cuts(m, gen, o, {}, rounds, viol);
    REQUIRE(!r.x.empty());
    CHECK(r.x[y] == doctest::Approx(mu + 1.6448536269514722 * sd).epsilon(1e-6));
    CHECK(viol < 1e-6);
    CHECK(rounds <= 50);
}

TEST_CASE("gaussian with zero covariance needs no cuts") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(1, 1);
    auto bm = build_gaussian(g, ops, mu, S, 0.05, 1, {});
    Solution sol = solve(bm, g, ops, tight());
    REQUIRE(sol.has_solution());
    CHECK(sol.diag.cuts == 0);
    CHECK(sol.diag.max_soc_violation < 1e-9);
}

TEST_CASE("gaussian solution meets every second-order row") {
    GridCase g = fixture("ieee14.json");
    auto ops = build_operators(g);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(3, 3) * 0.01;
    S(0, 1) = S(1, 0) = 0.004;
    auto bm = build_gaussian(g, ops, mu, S, 0.05, 1, {});
    SolveOptions o;
    o.milp.gap_tol = 1e-4;
    Solution sol = solve(bm, g, ops, o);
    REQUIRE(sol.has_solution());
    CHECK(sol.diag.max_soc_violation < 1e-6);
    CHECK(sol.diag.rounds <= 50);
    const double z = normal_quantile(0.95);
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    for (const auto& r : bm.rows) {
        Eigen::VectorXd a(3);
        for (int k = 0; k < 3; ++k) a[k] = r.a[k].value(sol.raw);
        double b = r.b.value(sol.raw);
        double lhs = mu.dot(a) + z * std::sqrt(a.dot(S * a));
        CHECK(lhs - b <= 1e-6 * std::max(1.0, std::abs(b)));
    }
    CHECK_THROWS_AS(build_gaussian(g, ops, mu, S, 0.0, 1, {}), Error);
    CHECK_THROWS_AS(build_gaussian(g, ops, mu, S, 0.6, 1, {}), Error);
}

TEST_CASE("worst-case probability on one source") {
    Eigen::VectorXd a(1), mu(1), sig(1);
    a << 1.0;
    mu << 0.0;
    sig << 0.5;
    Polytope box = box_polytope(Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0));
    CHECK(worst_case_probability(a, 1.0, mu, sig, box) == 1.0);
    CHECK(worst_case_probability(a, -1.5, mu, sig, box) == 0.0);
    // Mass just above zero balanced by a vanishing mass at -1.
    CHECK(worst_case_probability(a, 0.0, mu, sig, box) == doctest::Approx(0.0).epsilon(1e-6));
    // Deviation binds: mass 0.25/0.9 just above 0.9.
    CHECK(worst_case_probability(a, 0.9, mu, sig, box) == doctest::Approx(13.0 / 18.0).epsilon(1e-6));
    // Mean binds: mass 1/1.9 just above 0.9, the rest at -1.
    sig << 1.0;
    CHECK(worst_case_probability(a, 0.9, mu, sig, box) == doctest::Approx(9.0 / 19.0).epsilon(1e-6));
    Eigen::VectorXd outside(1);
    outside << 1.0;
    CHECK_THROWS_AS(worst_case_probability(a, 0.0, outside, sig, box), Error);
}

TEST_CASE("worst-case probability matches the discrete primal oracle") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> grid(1, 399);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> atoms;
    for (int i = 0; i <= 400; ++i) atoms.push_back({-1.0 + i / 200.0});
    for (int trial = 0; trial < 20; ++trial) {
        double mu = atoms[grid(rng)][0];
        double b = atoms[grid(rng)][0];
        double cap = 2.0 * (mu + 1.0) * (1.0 - mu) / 2.0;
        double sig = cap * (0.1 + 0.8 * u(rng));
        Eigen::VectorXd a(1), m(1), s(1);
        a << 1.0;
        m << mu;
        s << sig;
        Polytope box = box_polytope(Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0));
        double ref = oracle::worst_case_grid(atoms, {1.0}, b, {mu}, {sig});
        CAPTURE(mu);
        CAPTURE(b);
        CHECK(worst_case_probability(a, b, m, s, box) == doctest::Approx(ref).epsilon(1e-4));
    }
}

TEST_CASE("worst-case probability is monotone in the threshold and the deviation") {
    Eigen::VectorXd a(2), mu(2), sig(2);
    a << 1.0, -0.5;
    mu << 0.1, -0.2;
    sig << 0.3, 0.2;
    Polytope box = box_polytope(Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0));
    double prev = -1.0;
    for (double b = -1.4; b <= 1.5; b += 0.1) {
        double p = worst_case_probability(a, b, mu, sig, box);
        CHECK(p >= prev - 1e-9);
        prev = p;
    }
    prev = 2.0;
    for (double s = 0.05; s <= 0.5; s += 0.05) {
        sig << s, s;
        double p = worst_case_probability(a, 0.3, mu, sig, box);
        CHECK(p <= prev + 1e-9);
        prev = p;
    }
}

TEST_CASE("mean-mad cost is non-increasing in the risk level") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(1), sig = Eigen::VectorXd::Constant(1, 0.1);
    Polytope box = box_polytope(Eigen::VectorXd::Constant(1, -0.5), Eigen::VectorXd::Constant(1, 0.5));
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {0.0, 0.05, 0.1, 0.2, 0.3}) {
        auto bm = build_mad(g, ops, mu, sig, box, eps, 1, {});
        Solution sol = solve(bm, g, ops, tight());
        REQUIRE(sol.has_solution());
        CHECK(sol.objective <= prev + 1e-6 * std::abs(prev));
        prev = sol.objective;
    }
}

TEST_CASE("mean-mad rows hold in the worst case at the solution") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 0.05), sig = Eigen::VectorXd::Constant(1, 0.1);
    Polytope box = box_polytope(Eigen::VectorXd::Constant(1, -0.5), Eigen::VectorXd::Constant(1, 0.5));
    auto bm = build_mad(g, ops, mu, sig, box, 0.1, 1, {});
    Solution sol = solve(bm, g, ops, tight());
    REQUIRE(sol.has_solution());
    for (const auto& r : bm.rows) {
        Eigen::VectorXd a(1);
        a[0] = r.a[0].value(sol.raw);
        double b = r.b.value(sol.raw);
        CHECK(worst_case_probability(a, b + 1e-7, mu, sig, box) >= 1.0 - 0.1 - 1e-5);
    }
}

TEST_CASE("block coordinate descent with one mode stops at once") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    MultiMadSpec spec;
    MadMode mode;
    mode.mu = Eigen::VectorXd::Constant(1, 0.05);
    mode.sigma = Eigen::VectorXd::Constant(1, 0.1);
    mode.support = box_polytope(Eigen::VectorXd::Constant(1, -0.5), Eigen::VectorXd::Constant(1, 0.5));
    spec.modes = {mode};
    BcdOptions opts;
    opts.solve = tight();
    Solution sol = solve_multimodal_bcd(g, ops, spec, 0.1, 1, {}, opts);
    REQUIRE(sol.has_solution());
    CHECK(sol.diag.bcd_iterations <= 2);
    CHECK(!sol.diag.iteration_cap);
    auto bm = build_mad(g, ops, mode.mu, mode.sigma, mode.support, 0.1, 1, {});
    Solution ref = solve(bm, g, ops, tight());
    CHECK(sol.objective == doctest::Approx(ref.objective).epsilon(1e-4));
}

TEST_CASE("pooled set covers the modes") {
    MultiMadSpec spec;
    MadMode a, b;
    a.p = 0.25;
    a.mu = Eigen::VectorXd::Constant(1, -0.2);
    a.sigma = Eigen::VectorXd::Constant(1, 0.05);
    a.support = box_polytope(Eigen::VectorXd::Constant(1, -0.5), Eigen::VectorXd::Constant(1, 0.1));
    b.p = 0.75;
    b.mu = Eigen::VectorXd::Constant(1, 0.2);
    b.sigma = Eigen::VectorXd::Constant(1, 0.1);
    b.support = box_polytope(Eigen::VectorXd::Constant(1, -0.1), Eigen::VectorXd::Constant(1, 0.6));
    spec.modes = {a, b};
    MeanMadSpec p = pooled_spec(spec);
    CHECK(p.mu[0] == doctest::Approx(0.1));
    CHECK(p.sigma[0] == doctest::Approx(0.25 * (0.05 + 0.3) + 0.75 * (0.1 + 0.1)));
    Eigen::VectorXd lo, hi;
    p.support.bounding_box(lo, hi);
    CHECK(lo[0] == doctest::Approx(-0.5));
    CHECK(hi[0] == doctest::Approx(0.6));
}
