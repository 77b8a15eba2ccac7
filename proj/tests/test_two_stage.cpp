#include <doctest.h>

#include <random>

#include "drccots/errors.hpp"
#include "drccots/lp_solver.hpp"
#include "drccots/two_stage.hpp"
#include "grid_oracles.hpp"

using namespace drccots;

namespace {

GridCase fixture(const char* name) { return load_case_file(std::string(DRCCOTS_DATA_DIR) + "/cases/" + name); }

}  // namespace

TEST_CASE("row set has two rows per bus quantity and per line") {
    GridCase g = fixture("ieee14.json");
    auto ops = build_operators(g);
    MilpModel m;
    auto lay = add_first_stage(m, g, ops, 3, 2);
    auto rows = cc_row_set(g, lay);
    CHECK(rows.size() == static_cast<std::size_t>(2 * (3 * g.num_buses() + g.num_lines())));
    CHECK(rows.front().kind == RowKind::ReserveUpper);
    CHECK(rows.back().kind == RowKind::FlowLower);
    for (const auto& r : rows) CHECK(r.a.size() == 3u);
}

TEST_CASE("recourse maps match a dense dc re-solve") {
    GridCase g = fixture("ieee14.json");
    auto ops = build_operators(g);
    Eigen::MatrixXd F = placement_matrix(g);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<int> z(g.num_lines(), 1);
        z[trial % g.num_lines()] = trial % 3 == 0 ? 1 : 0;
        std::vector<bool> closed(z.begin(), z.end());
        if (!is_connected(g, closed)) continue;
        Eigen::VectorXd gamma = Eigen::VectorXd::Zero(g.num_buses());
        for (const auto& gen : g.generators) gamma[g.bus_index(gen.bus)] = u(rng);
        gamma /= gamma.sum();
        auto Y = recourse_matrices(g, ops, z, gamma, F);
        Eigen::VectorXd xi(3);
        for (int k = 0; k < 3; ++k) xi[k] = u(rng) - 0.5;
        Eigen::VectorXd p = gamma * xi.sum() - F * xi;
        Eigen::VectorXd th = oracle::dense_dc(g, z, p);
        CHECK((Y.Y_theta * xi - th).cwiseAbs().maxCoeff() < 1e-8);
        Eigen::MatrixXd A = Eigen::MatrixXd(ops.A);
        Eigen::MatrixXd bal = A * Y.Y_f - (gamma * Eigen::RowVectorXd::Ones(3) - F);
        CHECK(bal.cwiseAbs().maxCoeff() < 1e-9);
        CHECK(Y.Y_f.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("recourse maps are reproducible and reject islands") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    Eigen::MatrixXd F = placement_matrix(g);
    Eigen::VectorXd gamma(3);
    gamma << 0.4, 0.6, 0.0;
    auto a = recourse_matrices(g, ops, {1, 1, 1}, gamma, F);
    auto b = recourse_matrices(g, ops, {1, 1, 1}, gamma, F);
    CHECK(a.Y_theta == b.Y_theta);
    CHECK(a.Y_f == b.Y_f);
    CHECK(a.Y_theta(g.slack_index(), 0) == 0.0);
    CHECK_THROWS_AS(recourse_matrices(g, ops, {0, 1, 0}, gamma, F), Error);
    try {
        recourse_matrices(g, ops, {0, 1, 0}, gamma, F);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::IslandedTopology);
    }
}

TEST_CASE("balance block with fixed topology reproduces the recourse maps") {
    GridCase g = fixture("ieee14.json");
    auto ops = build_operators(g);
    Eigen::MatrixXd F = placement_matrix(g);
    MilpModel m;
    auto lay = add_first_stage(m, g, ops, 3, 1);
    balance_equality_block(m, ops, lay, F);
    flow_dual_blocks(m, g, ops, lay, box_polytope(Eigen::VectorXd::Constant(3, -0.1), Eigen::VectorXd::Constant(3, 0.1)));
    std::vector<int> z(g.num_lines(), 1);
    z[5] = 0;
    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(g.num_buses());
    gamma[0] = 0.5;
    gamma[1] = 0.3;
    gamma[2] = 0.2;
    for (int l = 0; l < lay.L; ++l) m.vars[lay.z[l]].lb = m.vars[lay.z[l]].ub = z[l];
    for (int n = 0; n < lay.N; ++n) m.vars[lay.gamma[n]].lb = m.vars[lay.gamma[n]].ub = gamma[n];
    auto r = solve_lp(m);
    REQUIRE(r.status == LpStatus::Optimal);
    auto Y = read_recourse(lay, r.x);
    auto exact = recourse_matrices(g, ops, z, gamma, F);
    CHECK((Y.Y_theta - exact.Y_theta).cwiseAbs().maxCoeff() < 1e-7);
    CHECK((Y.Y_f - exact.Y_f).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("dualized flow rows agree with vertex enumeration") {
    GridCase g = fixture("three_bus.json");
    auto ops = build_operators(g);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int agree = 0, total = 0, feasible_count = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int K = 1 + trial % 2;
        Eigen::VectorXd lo(K), hi(K);
        for (int k = 0; k < K; ++k) {
            lo[k] = -0.2 - 0.1 * std::abs(u(rng));
            hi[k] = 0.2 + 0.1 * std::abs(u(rng));
        }
        Polytope xi = box_polytope(lo, hi);
        MilpModel m;
        DecisionLayout lay;
        lay.N = 3;
        lay.L = 3;
        lay.K = K;
        lay.y_theta_bound = 10.0;
        Eigen::VectorXd th(3), f(3);
        Eigen::MatrixXd Yt(3, K), Yf(3, K);
        std::vector<int> z{trial % 4 == 0 ? 0 : 1, 1, 1};
        for (int n = 0; n < 3; ++n) {
            th[n] = 0.05 * u(rng);
            for (int k = 0; k < K; ++k) Yt(n, k) = 0.05 * u(rng);
        }
        Eigen::MatrixXd Kd = Eigen::MatrixXd(ops.K);
        // Closed lines are either consistent or perturbed away from consistency.
        std::vector<bool> exact(3);
        for (int l = 0; l < 3; ++l) {
            exact[l] = z[l] && u(rng) > -0.3;
            double shift = exact[l] ? 0.0 : 0.05 + 0.3 * std::abs(u(rng));
            f[l] = z[l] ? (Kd.row(l) * th)(0) + shift : 0.0;
            for (int k = 0; k < K; ++k) Yf(l, k) = z[l] ? (Kd.row(l) * Yt.col(k))(0) : 0.0;
        }
        auto fix = [&](const std::string& n, double v) { return m.add_var(n, VarKind::Continuous, v, v); };
        for (int n = 0; n < 3; ++n) lay.theta.push_back(fix("th" + std::to_string(n), th[n]));
        for (int l = 0; l < 3; ++l) {
            lay.f.push_back(fix("f" + std::to_string(l), f[l]));
            lay.z.push_back(m.add_var("z" + std::to_string(l), VarKind::Binary, z[l], z[l]));
        }
        lay.y_theta.assign(3, {});
        lay.y_f.assign(3, {});
        for (int k = 0; k < K; ++k) {
            for (int n = 0; n < 3; ++n) lay.y_theta[n].push_back(fix("yt" + std::to_string(n * 3 + k), Yt(n, k)));
            for (int l = 0; l < 3; ++l) lay.y_f[l].push_back(fix("yf" + std::to_string(l * 3 + k), Yf(l, k)));
        }
        flow_dual_blocks(m, g, ops, lay, xi);
        bool robust = true;
        double margin = kInf;
        for (const auto& v : xi.box_vertices()) {
            for (int l = 0; l < 3; ++l) {
                double diff = (Kd.row(l) * (th + Yt * v))(0) - (f[l] + (Yf * v)(l));
                double M = ops.M[l] * (1 - z[l]);
                double s1 = diff + M, s2 = -diff + M;
                if (!exact[l]) margin = std::min({margin, std::abs(s1), std::abs(s2)});
                robust = robust && s1 >= -1e-9 && s2 >= -1e-9;
            }
        }
        if (margin < 1e-5) continue;
        auto r = solve_lp(m);
        bool lp_feasible = r.status == LpStatus::Optimal;
        ++total;
        feasible_count += robust;
        agree += lp_feasible == robust;
    }
    CHECK(total > 30);
    CHECK(agree == total);
    CHECK(feasible_count > 0);
    CHECK(feasible_count < total);
}
