#include <doctest.h>

#include <random>

#include <json.hpp>

#include "drccots/case_model.hpp"
#include "drccots/errors.hpp"

using namespace drccots;
using nlohmann::json;

namespace {

json triangle() {
    return json::parse(R"({
      "name": "tri", "base_mva": 100, "slack_bus": 1,
      "buses": [{"id": 1}, {"id": 2}, {"id": 3}],
      "lines": [{"from": 1, "to": 2, "susceptance": 10, "flow_max": 50},
                {"from": 2, "to": 3, "susceptance": 10, "flow_max": 50},
                {"from": 1, "to": 3, "susceptance": 10, "flow_max": 50}],
      "generators": [{"bus": 1, "pmin": 0, "pmax": 100, "rmin": -20, "rmax": 20, "cost": 10, "recourse_cost": 1}],
      "loads": {"3": 60},
      "wind_buses": [2]
    })");
}

ErrorKind kind_of(const json& doc) {
    try {
        parse_case(doc.dump());
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error raised");
    return ErrorKind::Io;
}

}  // namespace

TEST_CASE("triangle case parses") {
    GridCase g = parse_case(triangle().dump());
    CHECK(g.num_buses() == 3);
    CHECK(g.num_lines() == 3);
    CHECK(g.slack_index() == 0);
    BusData d = bus_data(g);
    CHECK(d.gmax[0] == doctest::Approx(1.0));
    CHECK(d.gmax[1] == 0.0);
    CHECK(d.load[2] == doctest::Approx(0.6));
    CHECK(d.rmin[0] == doctest::Approx(-0.2));
    CHECK(d.flow_max[1] == doctest::Approx(0.5));
    CHECK(d.has_generator[0]);
    CHECK_FALSE(d.has_generator[2]);
}

TEST_CASE("14-bus fixture shape") {
    GridCase g = load_case_file(std::string(DRCCOTS_DATA_DIR) + "/cases/ieee14.json");
    CHECK(g.num_buses() == 14);
    CHECK(g.num_lines() == 20);
    CHECK(g.generators.size() == 5);
    CHECK(g.wind_buses == std::vector<int>{3, 6, 13});
    Eigen::MatrixXd F = placement_matrix(g);
    CHECK(F.rows() == 14);
    CHECK(F.cols() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(F.col(k).sum() == 1.0);
        CHECK(F(g.bus_index(g.wind_buses[k]), k) == 1.0);
    }
}

TEST_CASE("invalid case documents") {
    json d = triangle();
    d["lines"][0]["to"] = 4;
    CHECK(kind_of(d) == ErrorKind::DanglingLineEndpoint);
    d = triangle();
    d["generators"][0]["pmin"] = 200;
    CHECK(kind_of(d) == ErrorKind::InfeasibleBounds);
    d = triangle();
    d["generators"][0]["rmin"] = 5;
    CHECK(kind_of(d) == ErrorKind::InfeasibleBounds);
    d = triangle();
    d["buses"][1]["theta_min"] = 1.0;
    CHECK(kind_of(d) == ErrorKind::InfeasibleBounds);
    d = triangle();
    d["buses"].push_back({{"id", 4}});
    CHECK(kind_of(d) == ErrorKind::DisconnectedBaseGraph);
    d = triangle();
    d["lines"][0]["susceptance"] = 0.0;
    CHECK(kind_of(d) != ErrorKind::Io);
    d = triangle();
    d.erase("buses");
    CHECK(kind_of(d) == ErrorKind::MalformedDocument);
    CHECK_THROWS_AS(parse_case("{not json"), Error);
}

TEST_CASE("operators on the triangle match the hand-built matrices") {
    GridCase g = parse_case(triangle().dump());
    NetworkOperators ops = build_operators(g);
    // Incidence with +1 at the from bus, branch matrix b (e_from - e_to)^T.
    Eigen::MatrixXd A(3, 3), K(3, 3);
    A << 1, 0, 1, -1, 1, 0, 0, -1, -1;
    K << 10, -10, 0, 0, 10, -10, 10, 0, -10;
    CHECK((Eigen::MatrixXd(ops.A) - A).cwiseAbs().maxCoeff() == 0.0);
    CHECK((Eigen::MatrixXd(ops.K) - K).cwiseAbs().maxCoeff() == 0.0);
    Eigen::Vector3d theta(0.0, 0.1, 0.2);
    Eigen::VectorXd f = ops.K * theta;
    CHECK(f[0] == doctest::Approx(-1.0));
    CHECK(f[1] == doctest::Approx(-1.0));
    CHECK(f[2] == doctest::Approx(-2.0));
    Eigen::VectorXd p = ops.A * f;
    CHECK(p[0] == doctest::Approx(-3.0));
    CHECK(p[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(3.0));
    Eigen::VectorXd zero = ops.K * Eigen::Vector3d::Zero();
    CHECK(zero.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("big-M is susceptance times the angle spread") {
    GridCase g = parse_case(triangle().dump());
    NetworkOperators ops = build_operators(g, Eigen::Vector3d(0.4, 0.4, 0.4));
    CHECK(ops.M[0] == doctest::Approx(4.0));
    Eigen::VectorXd dflt = default_dtheta_max(g);
    for (int l = 0; l < 3; ++l) CHECK(dflt[l] == doctest::Approx(1.2));
    json d = triangle();
    d["lines"][1]["dtheta_max"] = 0.3;
    d["buses"][0]["theta_max"] = 0.2;
    d["buses"][0]["theta_min"] = -0.1;
    GridCase g2 = parse_case(d.dump());
    Eigen::VectorXd dd = default_dtheta_max(g2);
    CHECK(dd[1] == doctest::Approx(0.3));
    CHECK(dd[0] == doctest::Approx(0.8));  // max(0.2 + 0.6, 0.6 + 0.1)
    NetworkOperators o2 = build_operators(g2);
    for (int l = 0; l < 3; ++l) CHECK(o2.M[l] == doctest::Approx(10.0 * dd[l]));
}

TEST_CASE("incidence columns and flow conservation") {
    GridCase g = load_case_file(std::string(DRCCOTS_DATA_DIR) + "/cases/ieee14.json");
    NetworkOperators ops = build_operators(g);
    Eigen::MatrixXd A(ops.A);
    for (int l = 0; l < g.num_lines(); ++l) {
        CHECK(A.col(l).maxCoeff() == 1.0);
        CHECK(A.col(l).minCoeff() == -1.0);
        CHECK(A.col(l).cwiseAbs().sum() == 2.0);
        CHECK(ops.M[l] > 0.0);
    }
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd th(14);
        for (int i = 0; i < 14; ++i) th[i] = u(rng);
        Eigen::VectorXd p = ops.A * (ops.K * th);
        CHECK(std::abs(p.sum()) < 1e-9);
    }
}

TEST_CASE("reduced network matrix is invertible for connected topologies") {
    GridCase g = load_case_file(std::string(DRCCOTS_DATA_DIR) + "/cases/ieee14.json");
    NetworkOperators ops = build_operators(g);
    Eigen::MatrixXd A(ops.A), K(ops.K);
    std::mt19937_64 rng(8);
    int checked = 0;
    for (int t = 0; t < 200 && checked < 30; ++t) {
        std::vector<bool> closed(g.num_lines(), true);
        for (int k = 0; k < 3; ++k) closed[rng() % g.num_lines()] = false;
        if (!is_connected(g, closed)) continue;
        Eigen::MatrixXd Az = A, Kz = K;
        for (int l = 0; l < g.num_lines(); ++l) {
            if (!closed[l]) Kz.row(l).setZero();
        }
        Eigen::MatrixXd B = Az * Kz;
        const int s = g.slack_index();
        Eigen::MatrixXd R(13, 13);
        for (int i = 0, ri = 0; i < 14; ++i) {
            if (i == s) continue;
            for (int j = 0, rj = 0; j < 14; ++j) {
                if (j == s) continue;
                R(ri, rj++) = B(i, j);
            }
            ++ri;
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
        double cond = svd.singularValues()(0) / svd.singularValues()(12);
        CHECK(cond < 1e12);
        ++checked;
    }
    CHECK(checked == 30);
    std::vector<bool> none(g.num_lines(), false);
    CHECK_FALSE(is_connected(g, none));
}

TEST_CASE("serialize and parse round-trip") {
    for (const char* name : {"three_bus.json", "ieee14.json"}) {
        GridCase g = load_case_file(std::string(DRCCOTS_DATA_DIR) + "/cases/" + name);
        std::string once = serialize_case(g);
        GridCase back = parse_case(once);
        CHECK(serialize_case(back) == once);
        REQUIRE(back.num_lines() == g.num_lines());
        for (int l = 0; l < g.num_lines(); ++l) {
            CHECK(back.lines[l].susceptance == g.lines[l].susceptance);
            CHECK(back.lines[l].flow_max == g.lines[l].flow_max);
            CHECK(back.lines[l].switchable == g.lines[l].switchable);
        }
        CHECK(back.loads == g.loads);
        CHECK(back.wind_buses == g.wind_buses);
    }
}

TEST_CASE("flow limit scaling") {
    GridCase g = parse_case(triangle().dump());
    GridCase s = flow_limit_scale(g, 0.5);
    for (int l = 0; l < 3; ++l) CHECK(s.lines[l].flow_max == doctest::Approx(25.0));
    CHECK(g.lines[0].flow_max == 50.0);
    CHECK_THROWS_AS(flow_limit_scale(g, 0.0), Error);
}

TEST_CASE("MATPOWER tables import") {
    const char* text = R"(function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0 0 0 1 1 0 135 1 1.05 0.95;
  2 2 20 0 0 0 1 1 0 135 1 1.05 0.95;
  3 1 45 0 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [
  1 0 0 10 -10 1 100 1 80 0;
  2 0 0 10 -10 1 100 1 60 5;
];
mpc.branch = [
  1 2 0.01 0.1 0 40 0 0 0 0 1 -360 360;
  2 3 0.01 0.2 0 0 0 0 0 0 1 -360 360;
  1 3 0.01 0.25 0 30 0 0 0 0 0 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.01 12 0;
  2 0 0 3 0.02 20 0;
];
)";
    GridCase g = parse_matpower(text);
    CHECK(g.num_buses() == 3);
    CHECK(g.num_lines() == 2);  // third branch is out of service
    CHECK(g.slack_bus == 1);
    CHECK(g.lines[0].susceptance == doctest::Approx(10.0));
    CHECK(g.lines[0].flow_max == 40.0);
    CHECK(g.lines[1].flow_max == 9999.0);
    REQUIRE(g.generators.size() == 2);
    CHECK(g.generators[0].cost == 12.0);
    CHECK(g.generators[1].pmin == 5.0);
    CHECK(g.generators[1].rmax == doctest::Approx(12.0));
    CHECK(g.loads.at(3) == 45.0);
}
