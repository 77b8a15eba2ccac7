#include <doctest.h>

#include <random>

#include "drccots/errors.hpp"
#include "drccots/model.hpp"

using namespace drccots;

TEST_CASE("affine expressions merge and evaluate") {
    Affine e(2.0);
    e.add(1, 3.0).add(0, 1.0).add(1, -3.0).add(2, 0.5);
    Affine f;
    f.add(0, 2.0);
    f.constant = 1.0;
    e.add(f, -1.0);
    e.normalize();
    REQUIRE(e.terms.size() == 2);
    CHECK(e.terms[0].var == 0);
    CHECK(e.terms[0].coef == -1.0);
    CHECK(e.terms[1].var == 2);
    CHECK(e.constant == 1.0);
    CHECK(e.value({4.0, 100.0, 2.0}) == doctest::Approx(1.0 - 4.0 + 1.0));
    CHECK(Affine(3.0).is_constant());
}

TEST_CASE("bound ranges and fixed variables") {
    MilpModel m;
    int x = m.add_var("x", VarKind::Continuous, -1.0, 2.0);
    int y = m.add_var("y", VarKind::Continuous, 0.5, 0.5);
    int z = m.add_binary("z");
    Affine e(1.0);
    e.add(x, 2.0).add(y, 4.0).add(z, -3.0);
    CHECK(m.max_over_bounds(e) == doctest::Approx(1.0 + 4.0 + 2.0));
    CHECK(m.min_over_bounds(e) == doctest::Approx(1.0 - 2.0 + 2.0 - 3.0));
    Affine folded = m.fold_fixed(e);
    CHECK(folded.terms.size() == 2);
    CHECK(folded.constant == doctest::Approx(3.0));
    CHECK(m.binaries() == std::vector<int>{z});
}

TEST_CASE("constraint moves the constant to the right-hand side") {
    MilpModel m;
    int x = m.add_var("x", VarKind::Continuous, 0.0, 10.0, 2.0);
    Affine lhs(4.0);
    lhs.add(x, 1.0);
    int r = m.add_con("c", lhs, Sense::Le, 6.0);
    CHECK(m.cons[r].rhs == 2.0);
    m.obj_offset = 1.5;
    CHECK(m.objective_value({3.0}) == doctest::Approx(7.5));
    CHECK(m.max_violation({3.0}) == doctest::Approx(1.0));
    CHECK(m.max_violation({1.0}) == 0.0);
    CHECK(m.max_violation({-2.0}) == doctest::Approx(2.0));
}

TEST_CASE("model validation") {
    MilpModel m;
    m.add_var("x", VarKind::Continuous, 0.0, 1.0);
    CHECK_NOTHROW(m.validate());
    MilpModel a = m;
    a.vars[0].ub = kInf;
    CHECK_THROWS_AS(a.validate(), Error);
    MilpModel b = m;
    b.vars[0].lb = 2.0;
    try {
        b.validate();
        FAIL("accepted lb > ub");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InfeasibleBounds);
    }
    MilpModel c = m;
    c.cons.push_back({"bad", {{3, 1.0}}, Sense::Le, 0.0});
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("LP text round-trip") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int t = 0; t < 10; ++t) {
        MilpModel m;
        m.meta = {"saa", 0.05, 2};
        for (int j = 0; j < 8; ++j) {
            if (j % 3 == 0) {
                m.add_binary("z" + std::to_string(j), u(rng));
            } else {
                double lo = u(rng);
                m.add_var("x" + std::to_string(j), VarKind::Continuous, lo, lo + 3.0, u(rng));
            }
        }
        m.obj_offset = u(rng);
        for (int i = 0; i < 6; ++i) {
            std::vector<Term> terms;
            for (int j = 0; j < 8; ++j) {
                if ((i + j) % 3 != 0) terms.push_back({j, u(rng)});
            }
            m.add_con("r" + std::to_string(i), terms, static_cast<Sense>(i % 3), u(rng));
        }
        std::string text = m.to_lp();
        MilpModel back = MilpModel::from_lp(text);
        CHECK(back.to_lp() == text);
        REQUIRE(back.num_vars() == m.num_vars());
        REQUIRE(back.num_cons() == m.num_cons());
        CHECK(back.meta.method == "saa");
        CHECK(back.meta.lines_out == 2);
        for (int j = 0; j < 8; ++j) {
            CHECK(back.vars[j].kind == m.vars[j].kind);
            CHECK(back.vars[j].lb == m.vars[j].lb);
            CHECK(back.obj[j] == m.obj[j]);
        }
        CHECK(back.obj_offset == m.obj_offset);
        std::vector<double> x(8, 0.25);
        CHECK(back.max_violation(x) == doctest::Approx(m.max_violation(x)).epsilon(1e-15));
    }
    // Variables without a bounds line get [0, inf).
    MilpModel loose = MilpModel::from_lp("minimize\n obj: + 1 x\nsubject to\n c: + 1 y <= 3\nend\n");
    CHECK(loose.num_vars() == 2);
    CHECK(loose.vars[1].ub == kInf);
    CHECK_THROWS_AS(loose.validate(), Error);
    CHECK_THROWS_AS(MilpModel::from_lp("minimize\n obj: + 1 x\n"), Error);
    CHECK_THROWS_AS(MilpModel::from_lp("minimize\n obj: + x\nend\n"), Error);
}
