#include "koopflow/errors.hpp"
#include "koopflow/systems.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace koopflow;

namespace {

Vector roll(const Vector& v, int s) {
    Vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out((i + s) % v.size()) = v(i);
    return out;
}

// Piecewise-linear interpolation of (xs, ys) at x; xs ascending.
double interp(const Vector& xs, const Vector& ys, double x) {
    Eigen::Index i = 0;
    while (i + 1 < xs.size() && xs(i + 1) < x) ++i;
    const double w = (x - xs(i)) / (xs(i + 1) - xs(i));
    return (1.0 - w) * ys(i) + w * ys(i + 1);
}

SystemParams params(SystemKind kind) {
    SystemParams p;
    p.kind = kind;
    return p;
}

}  // namespace

TEST_CASE("fixed point map: origin, first step, conserved structure") {
    const Trajectory zero = simulate_fixed_point(Eigen::Vector2d(0, 0), 10);
    CHECK(zero.states.isZero(0.0));
    CHECK(zero.steps() == 10);

    const Trajectory one = simulate_fixed_point(Eigen::Vector2d(1, 1), 5);
    CHECK(one.states(1, 0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(one.states(1, 1) == doctest::Approx(0.81).epsilon(1e-15));

    const Trajectory t = simulate_fixed_point(Eigen::Vector2d(3.1, -0.7), 60);
    for (int k = 0; k < 60; ++k) {
        const double y0 = t.states(k, 1) - t.states(k, 0) * t.states(k, 0);
        const double y1 = t.states(k + 1, 1) - t.states(k + 1, 0) * t.states(k + 1, 0);
        CHECK(std::abs(y1 - 0.5 * y0) < 1e-12);
    }
    CHECK_THROWS_AS(simulate_fixed_point(Eigen::Vector2d(1, 1), 0), ConfigError);
}

TEST_CASE("Burgers: zero solution, boundary, energy decay, grid refinement") {
    const Trajectory z = solve_burgers(0.0);
    CHECK(z.states.isZero(0.0));
    CHECK(z.states.rows() == 101);
    CHECK(z.states.cols() == 30);

    BurgersOptions with_bc;
    with_bc.include_boundary = true;
    const Trajectory b = solve_burgers(0.9, with_bc);
    CHECK(b.states.cols() == 32);
    CHECK(b.states.col(0).isZero(0.0));
    CHECK(b.states.col(31).isZero(0.0));

    for (double xi : {0.2, 0.7, 1.2}) {
        const Trajectory t = solve_burgers(xi);
        CHECK(t.states.allFinite());
        for (int k = 0; k < t.steps(); ++k)
            CHECK(t.states.row(k + 1).squaredNorm() <= t.states.row(k).squaredNorm() + 1e-8);
    }

    BurgersOptions bad;
    bad.nx = 3;
    CHECK_THROWS_AS(solve_burgers(0.5, bad), ConfigError);
}

namespace {

// Relative L2 gap at step `step` between nx=30 and nx=120, the fine solution
// interpolated onto the coarse grid.
double refinement_gap(double xi, int step) {
    BurgersOptions fine_opts;
    fine_opts.nx = 120;
    const Trajectory coarse = solve_burgers(xi), fine = solve_burgers(xi, fine_opts);
    const Vector xc = burgers_grid(30), xf = burgers_grid(120);
    const Vector uf = fine.states.row(step).transpose();
    Vector sampled(30);
    for (int i = 0; i < 30; ++i) sampled(i) = interp(xf, uf, xc(i));
    return (coarse.states.row(step).transpose() - sampled).norm() / sampled.norm();
}

}  // namespace

TEST_CASE("Burgers grid refinement while the solution is resolved") {
    CHECK(refinement_gap(0.7, 30) < 0.05);   // before the shock forms (t ~ 0.45)
    CHECK(refinement_gap(0.2, 100) < 0.05);  // weak initial state, t = 1
}

// Once the shock has formed its width (~nu / xi) is far below the coarse
// spacing and central differences leave grid-scale wiggles, so this gap is
// about 0.2. Reported, not enforced.
TEST_CASE("Burgers grid refinement after the shock, xi = 0.7, t = 1" * doctest::may_fail()) {
    const double gap = refinement_gap(0.7, 100);
    MESSAGE("relative gap " << gap);
    CHECK(gap < 0.05);
}

TEST_CASE("Burgers: Newton failure reports the step") {
    BurgersOptions opts;
    opts.newton.max_iterations = 1;
    opts.newton.tolerance = 1e-30;
    try {
        solve_burgers(1.0, opts);
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK(e.step() == 1);
    }
}

TEST_CASE("Allen-Cahn: equilibria, periodic relabeling, bounds") {
    CHECK(solve_allen_cahn(0.0).states.isZero(0.0));
    const Trajectory ones = solve_allen_cahn_from(Vector::Ones(20));
    CHECK((ones.states.array() - 1.0).abs().maxCoeff() < 1e-10);

    const Trajectory base = solve_allen_cahn(-0.3);
    CHECK(base.states.rows() == 51);
    CHECK(base.states.cols() == 20);
    const Vector u0 = base.states.row(0).transpose();
    for (int s : {1, 7, 13}) {
        const Trajectory shifted = solve_allen_cahn_from(roll(u0, s));
        double worst = 0.0;
        for (int k = 0; k <= base.steps(); ++k)
            worst = std::max(worst, (shifted.states.row(k).transpose() - roll(base.states.row(k).transpose(), s))
                                        .cwiseAbs()
                                        .maxCoeff());
        CHECK(worst < 1e-10);
    }

    const Dataset ds = make_dataset(params(SystemKind::allen_cahn), 40, 9);
    for (const auto* split : {&ds.train, &ds.validation, &ds.test})
        for (const auto& t : *split) CHECK(t.states.cwiseAbs().maxCoeff() <= 1.5);
}

TEST_CASE("make_dataset: split sizes, determinism, disjointness") {
    const Dataset b = make_dataset(params(SystemKind::burgers), 100, 3, {}, 4);
    CHECK(b.train.size() == 60);
    CHECK(b.validation.size() == 20);
    CHECK(b.test.size() == 20);

    const Dataset f = make_dataset(params(SystemKind::fixed_point), 120, 42);
    CHECK(f.train.size() == 72);
    CHECK(f.validation.size() == 24);
    CHECK(f.test.size() == 24);
    std::set<int> ids;
    for (const auto* split : {&f.train, &f.validation, &f.test})
        for (const auto& t : *split) {
            ids.insert(t.sample_id);
            CHECK(t.states.rows() == 61);
            CHECK(t.parameter >= 0.2);
            CHECK(t.parameter <= 4.2);
        }
    CHECK(ids.size() == 120);

    // Thread count does not change the data; the seed does.
    const Dataset f1 = make_dataset(params(SystemKind::fixed_point), 120, 42, {}, 3);
    for (std::size_t i = 0; i < f.train.size(); ++i) CHECK(f.train[i].states == f1.train[i].states);
    const Dataset other = make_dataset(params(SystemKind::fixed_point), 120, 43);
    CHECK(other.train[0].states != f.train[0].states);

    CHECK_THROWS_AS(make_dataset(params(SystemKind::fixed_point), 4, 1), ConfigError);
}

TEST_CASE("Allen-Cahn draw uses variance 0.04") {
    const Dataset ds = make_dataset(params(SystemKind::allen_cahn), 400, 5, {}, 4);
    std::vector<double> xi;
    for (const auto* split : {&ds.train, &ds.validation, &ds.test})
        for (const auto& t : *split) xi.push_back(t.parameter);
    double m = 0.0;
    for (double v : xi) m += v;
    m /= static_cast<double>(xi.size());
    double var = 0.0;
    for (double v : xi) var += (v - m) * (v - m);
    var /= static_cast<double>(xi.size() - 1);
    CHECK(std::abs(m + 0.1) < 0.04);
    CHECK(std::abs(var - 0.04) < 0.01);
}

TEST_CASE("solver failures name the sample") {
    SystemParams p = params(SystemKind::burgers);
    p.burgers.newton.max_iterations = 1;
    p.burgers.newton.tolerance = 1e-30;
    try {
        make_dataset(p, 5, 1);
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK(std::string(e.what()).find("sample") != std::string::npos);
    }
}

TEST_CASE("dataset file round trip and csv") {
    const Dataset ds = make_dataset(params(SystemKind::fixed_point), 10, 8);
    std::stringstream ss;
    write_dataset(ds, ss);
    const std::string first = ss.str();
    const Dataset back = read_dataset(ss);
    CHECK(back.train.size() == ds.train.size());
    CHECK(back.test[1].states == ds.test[1].states);
    CHECK(back.seed == 8);
    std::stringstream again;
    write_dataset(back, again);
    CHECK(again.str() == first);

    std::stringstream bad("garbage");
    CHECK_THROWS_AS(read_dataset(bad), IoError);

    std::stringstream csv;
    write_dataset_csv(ds, csv);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "sample_id,split,t,x_1,x_2");
    int lines = 0;
    for (std::string l; std::getline(csv, l);) ++lines;
    CHECK(lines == 10 * 61);
}

TEST_CASE("system names") {
    CHECK(parse_system_kind("allen_cahn") == SystemKind::allen_cahn);
    CHECK(to_string(SystemKind::burgers) == "burgers");
    CHECK_THROWS_AS(parse_system_kind("lorenz"), ConfigError);
}
