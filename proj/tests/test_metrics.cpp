#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dpinn/metrics.hpp"
#include "dpinn/schemes.hpp"

using namespace dpinn;

TEST_CASE("relative_l2 basics", "[metrics]") {
    std::vector<double> ref = {1.0, -2.0, 0.5, 3.0};
    CHECK(relative_l2(ref, ref) == 0.0);

    std::vector<double> zero(ref.size(), 0.0);
    CHECK(relative_l2(zero, ref) == 1.0);

    std::vector<double> scaled = ref;
    for (auto& v : scaled) v *= 1.01;
    CHECK(relative_l2(scaled, ref) == Catch::Approx(0.01).epsilon(1e-12));

    CHECK_THROWS_AS(relative_l2(ref, zero), DegenerateReference);
    std::vector<double> short_vec = {1.0};
    CHECK_THROWS_AS(relative_l2(short_vec, ref), ShapeError);
}

TEST_CASE("relative_l2 is invariant under joint rescaling", "[metrics]") {
    std::vector<double> ref = {0.3, 1.7, -0.4, 2.2, -3.1};
    std::vector<double> pred = {0.31, 1.68, -0.38, 2.26, -3.05};
    const double base = relative_l2(pred, ref);
    for (double c : {7.0, -0.03, 1e6}) {
        auto r2 = ref;
        auto p2 = pred;
        for (auto& v : r2) v *= c;
        for (auto& v : p2) v *= c;
        CHECK(relative_l2(p2, r2) == Catch::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("convergence_order on synthetic data", "[metrics]") {
    std::vector<std::pair<double, double>> quad = {{0.1, 0.01}, {0.05, 0.0025}, {0.025, 0.000625}};
    CHECK(convergence_order(quad) == Catch::Approx(2.0).margin(1e-12));

    std::vector<std::pair<double, double>> lin = {{0.1, 0.3}, {0.05, 0.15}, {0.025, 0.075}};
    CHECK(convergence_order(lin) == Catch::Approx(1.0).margin(1e-12));

    // e = C h^p recovered to 1e-10.
    const double C = 2.7, p = 3.41;
    std::vector<std::pair<double, double>> synth;
    for (double h : {0.2, 0.1, 0.05, 0.025, 0.0125}) synth.emplace_back(h, C * std::pow(h, p));
    CHECK(convergence_order(synth) == Catch::Approx(p).margin(1e-10));
}

TEST_CASE("convergence_order input validation", "[metrics]") {
    std::vector<std::pair<double, double>> two = {{0.1, 0.01}, {0.05, 0.0025}};
    CHECK_THROWS_AS(convergence_order(two), DomainError);
    std::vector<std::pair<double, double>> negative = {{0.1, 0.01}, {0.05, -1.0}, {0.025, 0.1}};
    CHECK_THROWS_AS(convergence_order(negative), DomainError);
    std::vector<std::pair<double, double>> unsorted = {{0.05, 0.01}, {0.1, 0.01}, {0.025, 0.1}};
    CHECK_THROWS_AS(convergence_order(unsorted), DomainError);
}

TEST_CASE("CN time stepping of u' = -u fits order two", "[metrics][schemes]") {
    auto cn = builtin_tableau("crank_nicolson");
    std::vector<std::pair<double, double>> pts;
    for (double tau : {0.1, 0.05, 0.025, 0.0125}) {
        const int n = static_cast<int>(std::round(1.0 / tau));
        pts.emplace_back(tau, std::abs(solve_linear_ode(cn, -1.0, 1.0, n) - std::exp(-1.0)));
    }
    CHECK(convergence_order(pts) == Catch::Approx(2.0).margin(0.05));
}

TEST_CASE("per_timestamp_l2 slices correctly", "[metrics]") {
    // Two timestamps of three points each.
    std::vector<double> ref = {1, 1, 1, 2, 2, 2};
    std::vector<double> pred = {1, 1, 1, 2.2, 2.2, 2.2};
    auto per = per_timestamp_l2(pred, ref, 2, 3);
    REQUIRE(per.size() == 2);
    CHECK(per[0] == 0.0);
    CHECK(per[1] == Catch::Approx(0.1).epsilon(1e-12));
}
