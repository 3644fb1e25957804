#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "dpinn/autodiff.hpp"
#include "dpinn/network.hpp"
#include "dpinn/tape.hpp"
#include "dpinn/tower.hpp"

using namespace dpinn;

namespace {

double rel_err(double got, double want) {
    const double scale = std::max({std::abs(got), std::abs(want), 1e-12});
    return std::abs(got - want) / scale;
}

// Central finite difference d/dh of f at 0.
double central_fd(const std::function<double(double)>& f, double h) {
    return (f(h) - f(-h)) / (2.0 * h);
}

} // namespace

TEST_CASE("tower of tanh matches analytic derivatives", "[tower]") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const double x = 3.0 * (2.0 * rng.uniform() - 1.0);
        auto tw = dpinn::tanh(DerivativeTower::variable(x, 4));
        const double t = std::tanh(x), s = 1.0 - t * t;
        CHECK(rel_err(tw.deriv(0), t) < 1e-12);
        CHECK(rel_err(tw.deriv(1), s) < 1e-12);
        CHECK(rel_err(tw.deriv(2), -2.0 * t * s) < 1e-10);
        CHECK(rel_err(tw.deriv(3), s * (6.0 * t * t - 2.0)) < 1e-10);
        CHECK(rel_err(tw.deriv(4), t * s * (16.0 * s - 8.0 * t * t)) < 1e-10);
    }
}

TEST_CASE("tower trig and exp match analytic derivatives", "[tower]") {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const double x = 4.0 * (2.0 * rng.uniform() - 1.0);
        auto v = DerivativeTower::variable(x, 4);
        auto s = dpinn::sin(v), c = dpinn::cos(v), e = dpinn::exp(v);
        const double sx = std::sin(x), cx = std::cos(x), ex = std::exp(x);
        const double sinw[5] = {sx, cx, -sx, -cx, sx};
        const double cosw[5] = {cx, -sx, -cx, sx, cx};
        for (int k = 0; k <= 4; ++k) {
            CHECK(rel_err(s.deriv(k), sinw[k]) < 1e-10);
            CHECK(rel_err(c.deriv(k), cosw[k]) < 1e-10);
            CHECK(rel_err(e.deriv(k), ex) < 1e-10);
        }
    }
}

TEST_CASE("tower product obeys the Leibniz rule exactly", "[tower]") {
    // sin(x) cos(2x) = (sin 3x - sin x) / 2, whose derivatives are closed form.
    SplitMix64 rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const double x = 2.0 * (2.0 * rng.uniform() - 1.0);
        auto v = DerivativeTower::variable(x, 4);
        auto p = dpinn::sin(v) * dpinn::cos(2.0 * v);
        auto ref = [&](int k) {
            const double a = std::pow(3.0, k), b = 1.0;
            const double s3 = std::sin(3 * x + k * std::numbers::pi / 2);
            const double s1 = std::sin(x + k * std::numbers::pi / 2);
            return 0.5 * (a * s3 - b * s1);
        };
        for (int k = 0; k <= 4; ++k) CHECK(rel_err(p.deriv(k), ref(k)) < 1e-10);
    }
}

TEST_CASE("tower shift and truncation", "[tower]") {
    auto v = DerivativeTower::variable(0.3, 4);
    auto s = dpinn::sin(v);
    auto sh = s.shifted();  // tower of cos(x)
    CHECK(rel_err(sh.deriv(0), std::cos(0.3)) < 1e-12);
    CHECK(rel_err(sh.deriv(1), -std::sin(0.3)) < 1e-12);
    CHECK(sh.order == 3);
    CHECK_THROWS_AS(s.deriv(5), OrderError);
    CHECK_THROWS_AS(DerivativeTower(5), OrderError);
}

TEST_CASE("taylor_eval on identity and tanh graphs", "[taylor_eval]") {
    // u(x) = x at x = 0.7, order 2 -> [0.7, 1, 0]
    {
        Tape t;
        TapeJet xj = TapeJet::variable(t, t.ext_in(0), 2);
        TapeWorkspace ws;
        t.prepare(ws);
        const double ext[1] = {0.7};
        t.forward(ws, {}, std::span<const double>(ext, 1));
        CHECK(ws.val[static_cast<std::size_t>(xj.c[0])] == 0.7);
        CHECK(ws.val[static_cast<std::size_t>(xj.c[1])] == 1.0);
        CHECK(xj.c[2] == kNoNode);  // structurally zero
    }
    // u(x) = tanh(x) at x = 0, order 2 -> [0, 1, 0]
    {
        Tape t;
        TapeJet xj = TapeJet::variable(t, t.ext_in(0), 2);
        TapeJet y = jet::tanh(t, xj);
        TapeWorkspace ws;
        t.prepare(ws);
        const double ext[1] = {0.0};
        t.forward(ws, {}, std::span<const double>(ext, 1));
        CHECK(ws.val[static_cast<std::size_t>(y.c[0])] == 0.0);
        CHECK(ws.val[static_cast<std::size_t>(y.c[1])] == 1.0);
        CHECK(std::abs(ws.val[static_cast<std::size_t>(y.c[2])]) < 1e-15);
    }
}

TEST_CASE("taylor_eval matches finite differences on a random MLP", "[taylor_eval]") {
    NetworkSpec spec;
    spec.arch = Arch::Plain;
    spec.depth = 2;
    spec.width = 12;
    spec.fourier_m = 0;
    Network net(spec);
    auto params = net.init(42);

    const double x = 0.3;
    auto tw = taylor_eval(net, params, x, 4);
    for (int k = 1; k <= 4; ++k) {
        auto lower = [&](double xx) { return taylor_eval(net, params, xx, 4).deriv(k - 1); };
        double best = 1e9;
        for (double h : {1e-3, 1e-4}) {
            const double fd = (lower(x + h) - lower(x - h)) / (2.0 * h);
            best = std::min(best, rel_err(tw.deriv(k), fd));
        }
        CHECK(best < 1e-5);
    }
}

TEST_CASE("grad of closed-form losses", "[grad]") {
    ParameterVector theta;
    theta.values = {1.0, -2.0, 3.0};
    theta.layout = {{"all", 0, 3}};

    auto g1 = grad(
        [](Tape& t, std::span<TapeScalar> p) {
            TapeScalar acc = p[0] * p[0];
            for (std::size_t i = 1; i < p.size(); ++i) acc = acc + p[i] * p[i];
            return 0.5 * acc;
        },
        theta);
    CHECK(g1.values == std::vector<double>{1.0, -2.0, 3.0});

    ParameterVector two;
    two.values = {2.0, 3.0};
    two.layout = {{"all", 0, 2}};
    auto g2 = grad([](Tape& t, std::span<TapeScalar> p) { return p[0] * p[1]; }, two);
    CHECK(g2.values == std::vector<double>{3.0, 2.0});
}

TEST_CASE("grad is linear in the loss", "[grad]") {
    SplitMix64 rng(5);
    ParameterVector theta;
    theta.values.resize(6);
    for (auto& v : theta.values) v = 2.0 * rng.uniform() - 1.0;
    theta.layout = {{"all", 0, 6}};

    auto l1 = [](Tape& t, std::span<TapeScalar> p) {
        return p[0] * p[1] + p[2] * p[2] * p[3];
    };
    auto l2 = [](Tape& t, std::span<TapeScalar> p) {
        TapeScalar s = p[4] * p[5] - 2.0 * p[0];
        return s * s;
    };
    const double a = 1.7, b = -0.4;
    auto combo = [&](Tape& t, std::span<TapeScalar> p) {
        return a * l1(t, p) + b * l2(t, p);
    };
    auto ga = grad(l1, theta), gb = grad(l2, theta), gc = grad(combo, theta);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(rel_err(gc.values[i], a * ga.values[i] + b * gb.values[i]) < 1e-12);
}

TEST_CASE("grad of an MLP mean-square loss matches finite differences", "[grad]") {
    NetworkSpec spec;
    spec.arch = Arch::Plain;
    spec.depth = 1;
    spec.width = 8;
    spec.fourier_m = 0;
    Network net(spec);
    auto params = net.init(3);

    const int npts = 8;
    std::vector<double> xs(npts), ys(npts);
    for (int i = 0; i < npts; ++i) {
        xs[static_cast<std::size_t>(i)] = -1.0 + 2.0 * i / (npts - 1);
        ys[static_cast<std::size_t>(i)] = std::sin(2.0 * xs[static_cast<std::size_t>(i)]);
    }
    auto loss_at = [&](const std::vector<double>& pv) {
        double acc = 0.0;
        for (int i = 0; i < npts; ++i) {
            const double u = net.eval(pv, xs[static_cast<std::size_t>(i)])[0];
            const double d = u - ys[static_cast<std::size_t>(i)];
            acc += d * d;
        }
        return acc / npts;
    };

    // Tape route: record the per-point residual once, replay point by point.
    Tape t;
    TapeJet xj = TapeJet::variable(t, t.ext_in(0), 0);
    NodeId target = t.ext_in(1);
    auto outs = net.record(t, xj, TapeJet{});
    NodeId resid = t.sub(outs[0].c[0], target);
    TapeWorkspace ws;
    t.prepare(ws);
    std::vector<double> g(params.size(), 0.0);
    for (int i = 0; i < npts; ++i) {
        const double ext[2] = {xs[static_cast<std::size_t>(i)], ys[static_cast<std::size_t>(i)]};
        t.forward(ws, params.values, std::span<const double>(ext, 2));
        ws.adj[static_cast<std::size_t>(resid)] =
            2.0 * ws.val[static_cast<std::size_t>(resid)] / npts;
        t.reverse(ws, params.values, g);
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto pv = params.values;
        auto f = [&](double h) {
            pv[i] = params.values[i] + h;
            double L = loss_at(pv);
            pv[i] = params.values[i];
            return L;
        };
        const double fd = central_fd(f, 1e-5);
        CHECK(std::abs(g[i] - fd) <= 1e-6 * std::max({1.0, std::abs(fd), std::abs(g[i])}));
    }
}

TEST_CASE("reverse-mode through spatial towers matches finite differences in theta",
          "[grad][taylor_eval]") {
    NetworkSpec spec;
    spec.arch = Arch::Modified;
    spec.depth = 2;
    spec.width = 6;
    spec.fourier_m = 2;
    spec.period_x = 2.0;
    Network net(spec);
    auto params = net.init(17);

    const double x = 0.37;
    Tape t;
    TapeJet xj = TapeJet::variable(t, t.ext_in(0), 2);
    auto outs = net.record(t, xj, TapeJet{});
    NodeId uxx = outs[0].c[2];
    REQUIRE(uxx != kNoNode);

    TapeWorkspace ws;
    t.prepare(ws);
    std::vector<double> g(params.size(), 0.0);
    const double ext[1] = {x};
    t.forward(ws, params.values, std::span<const double>(ext, 1));
    ws.adj[static_cast<std::size_t>(uxx)] = 1.0;
    t.reverse(ws, params.values, g);

    auto uxx_at = [&](const std::vector<double>& pv) {
        return taylor_eval_all(net, pv, x, 0.0, 0, 2)[0].deriv(2);
    };
    SplitMix64 rng(23);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t i = rng.next() % params.size();
        auto pv = params.values;
        auto f = [&](double h) {
            pv[i] = params.values[i] + h;
            double v = uxx_at(pv);
            pv[i] = params.values[i];
            return v;
        };
        const double fd = central_fd(f, 1e-5);
        CHECK(std::abs(g[i] - fd) <= 1e-5 * std::max({1.0, std::abs(fd), std::abs(g[i])}));
    }
}

TEST_CASE("non-finite loss raises NumericalOverflow", "[grad]") {
    ParameterVector theta;
    theta.values = {1e308};
    theta.layout = {{"all", 0, 1}};
    CHECK_THROWS_AS(grad(
                        [](Tape& t, std::span<TapeScalar> p) {
                            return p[0] * p[0];  // overflows to inf
                        },
                        theta),
                    NumericalOverflow);
}
