#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dpinn/errors.hpp"
#include "dpinn/tower.hpp"

namespace dpinn {

/// Runge-Kutta coefficients. `a` is row-major q x q; c_i = sum_j a_ij.
/// `implicit` is true iff any a_ij != 0 for j >= i.
struct ButcherTableau {
    std::string name;
    int q = 1;
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> c;
    int classical_order = 1;
    bool implicit = false;

    double A(int i, int j) const { return a[static_cast<std::size_t>(i * q + j)]; }

    static ButcherTableau make(std::string name, int q, std::vector<double> a,
                               std::vector<double> b, int order) {
        ButcherTableau t;
        t.name = std::move(name);
        t.q = q;
        t.a = std::move(a);
        t.b = std::move(b);
        t.classical_order = order;
        t.c.assign(static_cast<std::size_t>(q), 0.0);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j) t.c[static_cast<std::size_t>(i)] += t.A(i, j);
        for (int i = 0; i < q; ++i)
            for (int j = i; j < q; ++j)
                if (t.A(i, j) != 0.0) t.implicit = true;
        return t;
    }

    std::string to_text() const {
        std::ostringstream os;
        os << name << " (q=" << q << ", order " << classical_order
           << (implicit ? ", implicit" : ", explicit") << ")\n";
        for (int i = 0; i < q; ++i) {
            os << "  " << c[static_cast<std::size_t>(i)] << " |";
            for (int j = 0; j < q; ++j) os << ' ' << A(i, j);
            os << '\n';
        }
        os << "    |";
        for (int i = 0; i < q; ++i) os << ' ' << b[static_cast<std::size_t>(i)];
        os << '\n';
        return os.str();
    }
};

/// Named schemes. crank_nicolson is the one-stage implicit midpoint form
/// (the operator acts on the state average), distinct from trapezoidal
/// (average of operator values); they differ for nonlinear operators.
inline ButcherTableau builtin_tableau(const std::string& name) {
    const double s3 = std::sqrt(3.0);
    if (name == "forward_euler")
        return ButcherTableau::make(name, 1, {0.0}, {1.0}, 1);
    if (name == "backward_euler")
        return ButcherTableau::make(name, 1, {1.0}, {1.0}, 1);
    if (name == "crank_nicolson")
        return ButcherTableau::make(name, 1, {0.5}, {1.0}, 2);
    if (name == "trapezoidal")
        return ButcherTableau::make(name, 2, {0.0, 0.0, 0.5, 0.5}, {0.5, 0.5}, 2);
    if (name == "rk2")
        return ButcherTableau::make(name, 2, {0.0, 0.0, 0.5, 0.0}, {0.0, 1.0}, 2);
    if (name == "rk4")
        return ButcherTableau::make(
            name, 4, {0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0},
            {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6}, 4);
    if (name == "gauss_legendre2")
        return ButcherTableau::make(
            name, 2, {0.25, 0.25 - s3 / 6.0, 0.25 + s3 / 6.0, 0.25}, {0.5, 0.5}, 4);
    throw UnknownScheme("unknown time differencing scheme '" + name + "'");
}

inline const std::vector<std::string>& builtin_scheme_names() {
    static const std::vector<std::string> names = {
        "forward_euler", "backward_euler", "trapezoidal", "crank_nicolson",
        "rk2",           "rk4",            "gauss_legendre2"};
    return names;
}

/// Residuals of the standard order conditions through order 4, labelled.
/// Only the conditions implied by classical_order are reported.
inline std::vector<std::pair<std::string, double>> order_condition_residuals(
    const ButcherTableau& t) {
    auto bc = [&](int pow) {
        double s = 0.0;
        for (int i = 0; i < t.q; ++i)
            s += t.b[static_cast<std::size_t>(i)] * std::pow(t.c[static_cast<std::size_t>(i)], pow);
        return s;
    };
    auto bac = [&]() {
        double s = 0.0;
        for (int i = 0; i < t.q; ++i)
            for (int j = 0; j < t.q; ++j)
                s += t.b[static_cast<std::size_t>(i)] * t.A(i, j) * t.c[static_cast<std::size_t>(j)];
        return s;
    };
    std::vector<std::pair<std::string, double>> out;
    out.emplace_back("sum b = 1", bc(0) - 1.0);
    if (t.classical_order >= 2) out.emplace_back("b.c = 1/2", bc(1) - 0.5);
    if (t.classical_order >= 3) {
        out.emplace_back("b.c^2 = 1/3", bc(2) - 1.0 / 3.0);
        out.emplace_back("b.A.c = 1/6", bac() - 1.0 / 6.0);
    }
    if (t.classical_order >= 4) {
        double bcac = 0.0, bac2 = 0.0, baac = 0.0;
        for (int i = 0; i < t.q; ++i)
            for (int j = 0; j < t.q; ++j) {
                bcac += t.b[static_cast<std::size_t>(i)] * t.c[static_cast<std::size_t>(i)] * t.A(i, j) *
                        t.c[static_cast<std::size_t>(j)];
                bac2 += t.b[static_cast<std::size_t>(i)] * t.A(i, j) * t.c[static_cast<std::size_t>(j)] *
                        t.c[static_cast<std::size_t>(j)];
                for (int k = 0; k < t.q; ++k)
                    baac += t.b[static_cast<std::size_t>(i)] * t.A(i, j) * t.A(j, k) *
                            t.c[static_cast<std::size_t>(k)];
            }
        out.emplace_back("b.c^3 = 1/4", bc(3) - 0.25);
        out.emplace_back("(b*c).A.c = 1/8", bcac - 0.125);
        out.emplace_back("b.A.c^2 = 1/12", bac2 - 1.0 / 12.0);
        out.emplace_back("b.A.A.c = 1/24", baac - 1.0 / 24.0);
    }
    return out;
}

/// Crank-Nicolson residual at one point: (u+ - u-)/tau - N[(u+ + u-)/2],
/// with the operator applied to the averaged tower.
template <class OpFn>
double cn_residual(const DerivativeTower& u_next, const DerivativeTower& u_prev, OpFn&& N,
                   double tau) {
    const DerivativeTower avg = (u_next + u_prev) * 0.5;
    return (u_next.value() - u_prev.value()) / tau - N(avg);
}

/// q stage-equation residuals k_i - N[u^n + tau sum_j a_ij k_j] plus the
/// update residual (u^{n+1} - u^n)/tau - sum_i b_i k_i.
template <class OpFn>
std::vector<double> stage_residuals(const ButcherTableau& tab,
                                    const std::vector<DerivativeTower>& stages,
                                    const DerivativeTower& u_next, const DerivativeTower& u_prev,
                                    OpFn&& N, double tau) {
    if (static_cast<int>(stages.size()) != tab.q)
        throw ShapeError("stage count does not match the tableau");
    std::vector<double> r(static_cast<std::size_t>(tab.q) + 1);
    for (int i = 0; i < tab.q; ++i) {
        DerivativeTower arg = u_prev;
        for (int j = 0; j < tab.q; ++j) {
            const double aij = tab.A(i, j);
            if (aij != 0.0) arg = arg + (tau * aij) * stages[static_cast<std::size_t>(j)];
        }
        r[static_cast<std::size_t>(i)] = stages[static_cast<std::size_t>(i)].value() - N(arg);
    }
    double acc = 0.0;
    for (int i = 0; i < tab.q; ++i) acc += tab.b[static_cast<std::size_t>(i)] * stages[static_cast<std::size_t>(i)].value();
    r[static_cast<std::size_t>(tab.q)] = (u_next.value() - u_prev.value()) / tau - acc;
    return r;
}

namespace detail {

// Solves the dense linear system M x = rhs in place (partial pivoting).
inline std::vector<double> solve_dense(std::vector<double> M, std::vector<double> rhs) {
    const int n = static_cast<int>(rhs.size());
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(M[static_cast<std::size_t>(r * n + col)]) >
                std::abs(M[static_cast<std::size_t>(piv * n + col)]))
                piv = r;
        if (piv != col) {
            for (int k = 0; k < n; ++k)
                std::swap(M[static_cast<std::size_t>(col * n + k)], M[static_cast<std::size_t>(piv * n + k)]);
            std::swap(rhs[static_cast<std::size_t>(col)], rhs[static_cast<std::size_t>(piv)]);
        }
        const double d = M[static_cast<std::size_t>(col * n + col)];
        if (d == 0.0) throw DomainError("singular stage system");
        for (int r = col + 1; r < n; ++r) {
            const double f = M[static_cast<std::size_t>(r * n + col)] / d;
            if (f == 0.0) continue;
            for (int k = col; k < n; ++k)
                M[static_cast<std::size_t>(r * n + k)] -= f * M[static_cast<std::size_t>(col * n + k)];
            rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(col)];
        }
    }
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int r = n - 1; r >= 0; --r) {
        double acc = rhs[static_cast<std::size_t>(r)];
        for (int k = r + 1; k < n; ++k)
            acc -= M[static_cast<std::size_t>(r * n + k)] * x[static_cast<std::size_t>(k)];
        x[static_cast<std::size_t>(r)] = acc / M[static_cast<std::size_t>(r * n + r)];
    }
    return x;
}

} // namespace detail

/// One step of u' = lambda u; implicit stage systems are solved directly.
/// This is the exact-spatial harness behind the stability and order checks.
inline double step_linear_ode(const ButcherTableau& t, double lambda, double tau, double u) {
    const int q = t.q;
    std::vector<double> M(static_cast<std::size_t>(q) * static_cast<std::size_t>(q), 0.0);
    std::vector<double> rhs(static_cast<std::size_t>(q), lambda * u);
    for (int i = 0; i < q; ++i) {
        M[static_cast<std::size_t>(i * q + i)] = 1.0;
        for (int j = 0; j < q; ++j) M[static_cast<std::size_t>(i * q + j)] -= lambda * tau * t.A(i, j);
    }
    const auto k = detail::solve_dense(std::move(M), std::move(rhs));
    double next = u;
    for (int i = 0; i < q; ++i) next += tau * t.b[static_cast<std::size_t>(i)] * k[static_cast<std::size_t>(i)];
    return next;
}

/// Amplification factor R(z) for one step of size 1 on u' = z u.
inline double stability_function(const ButcherTableau& t, double z) {
    return step_linear_ode(t, z, 1.0, 1.0);
}

inline double solve_linear_ode(const ButcherTableau& t, double lambda, double T, int n_steps,
                               double u0 = 1.0) {
    const double tau = T / n_steps;
    double u = u0;
    for (int n = 0; n < n_steps; ++n) u = step_linear_ode(t, lambda, tau, u);
    return u;
}

/// Jets of explicit stages by nested operator application on the previous
/// state's tower: k_i loses `deriv_order` tower orders per nesting level.
/// apply_jet(arg, out_order) must return the jet of N[arg] to out_order.
template <class ApplyJet>
std::vector<DerivativeTower> explicit_stage_jets(const ButcherTableau& tab,
                                                 const DerivativeTower& u_prev, double tau,
                                                 int deriv_order, ApplyJet&& apply_jet) {
    if (tab.implicit) throw DomainError("nested stage evaluation needs an explicit tableau");
    std::vector<DerivativeTower> ks;
    int avail = u_prev.order;
    for (int i = 0; i < tab.q; ++i) {
        DerivativeTower arg = u_prev;
        for (int j = 0; j < i; ++j) {
            const double aij = tab.A(i, j);
            if (aij != 0.0) arg = arg + (tau * aij) * ks[static_cast<std::size_t>(j)];
        }
        const int out_order = arg.order - deriv_order;
        if (out_order < 0)
            throw OrderError("tower order too small for nested stage evaluation of " + tab.name);
        ks.push_back(apply_jet(arg, out_order));
        avail = out_order;
    }
    (void)avail;
    return ks;
}

} // namespace dpinn
