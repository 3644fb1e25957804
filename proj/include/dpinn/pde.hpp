#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "dpinn/errors.hpp"
#include "dpinn/tower.hpp"

namespace dpinn {

enum class BoundaryType { Periodic, Dirichlet };

enum class OperatorKind {
    Zero,                 // u_t = 0 (identity dynamics; test fixture)
    LinearDecay,          // -rate * u (scalar ODE at every point; test fixture)
    Heat,                 // u_xx
    ReactionDiffusion,    // d1 u_xx + d2 u^2
    AllenCahn,            // g1 u_xx + g2 u (1 - u^2)
    KuramotoSivashinsky,  // -(alpha u u_x + beta u_xx + gamma u_xxxx)
    NavierStokes2D,       // vorticity transport + divergence constraint
};

/// Point data a 1-D spatial operator consumes, generic over the scalar
/// type: double for plain evaluation, TapeScalar while recording a loss,
/// DerivativeTower for nested explicit stage evaluation.
template <class T>
struct TowerView {
    T u{}, ux{}, uxx{}, uxxx{}, uxxxx{};
};

template <class T>
struct Field2D {
    T v{}, dx{}, dy{}, dxx{}, dyy{};
};

template <class T>
struct NSState {
    Field2D<T> u, v, w;
};

struct PDEProblem {
    std::string name;
    int spatial_dim = 1;
    double x_lo = -1.0, x_hi = 1.0;
    double y_lo = 0.0, y_hi = 0.0;
    double end_time = 1.0;
    BoundaryType boundary = BoundaryType::Periodic;
    double dirichlet_value = 0.0;
    OperatorKind op = OperatorKind::Heat;
    std::map<std::string, double> coefficients;
    int max_derivative_order = 2;
    std::function<double(double, double)> u0;

    double coeff(const std::string& key) const {
        auto it = coefficients.find(key);
        if (it == coefficients.end())
            throw UnknownProblem("problem '" + name + "' has no coefficient '" + key + "'");
        return it->second;
    }

    double length_x() const { return x_hi - x_lo; }
    double length_y() const { return y_hi - y_lo; }
    double initial(double x, double y = 0.0) const { return u0(x, y); }
};

/// N[u] at a point from the tower components, written once for all scalar
/// types. Only the components the operator actually uses are read.
template <class T>
T apply_operator_t(const PDEProblem& p, const TowerView<T>& f) {
    switch (p.op) {
        case OperatorKind::Zero:
            return 0.0 * f.u;
        case OperatorKind::LinearDecay:
            return (-p.coeff("rate")) * f.u;
        case OperatorKind::Heat:
            return f.uxx;
        case OperatorKind::ReactionDiffusion:
            return p.coeff("d1") * f.uxx + p.coeff("d2") * (f.u * f.u);
        case OperatorKind::AllenCahn:
            return p.coeff("gamma1") * f.uxx + p.coeff("gamma2") * (f.u * (1.0 - f.u * f.u));
        case OperatorKind::KuramotoSivashinsky:
            return -(p.coeff("alpha") * (f.u * f.ux) + p.coeff("beta") * f.uxx +
                     p.coeff("gamma") * f.uxxxx);
        case OperatorKind::NavierStokes2D:
            throw ShapeError("the Navier-Stokes operator takes 2-D field state, not a 1-D tower");
    }
    throw UnknownProblem("unhandled operator kind");
}

inline TowerView<double> tower_view(const PDEProblem& p, const DerivativeTower& t) {
    if (t.order < p.max_derivative_order)
        throw OrderError("operator of '" + p.name + "' needs tower order " +
                         std::to_string(p.max_derivative_order) + ", got " +
                         std::to_string(t.order));
    TowerView<double> v;
    v.u = t.c[0];
    if (t.order >= 1) v.ux = t.c[1];
    if (t.order >= 2) v.uxx = t.c[2];
    if (t.order >= 3) v.uxxx = t.c[3];
    if (t.order >= 4) v.uxxxx = t.c[4];
    return v;
}

inline double apply_operator(const PDEProblem& p, const DerivativeTower& t) {
    return apply_operator_t<double>(p, tower_view(p, t));
}

/// Jet of the field N[u] to order `out_order`, from a tower of u carrying
/// out_order + max_derivative_order entries (each operator input becomes a
/// shifted jet of the argument tower).
inline DerivativeTower apply_operator_jet(const PDEProblem& p, const DerivativeTower& arg,
                                          int out_order) {
    if (arg.order < out_order + p.max_derivative_order)
        throw OrderError("tower order " + std::to_string(arg.order) +
                         " too small for operator jet of order " + std::to_string(out_order));
    TowerView<DerivativeTower> v;
    auto shift_to = [&](int times) {
        DerivativeTower t = arg;
        for (int s = 0; s < times; ++s) t = t.shifted();
        return t.truncated(out_order);
    };
    v.u = shift_to(0);
    if (p.max_derivative_order >= 1) v.ux = shift_to(1);
    if (p.max_derivative_order >= 2) v.uxx = shift_to(2);
    if (p.max_derivative_order >= 3) v.uxxx = shift_to(3);
    if (p.max_derivative_order >= 4) v.uxxxx = shift_to(4);
    return apply_operator_t<DerivativeTower>(p, v);
}

// Navier-Stokes pieces (velocity-vorticity form, Re from the problem).
template <class T>
T ns_transport_rhs(const PDEProblem& p, const NSState<T>& s) {
    const double inv_re = 1.0 / p.coeff("re");
    return inv_re * (s.w.dxx + s.w.dyy) - (s.u.v * s.w.dx + s.v.v * s.w.dy);
}

template <class T>
T ns_divergence(const NSState<T>& s) {
    return s.u.dx + s.v.dy;
}

// w - (v_x - u_y): ties the vorticity output to the velocity outputs.
template <class T>
T ns_vorticity_defect(const NSState<T>& s) {
    return s.w.v - (s.v.dx - s.u.dy);
}

inline PDEProblem benchmark(const std::string& name) {
    using std::numbers::pi;
    PDEProblem p;
    p.name = name;
    if (name == "heat_test") {
        p.op = OperatorKind::Heat;
        p.boundary = BoundaryType::Dirichlet;
        p.max_derivative_order = 2;
        p.u0 = [](double x, double) { return std::sin(pi * x); };
        return p;
    }
    if (name == "rd") {
        p.op = OperatorKind::ReactionDiffusion;
        p.boundary = BoundaryType::Dirichlet;
        p.coefficients = {{"d1", 0.01}, {"d2", 0.01}};
        p.max_derivative_order = 2;
        p.u0 = [](double x, double) {
            return std::sin(2.0 * pi * x) * (1.0 + std::cos(2.0 * pi * x));
        };
        return p;
    }
    if (name == "ac") {
        p.op = OperatorKind::AllenCahn;
        p.boundary = BoundaryType::Periodic;
        p.coefficients = {{"gamma1", 1e-4}, {"gamma2", 5.0}};
        p.max_derivative_order = 2;
        p.u0 = [](double x, double) { return x * x * std::cos(pi * x); };
        return p;
    }
    if (name == "ks_regular") {
        p.op = OperatorKind::KuramotoSivashinsky;
        p.boundary = BoundaryType::Periodic;
        p.coefficients = {{"alpha", 5.0}, {"beta", 0.5}, {"gamma", 0.005}};
        p.max_derivative_order = 4;
        p.u0 = [](double x, double) { return -std::sin(pi * x); };
        return p;
    }
    if (name == "ks_chaotic") {
        p.op = OperatorKind::KuramotoSivashinsky;
        p.boundary = BoundaryType::Periodic;
        p.x_lo = 0.0;
        p.x_hi = 2.0 * pi;
        p.coefficients = {{"alpha", 100.0 / 16.0},
                          {"beta", 100.0 / 256.0},
                          {"gamma", 100.0 / 65536.0}};
        p.max_derivative_order = 4;
        p.u0 = [](double x, double) { return std::cos(x) * (1.0 + std::sin(x)); };
        return p;
    }
    if (name == "ns2d") {
        p.op = OperatorKind::NavierStokes2D;
        p.spatial_dim = 2;
        p.boundary = BoundaryType::Periodic;
        p.x_lo = 0.0;
        p.x_hi = 2.0 * pi;
        p.y_lo = 0.0;
        p.y_hi = 2.0 * pi;
        p.coefficients = {{"re", 100.0}};
        p.max_derivative_order = 2;
        // Initial vorticity; the reference solver starts from the same field.
        p.u0 = [](double x, double y) {
            return std::sin(x) * std::cos(y) + 0.1 * std::cos(3.0 * x) * std::sin(2.0 * y);
        };
        return p;
    }
    throw UnknownProblem("unknown benchmark '" + name + "'");
}

inline const std::vector<std::string>& benchmark_names() {
    static const std::vector<std::string> names = {"heat_test", "rd",         "ac",
                                                   "ks_regular", "ks_chaotic", "ns2d"};
    return names;
}

} // namespace dpinn
