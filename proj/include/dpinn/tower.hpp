#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "dpinn/errors.hpp"

namespace dpinn {

// Highest spatial derivative order carried anywhere in the library.
inline constexpr int kMaxDerivOrder = 4;

namespace detail {
// binom(k, j) for k, j <= kMaxDerivOrder.
inline constexpr std::array<std::array<double, 5>, 5> kBinom = {{
    {1, 0, 0, 0, 0},
    {1, 1, 0, 0, 0},
    {1, 2, 1, 0, 0},
    {1, 3, 3, 1, 0},
    {1, 4, 6, 4, 1},
}};
} // namespace detail

/// Value of a scalar field and its derivatives along one axis at a point:
/// coeffs[k] = d^k u / dx^k. Arithmetic is exact truncated-Taylor
/// arithmetic (products follow the Leibniz rule).
struct DerivativeTower {
    int order = 0;
    std::array<double, kMaxDerivOrder + 1> c{};

    DerivativeTower() = default;
    explicit DerivativeTower(int ord) : order(check_order(ord)) {}

    static int check_order(int ord) {
        if (ord < 0 || ord > kMaxDerivOrder)
            throw OrderError("tower order must be in [0,4], got " + std::to_string(ord));
        return ord;
    }

    // Constant field: derivatives vanish.
    static DerivativeTower constant(double v, int ord) {
        DerivativeTower t(ord);
        t.c[0] = v;
        return t;
    }

    // The coordinate itself: u(x) = x.
    static DerivativeTower variable(double x, int ord) {
        DerivativeTower t(ord);
        t.c[0] = x;
        if (ord >= 1) t.c[1] = 1.0;
        return t;
    }

    double value() const { return c[0]; }

    /// d^k u/dx^k; throws if the tower is too short.
    double deriv(int k) const {
        if (k < 0 || k > order)
            throw OrderError("tower of order " + std::to_string(order) +
                             " queried for derivative " + std::to_string(k));
        return c[static_cast<std::size_t>(k)];
    }

    bool finite() const {
        for (int k = 0; k <= order; ++k)
            if (!std::isfinite(c[static_cast<std::size_t>(k)])) return false;
        return true;
    }

    /// Tower of du/dx, one order shorter.
    DerivativeTower shifted() const {
        if (order < 1) throw OrderError("cannot shift an order-0 tower");
        DerivativeTower t(order - 1);
        for (int k = 0; k < order; ++k) t.c[static_cast<std::size_t>(k)] = c[static_cast<std::size_t>(k + 1)];
        return t;
    }

    DerivativeTower truncated(int ord) const {
        if (ord > order) throw OrderError("cannot extend a tower by truncation");
        DerivativeTower t(ord);
        for (int k = 0; k <= ord; ++k) t.c[static_cast<std::size_t>(k)] = c[static_cast<std::size_t>(k)];
        return t;
    }
};

inline int common_order(const DerivativeTower& a, const DerivativeTower& b) {
    return a.order < b.order ? a.order : b.order;
}

inline DerivativeTower operator+(const DerivativeTower& a, const DerivativeTower& b) {
    DerivativeTower r(common_order(a, b));
    for (int k = 0; k <= r.order; ++k) r.c[static_cast<std::size_t>(k)] = a.c[static_cast<std::size_t>(k)] + b.c[static_cast<std::size_t>(k)];
    return r;
}

inline DerivativeTower operator-(const DerivativeTower& a, const DerivativeTower& b) {
    DerivativeTower r(common_order(a, b));
    for (int k = 0; k <= r.order; ++k) r.c[static_cast<std::size_t>(k)] = a.c[static_cast<std::size_t>(k)] - b.c[static_cast<std::size_t>(k)];
    return r;
}

inline DerivativeTower operator*(const DerivativeTower& a, double s) {
    DerivativeTower r(a.order);
    for (int k = 0; k <= r.order; ++k) r.c[static_cast<std::size_t>(k)] = a.c[static_cast<std::size_t>(k)] * s;
    return r;
}

inline DerivativeTower operator*(double s, const DerivativeTower& a) { return a * s; }

inline DerivativeTower operator+(const DerivativeTower& a, double s) {
    DerivativeTower r = a;
    r.c[0] += s;
    return r;
}

inline DerivativeTower operator+(double s, const DerivativeTower& a) { return a + s; }

inline DerivativeTower operator-(const DerivativeTower& a) { return a * -1.0; }

inline DerivativeTower operator-(const DerivativeTower& a, double s) { return a + (-s); }

inline DerivativeTower operator-(double s, const DerivativeTower& a) { return (-a) + s; }

/// Leibniz product: (fg)^(k) = sum_j binom(k,j) f^(j) g^(k-j).
inline DerivativeTower operator*(const DerivativeTower& a, const DerivativeTower& b) {
    DerivativeTower r(common_order(a, b));
    for (int k = 0; k <= r.order; ++k) {
        double acc = 0.0;
        for (int j = 0; j <= k; ++j)
            acc += detail::kBinom[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] *
                   a.c[static_cast<std::size_t>(j)] * b.c[static_cast<std::size_t>(k - j)];
        r.c[static_cast<std::size_t>(k)] = acc;
    }
    return r;
}

namespace detail {

// Propagates y = phi(a) through the tower using the recurrence
//   y^(m) = d^(m-1)/dx^(m-1) [ g * a' ],  g = phi'(a),
// where the towers of y and g are built up together. DerivG computes
// the next g coefficient from the y tower built so far.
template <class DerivG>
DerivativeTower compose_unary(const DerivativeTower& a, double y0, DerivG next_g) {
    DerivativeTower y(a.order);
    y.c[0] = y0;
    DerivativeTower g(a.order);
    for (int m = 0; m <= a.order; ++m) {
        if (m >= 1) {
            double acc = 0.0;
            for (int j = 0; j <= m - 1; ++j)
                acc += kBinom[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)] *
                       g.c[static_cast<std::size_t>(j)] * a.c[static_cast<std::size_t>(m - j)];
            y.c[static_cast<std::size_t>(m)] = acc;
        }
        if (m < a.order) g.c[static_cast<std::size_t>(m)] = next_g(y, m);
    }
    return y;
}

} // namespace detail

inline DerivativeTower tanh(const DerivativeTower& a) {
    const double t = std::tanh(a.c[0]);
    // g = 1 - y^2, so g^(m) = -(y^2)^(m) for m >= 1.
    return detail::compose_unary(a, t, [](const DerivativeTower& y, int m) {
        if (m == 0) return 1.0 - y.c[0] * y.c[0];
        double acc = 0.0;
        for (int j = 0; j <= m; ++j)
            acc += detail::kBinom[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] *
                   y.c[static_cast<std::size_t>(j)] * y.c[static_cast<std::size_t>(m - j)];
        return -acc;
    });
}

inline DerivativeTower exp(const DerivativeTower& a) {
    const double e = std::exp(a.c[0]);
    return detail::compose_unary(a, e, [](const DerivativeTower& y, int m) {
        return y.c[static_cast<std::size_t>(m)];
    });
}

// sin and cos towers are built jointly; their g-chains are each other.
inline void sincos(const DerivativeTower& a, DerivativeTower& s, DerivativeTower& c) {
    s = DerivativeTower(a.order);
    c = DerivativeTower(a.order);
    s.c[0] = std::sin(a.c[0]);
    c.c[0] = std::cos(a.c[0]);
    for (int m = 1; m <= a.order; ++m) {
        double accs = 0.0, accc = 0.0;
        for (int j = 0; j <= m - 1; ++j) {
            const double B = detail::kBinom[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
            const double ad = a.c[static_cast<std::size_t>(m - j)];
            accs += B * c.c[static_cast<std::size_t>(j)] * ad;
            accc -= B * s.c[static_cast<std::size_t>(j)] * ad;
        }
        s.c[static_cast<std::size_t>(m)] = accs;
        c.c[static_cast<std::size_t>(m)] = accc;
    }
}

inline DerivativeTower sin(const DerivativeTower& a) {
    DerivativeTower s, c;
    sincos(a, s, c);
    return s;
}

inline DerivativeTower cos(const DerivativeTower& a) {
    DerivativeTower s, c;
    sincos(a, s, c);
    return c;
}

} // namespace dpinn
