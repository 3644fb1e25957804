#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpinn/schemes.hpp"  // detail::solve_dense

#include "dpinn/errors.hpp"
#include "dpinn/params.hpp"
#include "dpinn/pde.hpp"

namespace dpinn {

/// Ground-truth samples on a fixed grid at the training timestamps
/// t_n = n tau, n = 0..N_t. Fields are flattened [time][field][grid].
struct ReferenceTrajectory {
    std::vector<double> grid_x;
    std::vector<double> grid_y;  // empty for 1-D problems
    std::vector<double> timestamps;
    std::vector<std::string> field_names;  // {"u"} or {"w","u","v"}
    std::vector<double> values;

    std::size_t grid_size() const {
        return grid_y.empty() ? grid_x.size() : grid_x.size() * grid_y.size();
    }
    std::size_t n_fields() const { return field_names.size(); }

    std::span<const double> at(std::size_t t_idx, std::size_t field = 0) const {
        const std::size_t g = grid_size();
        const std::size_t ofs = (t_idx * n_fields() + field) * g;
        return {values.data() + ofs, g};
    }
    std::span<double> at(std::size_t t_idx, std::size_t field = 0) {
        const std::size_t g = grid_size();
        const std::size_t ofs = (t_idx * n_fields() + field) * g;
        return {values.data() + ofs, g};
    }

    bool finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

/// Exact solution of heat_test: e^(-pi^2 t) sin(pi x).
inline double heat_analytic(double t, double x) {
    const double pi = std::numbers::pi;
    return std::exp(-pi * pi * t) * std::sin(pi * x);
}

namespace detail {

struct Fft1D {
    int n;
    fftw_plan fwd, bwd;
    std::vector<std::complex<double>> buf;

    explicit Fft1D(int n_) : n(n_), buf(static_cast<std::size_t>(n_)) {
        auto* p = reinterpret_cast<fftw_complex*>(buf.data());
        fwd = fftw_plan_dft_1d(n, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd = fftw_plan_dft_1d(n, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~Fft1D() {
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
    }
    Fft1D(const Fft1D&) = delete;
    Fft1D& operator=(const Fft1D&) = delete;

    void forward(std::span<const std::complex<double>> in, std::span<std::complex<double>> out) {
        std::copy(in.begin(), in.end(), buf.begin());
        fftw_execute(fwd);
        std::copy(buf.begin(), buf.end(), out.begin());
    }
    // Unnormalized inverse; caller divides by n.
    void backward(std::span<const std::complex<double>> in, std::span<std::complex<double>> out) {
        std::copy(in.begin(), in.end(), buf.begin());
        fftw_execute(bwd);
        std::copy(buf.begin(), buf.end(), out.begin());
    }
};

struct Fft2D {
    int n;
    fftw_plan fwd, bwd;
    std::vector<std::complex<double>> buf;

    explicit Fft2D(int n_) : n(n_), buf(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_)) {
        auto* p = reinterpret_cast<fftw_complex*>(buf.data());
        fwd = fftw_plan_dft_2d(n, n, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd = fftw_plan_dft_2d(n, n, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~Fft2D() {
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
    }
    Fft2D(const Fft2D&) = delete;
    Fft2D& operator=(const Fft2D&) = delete;

    void forward(std::span<std::complex<double>> inout) {
        std::copy(inout.begin(), inout.end(), buf.begin());
        fftw_execute(fwd);
        std::copy(buf.begin(), buf.end(), inout.begin());
    }
    void backward(std::span<std::complex<double>> inout) {
        std::copy(inout.begin(), inout.end(), buf.begin());
        fftw_execute(bwd);
        const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
        for (std::size_t i = 0; i < inout.size(); ++i) inout[i] = buf[i] * inv;
    }
};

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline double fft_wavenumber(int index, int n, double domain_len) {
    const int m = index <= n / 2 ? index : index - n;
    return 2.0 * std::numbers::pi * static_cast<double>(m) / domain_len;
}

} // namespace detail

/// Fourier pseudo-spectral ETDRK4 reference solver for the periodic 1-D
/// benchmarks (ac, ks_regular, ks_chaotic, periodic heat). Nonlinear terms
/// are dealiased with the 2/3 rule; the stiff linear part is integrated
/// exactly through the exponential coefficients (computed by the standard
/// contour-integral evaluation to avoid cancellation).
inline ReferenceTrajectory spectral_solve_1d(const PDEProblem& p, int modes, double dt_ref,
                                             int n_t) {
    if (p.spatial_dim != 1 || p.boundary != BoundaryType::Periodic)
        throw UnknownProblem("spectral_solve_1d needs a periodic 1-D problem, got '" + p.name + "'");
    if (!detail::is_power_of_two(modes)) throw DomainError("modes must be a power of two");
    if (n_t < 1 || dt_ref <= 0.0) throw DomainError("bad sampling parameters");

    const int n = modes;
    const double len = p.length_x();
    const double tau = p.end_time / n_t;
    const int steps_per_sample = std::max(1, static_cast<int>(std::ceil(tau / dt_ref)));
    const double dt = tau / steps_per_sample;

    // Linear symbol and the nonlinear pseudo-spectral term per operator.
    std::vector<double> lin(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double k = detail::fft_wavenumber(i, n, len);
        switch (p.op) {
            case OperatorKind::Heat: lin[static_cast<std::size_t>(i)] = -k * k; break;
            case OperatorKind::AllenCahn:
                lin[static_cast<std::size_t>(i)] = -p.coeff("gamma1") * k * k + p.coeff("gamma2");
                break;
            case OperatorKind::KuramotoSivashinsky:
                lin[static_cast<std::size_t>(i)] =
                    p.coeff("beta") * k * k - p.coeff("gamma") * k * k * k * k;
                break;
            default:
                throw UnknownProblem("spectral_solve_1d does not handle '" + p.name + "'");
        }
    }

    // ETDRK4 coefficients via a 32-point contour around each dt*L value.
    const int M = 32;
    std::vector<double> E(static_cast<std::size_t>(n)), E2(static_cast<std::size_t>(n)), Q(static_cast<std::size_t>(n)),
        f1(static_cast<std::size_t>(n)), f2(static_cast<std::size_t>(n)), f3(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double lr = dt * lin[static_cast<std::size_t>(i)];
        E[static_cast<std::size_t>(i)] = std::exp(lr);
        E2[static_cast<std::size_t>(i)] = std::exp(lr / 2.0);
        std::complex<double> q{}, a{}, b{}, c{};
        for (int m = 0; m < M; ++m) {
            const double th = std::numbers::pi * (m + 0.5) / M;
            const std::complex<double> z =
                lr + std::complex<double>(std::cos(th), std::sin(th));
            const std::complex<double> ez = std::exp(z), z2 = z * z, z3 = z2 * z;
            q += (std::exp(z / 2.0) - 1.0) / z;
            a += (-4.0 - z + ez * (4.0 - 3.0 * z + z2)) / z3;
            b += (2.0 + z + ez * (-2.0 + z)) / z3;
            c += (-4.0 - 3.0 * z - z2 + ez * (4.0 - z)) / z3;
        }
        Q[static_cast<std::size_t>(i)] = dt * q.real() / M;
        f1[static_cast<std::size_t>(i)] = dt * a.real() / M;
        f2[static_cast<std::size_t>(i)] = dt * b.real() / M;
        f3[static_cast<std::size_t>(i)] = dt * c.real() / M;
    }

    detail::Fft1D fft(n);
    using C = std::complex<double>;
    std::vector<C> v(static_cast<std::size_t>(n)), nv(static_cast<std::size_t>(n)), av(static_cast<std::size_t>(n)),
        bv(static_cast<std::size_t>(n)), cv(static_cast<std::size_t>(n)), na(static_cast<std::size_t>(n)),
        nb(static_cast<std::size_t>(n)), nc(static_cast<std::size_t>(n)), scratch(static_cast<std::size_t>(n)),
        phys(static_cast<std::size_t>(n));

    ReferenceTrajectory out;
    out.field_names = {"u"};
    out.grid_x.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.grid_x[static_cast<std::size_t>(i)] = p.x_lo + len * i / n;

    for (int i = 0; i < n; ++i) phys[static_cast<std::size_t>(i)] = p.initial(out.grid_x[static_cast<std::size_t>(i)]);
    fft.forward(phys, v);

    const int kcut = n / 3;
    auto dealias = [&](std::vector<C>& sp) {
        for (int i = 0; i < n; ++i) {
            const int m = i <= n / 2 ? i : i - n;
            if (std::abs(m) > kcut) sp[static_cast<std::size_t>(i)] = 0.0;
        }
    };

    // Nonlinear term in spectral space.
    auto nonlinear = [&](const std::vector<C>& spec, std::vector<C>& result) {
        if (p.op == OperatorKind::Heat) {
            std::fill(result.begin(), result.end(), C{});
            return;
        }
        fft.backward(spec, scratch);
        for (int i = 0; i < n; ++i) scratch[static_cast<std::size_t>(i)] /= static_cast<double>(n);
        if (p.op == OperatorKind::AllenCahn) {
            const double g2 = p.coeff("gamma2");
            for (int i = 0; i < n; ++i) {
                const double u = scratch[static_cast<std::size_t>(i)].real();
                scratch[static_cast<std::size_t>(i)] = -g2 * u * u * u;
            }
            fft.forward(scratch, result);
        } else {  // KS: -alpha u u_x = -(alpha/2) d(u^2)/dx
            for (int i = 0; i < n; ++i) {
                const double u = scratch[static_cast<std::size_t>(i)].real();
                scratch[static_cast<std::size_t>(i)] = u * u;
            }
            fft.forward(scratch, result);
            const double al = p.coeff("alpha");
            for (int i = 0; i < n; ++i) {
                const double k = detail::fft_wavenumber(i, n, len);
                result[static_cast<std::size_t>(i)] *= C(0.0, -0.5 * al * k);
            }
        }
        dealias(result);
    };

    const std::size_t g = static_cast<std::size_t>(n);
    out.timestamps.resize(static_cast<std::size_t>(n_t) + 1);
    out.values.resize((static_cast<std::size_t>(n_t) + 1) * g);
    auto store = [&](int sample) {
        out.timestamps[static_cast<std::size_t>(sample)] = sample * tau;
        fft.backward(v, scratch);
        for (int i = 0; i < n; ++i) {
            const double u = scratch[static_cast<std::size_t>(i)].real() / n;
            if (!std::isfinite(u))
                throw OracleDiverged("spectral oracle diverged for '" + p.name + "'", sample * tau);
            out.values[static_cast<std::size_t>(sample) * g + static_cast<std::size_t>(i)] = u;
        }
    };
    store(0);

    for (int sample = 1; sample <= n_t; ++sample) {
        for (int s = 0; s < steps_per_sample; ++s) {
            nonlinear(v, nv);
            for (int i = 0; i < n; ++i)
                av[static_cast<std::size_t>(i)] = E2[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)] +
                                                  Q[static_cast<std::size_t>(i)] * nv[static_cast<std::size_t>(i)];
            nonlinear(av, na);
            for (int i = 0; i < n; ++i)
                bv[static_cast<std::size_t>(i)] = E2[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)] +
                                                  Q[static_cast<std::size_t>(i)] * na[static_cast<std::size_t>(i)];
            nonlinear(bv, nb);
            for (int i = 0; i < n; ++i)
                cv[static_cast<std::size_t>(i)] = E2[static_cast<std::size_t>(i)] * av[static_cast<std::size_t>(i)] +
                                                  Q[static_cast<std::size_t>(i)] *
                                                      (2.0 * nb[static_cast<std::size_t>(i)] - nv[static_cast<std::size_t>(i)]);
            nonlinear(cv, nc);
            for (int i = 0; i < n; ++i)
                v[static_cast<std::size_t>(i)] = E[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)] +
                                                 f1[static_cast<std::size_t>(i)] * nv[static_cast<std::size_t>(i)] +
                                                 2.0 * f2[static_cast<std::size_t>(i)] *
                                                     (na[static_cast<std::size_t>(i)] + nb[static_cast<std::size_t>(i)]) +
                                                 f3[static_cast<std::size_t>(i)] * nc[static_cast<std::size_t>(i)];
        }
        store(sample);
    }
    return out;
}

/// 4th-order central differences in space, classical RK4 in time, for the
/// Dirichlet problems (rd, heat_test). Boundary rows stay pinned to g.
/// The step size is clamped to the explicit stability limit of the
/// 4th-order Laplacian stencil when dt_ref exceeds it.
inline ReferenceTrajectory fd_solve_dirichlet(const PDEProblem& p, int grid_n, double dt_ref,
                                              int n_t) {
    if (p.spatial_dim != 1 || p.boundary != BoundaryType::Dirichlet)
        throw UnknownProblem("fd_solve_dirichlet needs a 1-D Dirichlet problem, got '" + p.name + "'");
    if (grid_n < 8) throw DomainError("grid too coarse");

    const int n = grid_n;  // intervals; points 0..n
    const double len = p.length_x();
    const double h = len / n;
    const double tau = p.end_time / n_t;

    double diff_coeff = 1.0;
    if (p.op == OperatorKind::ReactionDiffusion) diff_coeff = p.coeff("d1");
    else if (p.op != OperatorKind::Heat)
        throw UnknownProblem("fd_solve_dirichlet does not handle '" + p.name + "'");

    // Explicit RK4 stability: |lambda_max| = (16/3) d / h^2, bound 2.785.
    const double dt_stable = 0.9 * 2.785 * 3.0 * h * h / (16.0 * diff_coeff);
    const double dt_use = std::min(dt_ref, dt_stable);
    const int steps_per_sample = std::max(1, static_cast<int>(std::ceil(tau / dt_use)));
    const double dt = tau / steps_per_sample;

    // 4th-order second-derivative stencils; biased rows near the walls are
    // derived from the 6-point Vandermonde system in integer offsets
    // (sum_j w_j o_j^r = 2 delta_{r,2}), then scaled by 1/h^2.
    auto stencil_for = [&](std::span<const int> offs) {
        const int m = static_cast<int>(offs.size());
        std::vector<double> A(static_cast<std::size_t>(m) * static_cast<std::size_t>(m));
        std::vector<double> rhs(static_cast<std::size_t>(m), 0.0);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) {
                double pw = 1.0;
                for (int e = 0; e < r; ++e) pw *= offs[static_cast<std::size_t>(c)];
                A[static_cast<std::size_t>(r * m + c)] = pw;
            }
        rhs[2] = 2.0;
        auto w = dpinn::detail::solve_dense(std::move(A), std::move(rhs));
        for (double& v : w) v /= h * h;
        return w;
    };
    const int left_offs[6] = {-1, 0, 1, 2, 3, 4};
    const int right_offs[6] = {1, 0, -1, -2, -3, -4};
    const auto wl = stencil_for(std::span<const int>(left_offs, 6));
    const auto wr = stencil_for(std::span<const int>(right_offs, 6));

    auto rhs_fn = [&](const std::vector<double>& u, std::vector<double>& du) {
        du[0] = 0.0;
        du[static_cast<std::size_t>(n)] = 0.0;
        auto uxx_at = [&](int i) -> double {
            if (i >= 2 && i <= n - 2)
                return (-u[static_cast<std::size_t>(i - 2)] + 16.0 * u[static_cast<std::size_t>(i - 1)] -
                        30.0 * u[static_cast<std::size_t>(i)] + 16.0 * u[static_cast<std::size_t>(i + 1)] -
                        u[static_cast<std::size_t>(i + 2)]) /
                       (12.0 * h * h);
            double acc = 0.0;
            if (i == 1)
                for (int j = 0; j < 6; ++j) acc += wl[static_cast<std::size_t>(j)] * u[static_cast<std::size_t>(1 + left_offs[j])];
            else
                for (int j = 0; j < 6; ++j) acc += wr[static_cast<std::size_t>(j)] * u[static_cast<std::size_t>(n - 1 + right_offs[j])];
            return acc;
        };
        if (p.op == OperatorKind::Heat) {
            for (int i = 1; i < n; ++i) du[static_cast<std::size_t>(i)] = uxx_at(i);
        } else {
            const double d1 = p.coeff("d1"), d2 = p.coeff("d2");
            for (int i = 1; i < n; ++i)
                du[static_cast<std::size_t>(i)] =
                    d1 * uxx_at(i) + d2 * u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)];
        }
    };

    ReferenceTrajectory out;
    out.field_names = {"u"};
    out.grid_x.resize(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) out.grid_x[static_cast<std::size_t>(i)] = p.x_lo + h * i;

    std::vector<double> u(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) u[static_cast<std::size_t>(i)] = p.initial(out.grid_x[static_cast<std::size_t>(i)]);
    u[0] = p.dirichlet_value;
    u[static_cast<std::size_t>(n)] = p.dirichlet_value;

    const std::size_t g = static_cast<std::size_t>(n) + 1;
    out.timestamps.resize(static_cast<std::size_t>(n_t) + 1);
    out.values.resize((static_cast<std::size_t>(n_t) + 1) * g);
    auto store = [&](int sample) {
        out.timestamps[static_cast<std::size_t>(sample)] = sample * tau;
        for (std::size_t i = 0; i < g; ++i) {
            if (!std::isfinite(u[i]))
                throw OracleDiverged("finite-difference oracle diverged for '" + p.name + "'",
                                     sample * tau);
            out.values[static_cast<std::size_t>(sample) * g + i] = u[i];
        }
    };
    store(0);

    std::vector<double> k1(g), k2(g), k3(g), k4(g), tmp(g);
    auto pin = [&](std::vector<double>& w) {
        w[0] = p.dirichlet_value;
        w[g - 1] = p.dirichlet_value;
    };
    for (int sample = 1; sample <= n_t; ++sample) {
        for (int s = 0; s < steps_per_sample; ++s) {
            rhs_fn(u, k1);
            for (std::size_t i = 0; i < g; ++i) tmp[i] = u[i] + 0.5 * dt * k1[i];
            pin(tmp);
            rhs_fn(tmp, k2);
            for (std::size_t i = 0; i < g; ++i) tmp[i] = u[i] + 0.5 * dt * k2[i];
            pin(tmp);
            rhs_fn(tmp, k3);
            for (std::size_t i = 0; i < g; ++i) tmp[i] = u[i] + dt * k3[i];
            pin(tmp);
            rhs_fn(tmp, k4);
            for (std::size_t i = 0; i < g; ++i)
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            pin(u);
        }
        store(sample);
    }
    return out;
}

/// Vorticity-form pseudo-spectral Navier-Stokes reference: velocity
/// recovered from the zero-mean stream function, 2/3 dealiasing, RK4.
/// Stores w and the recovered (u, v).
inline ReferenceTrajectory spectral_solve_ns2d(const PDEProblem& p, int modes, double dt_ref,
                                               int n_t) {
    if (p.op != OperatorKind::NavierStokes2D)
        throw UnknownProblem("spectral_solve_ns2d needs the ns2d problem");
    if (!detail::is_power_of_two(modes)) throw DomainError("modes must be a power of two");

    const int n = modes;
    const std::size_t g = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
    const double len = p.length_x();
    const double nu = 1.0 / p.coeff("re");
    const double tau = p.end_time / n_t;
    const int steps_per_sample = std::max(1, static_cast<int>(std::ceil(tau / dt_ref)));
    const double dt = tau / steps_per_sample;

    detail::Fft2D fft(n);
    using C = std::complex<double>;
    std::vector<double> kx(static_cast<std::size_t>(n)), ky(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) kx[static_cast<std::size_t>(i)] = detail::fft_wavenumber(i, n, len);
    ky = kx;

    auto idx = [&](int i, int j) { return static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j); };

    const int kcut = n / 3;
    auto dealias = [&](std::vector<C>& sp) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const int mi = i <= n / 2 ? i : i - n;
                const int mj = j <= n / 2 ? j : j - n;
                if (std::abs(mi) > kcut || std::abs(mj) > kcut) sp[idx(i, j)] = 0.0;
            }
    };

    std::vector<C> wh(g), uh(g), vh(g), wx(g), wy(g), up(g), vp(g), nl(g);
    std::vector<C> k1(g), k2(g), k3(g), k4(g), ww(g);

    auto velocity_from = [&](const std::vector<C>& w_hat) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double k2v = kx[static_cast<std::size_t>(i)] * kx[static_cast<std::size_t>(i)] +
                                   ky[static_cast<std::size_t>(j)] * ky[static_cast<std::size_t>(j)];
                const C psi = k2v == 0.0 ? C{} : w_hat[idx(i, j)] / k2v;
                uh[idx(i, j)] = C(0.0, ky[static_cast<std::size_t>(j)]) * psi;
                vh[idx(i, j)] = C(0.0, -kx[static_cast<std::size_t>(i)]) * psi;
            }
    };

    // dw/dt in spectral space: -(u w_x + v w_y)^ - nu k^2 w^
    auto rhs = [&](const std::vector<C>& w_hat, std::vector<C>& out_hat) {
        velocity_from(w_hat);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                wx[idx(i, j)] = C(0.0, kx[static_cast<std::size_t>(i)]) * w_hat[idx(i, j)];
                wy[idx(i, j)] = C(0.0, ky[static_cast<std::size_t>(j)]) * w_hat[idx(i, j)];
            }
        up = uh;
        vp = vh;
        fft.backward(up);
        fft.backward(vp);
        fft.backward(wx);
        fft.backward(wy);
        for (std::size_t i = 0; i < g; ++i)
            nl[i] = up[i].real() * wx[i].real() + vp[i].real() * wy[i].real();
        fft.forward(nl);
        dealias(nl);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double k2v = kx[static_cast<std::size_t>(i)] * kx[static_cast<std::size_t>(i)] +
                                   ky[static_cast<std::size_t>(j)] * ky[static_cast<std::size_t>(j)];
                out_hat[idx(i, j)] = -nl[idx(i, j)] - nu * k2v * w_hat[idx(i, j)];
            }
    };

    ReferenceTrajectory out;
    out.field_names = {"w", "u", "v"};
    out.grid_x.resize(static_cast<std::size_t>(n));
    out.grid_y.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.grid_x[static_cast<std::size_t>(i)] = p.x_lo + len * i / n;
        out.grid_y[static_cast<std::size_t>(i)] = p.y_lo + len * i / n;
    }

    // Row-major physical layout: value(x_i, y_j) at i*n + j.
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            ww[idx(i, j)] = p.initial(out.grid_x[static_cast<std::size_t>(i)], out.grid_y[static_cast<std::size_t>(j)]);
    wh = ww;
    fft.forward(wh);

    out.timestamps.resize(static_cast<std::size_t>(n_t) + 1);
    out.values.resize((static_cast<std::size_t>(n_t) + 1) * 3 * g);
    auto store = [&](int sample) {
        out.timestamps[static_cast<std::size_t>(sample)] = sample * tau;
        velocity_from(wh);
        up = uh;
        vp = vh;
        ww = wh;
        fft.backward(up);
        fft.backward(vp);
        fft.backward(ww);
        auto wslab = out.at(static_cast<std::size_t>(sample), 0);
        auto uslab = out.at(static_cast<std::size_t>(sample), 1);
        auto vslab = out.at(static_cast<std::size_t>(sample), 2);
        for (std::size_t i = 0; i < g; ++i) {
            wslab[i] = ww[i].real();
            uslab[i] = up[i].real();
            vslab[i] = vp[i].real();
            if (!std::isfinite(wslab[i]))
                throw OracleDiverged("ns2d oracle diverged", sample * tau);
        }
    };
    store(0);

    std::vector<C> stage(g);
    for (int sample = 1; sample <= n_t; ++sample) {
        for (int s = 0; s < steps_per_sample; ++s) {
            rhs(wh, k1);
            for (std::size_t i = 0; i < g; ++i) stage[i] = wh[i] + 0.5 * dt * k1[i];
            rhs(stage, k2);
            for (std::size_t i = 0; i < g; ++i) stage[i] = wh[i] + 0.5 * dt * k2[i];
            rhs(stage, k3);
            for (std::size_t i = 0; i < g; ++i) stage[i] = wh[i] + dt * k3[i];
            rhs(stage, k4);
            for (std::size_t i = 0; i < g; ++i)
                wh[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        store(sample);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Disk cache: plain-text header plus a little-endian float64 block.

inline std::uint64_t fnv1a(std::span<const char> bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string oracle_cache_key(const std::string& problem, int resolution, double dt_ref,
                                    int n_t) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s:%d:%.17g:%d", problem.c_str(), resolution, dt_ref, n_t);
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a(std::span<const char>(buf, std::strlen(buf)))));
    return problem + "-" + hex;
}

inline void save_trajectory(const ReferenceTrajectory& t, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw Error("cannot write oracle cache file: " + tmp);
        os << "dpinn-oracle 1\n";
        os << "grid " << t.grid_x.size() << ' ' << t.grid_y.size() << '\n';
        os << "fields";
        for (const auto& f : t.field_names) os << ' ' << f;
        os << '\n';
        os << "samples " << t.timestamps.size() << '\n';
        os << "data " << (t.grid_x.size() + t.grid_y.size() + t.timestamps.size() + t.values.size())
           << '\n';
        detail::write_f64_le(os, t.grid_x);
        detail::write_f64_le(os, t.grid_y);
        detail::write_f64_le(os, t.timestamps);
        detail::write_f64_le(os, t.values);
        if (!os) throw Error("short write on oracle cache file: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline ReferenceTrajectory load_trajectory(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open oracle cache file: " + path);
    std::string word;
    int version = 0;
    is >> word >> version;
    if (word != "dpinn-oracle" || version != 1) throw Error("not an oracle cache file: " + path);
    ReferenceTrajectory t;
    std::size_t nx = 0, ny = 0, ns = 0, total = 0;
    while (is >> word) {
        if (word == "grid") is >> nx >> ny;
        else if (word == "fields") {
            std::string line;
            std::getline(is, line);
            std::istringstream ls(line);
            std::string f;
            while (ls >> f) t.field_names.push_back(f);
        } else if (word == "samples") is >> ns;
        else if (word == "data") {
            is >> total;
            is.get();
            t.grid_x.resize(nx);
            t.grid_y.resize(ny);
            t.timestamps.resize(ns);
            t.values.resize(total - nx - ny - ns);
            detail::read_f64_le(is, t.grid_x);
            detail::read_f64_le(is, t.grid_y);
            detail::read_f64_le(is, t.timestamps);
            detail::read_f64_le(is, t.values);
            if (!is) throw Error("truncated oracle cache file: " + path);
            return t;
        } else {
            throw Error("unexpected token '" + word + "' in oracle cache: " + path);
        }
    }
    throw Error("oracle cache file has no data block: " + path);
}

/// Runs the appropriate reference solver for the problem, memoizing the
/// trajectory under cache_dir. cache_hit reports whether disk was used.
inline ReferenceTrajectory solve_reference(const PDEProblem& p, int resolution, double dt_ref,
                                           int n_t, const std::string& cache_dir = "",
                                           bool* cache_hit = nullptr) {
    if (cache_hit) *cache_hit = false;
    std::string path;
    if (!cache_dir.empty()) {
        std::filesystem::create_directories(cache_dir);
        path = cache_dir + "/" + oracle_cache_key(p.name, resolution, dt_ref, n_t) + ".bin";
        if (std::filesystem::exists(path)) {
            if (cache_hit) *cache_hit = true;
            return load_trajectory(path);
        }
    }
    ReferenceTrajectory t;
    if (p.op == OperatorKind::NavierStokes2D)
        t = spectral_solve_ns2d(p, resolution, dt_ref, n_t);
    else if (p.boundary == BoundaryType::Periodic)
        t = spectral_solve_1d(p, resolution, dt_ref, n_t);
    else
        t = fd_solve_dirichlet(p, resolution, dt_ref, n_t);
    if (!path.empty()) save_trajectory(t, path);
    return t;
}

} // namespace dpinn
