#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dpinn/errors.hpp"
#include "dpinn/network.hpp"
#include "dpinn/params.hpp"
#include "dpinn/pde.hpp"
#include "dpinn/schemes.hpp"
#include "dpinn/tape.hpp"

namespace dpinn {

enum class TransferMode { All, LastK, None };
enum class StopReason { Threshold, MaxIters };

struct TrainConfig {
    int n_t = 20;         // timestamps
    int n_r = 128;        // interior collocation points
    int n_b = 2;          // boundary points (Dirichlet problems)
    int n_u = 0;          // initial-fit points; 0 means "use n_r"
    double lambda_r = 1.0;
    double lambda_b = 100.0;
    double lambda_u = 1.0;
    int m0 = 3000;        // max iterations, initial fit
    int m1 = 500;         // max iterations per timestamp
    double epsilon = 1e-9;
    double eta0 = 1e-3;
    double decay_factor = 0.9;
    int decay_every = 1000;
    TransferMode transfer = TransferMode::All;
    int transfer_k = 1;
    std::string scheme = "crank_nicolson";
    std::uint64_t seed = 0;
    int threads = 1;
    // Network architecture; the embedding period comes from the problem.
    int depth = 3;
    int width = 64;
    int fourier_m = 10;
    bool modified_mlp = true;

    int initial_points() const { return n_u > 0 ? n_u : n_r; }

    void validate() const {
        if (n_t < 1) throw ConfigError("n_t must be >= 1");
        if (n_r < 1) throw ConfigError("n_r must be >= 1");
        if (epsilon <= 0.0) throw ConfigError("epsilon must be > 0");
        if (m0 < 1 || m1 < 1) throw ConfigError("m0 and m1 must be >= 1");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (depth < 1 || width < 1) throw ConfigError("network too small");
        if (transfer == TransferMode::LastK && transfer_k < 1)
            throw ConfigError("transfer_k must be >= 1 under last_k");
    }
};

/// Network used for one problem under one config. Dirichlet problems embed
/// on twice the domain length (soft boundary term stays in the loss);
/// periodic problems embed on the exact period, which hard-enforces the
/// boundary condition.
inline Network make_network(const PDEProblem& p, const TrainConfig& cfg) {
    NetworkSpec spec;
    spec.spatial_dim = p.spatial_dim;
    spec.arch = cfg.modified_mlp ? Arch::Modified : Arch::Plain;
    spec.depth = cfg.depth;
    spec.width = cfg.width;
    spec.out_dim = p.op == OperatorKind::NavierStokes2D ? 3 : 1;
    spec.fourier_m = cfg.fourier_m;
    const double mult = p.boundary == BoundaryType::Dirichlet ? 2.0 : 1.0;
    spec.period_x = mult * p.length_x();
    spec.period_y = p.spatial_dim == 2 ? mult * p.length_y() : spec.period_x;
    return Network(spec);
}

struct AdamState {
    std::vector<double> m, v;
    long long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One Adam update with bias correction. Only the listed index ranges are
/// touched; frozen values and moments stay bitwise unchanged.
inline void adam_step(AdamState& st, std::span<double> theta, std::span<const double> g,
                      double eta,
                      const std::vector<std::pair<std::size_t, std::size_t>>* trainable = nullptr) {
    if (st.m.size() != theta.size() || g.size() != theta.size())
        throw ShapeError("adam_step: layout mismatch");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    auto update = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
            st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
            theta[i] -= eta * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + st.eps);
        }
    };
    if (!trainable) {
        update(0, theta.size());
    } else {
        for (const auto& [ofs, len] : *trainable) update(ofs, ofs + len);
    }
}

inline std::pair<AdamState, ParameterVector> adam_step(AdamState st, ParameterVector theta,
                                                       const ParameterVector& g, double eta) {
    adam_step(st, theta.values, g.values, eta);
    return {std::move(st), std::move(theta)};
}

struct TimestampRecord {
    int index = 0;
    double final_loss = 0.0;
    int epochs = 0;
    StopReason stop_reason = StopReason::MaxIters;
    double residual_loss = 0.0;  // weighted residual term at the final params
    double wall_seconds = 0.0;
};

inline const char* to_string(StopReason r) {
    return r == StopReason::Threshold ? "threshold" : "max_iters";
}

struct TrajectorySolution {
    std::vector<ParameterVector> params;   // theta^0* .. theta^{N_t}*
    std::vector<TimestampRecord> records;  // index 0 = initial fit
    TrainConfig config;
    std::string problem_name;
    bool aborted = false;
    std::string abort_reason;
};

// ---------------------------------------------------------------------------

namespace train_detail {

inline std::vector<double> interior_points_1d(const PDEProblem& p, int n_r) {
    std::vector<double> xs(static_cast<std::size_t>(n_r));
    const double len = p.length_x();
    if (p.boundary == BoundaryType::Dirichlet) {
        const double h = len / (n_r + 1);
        for (int i = 0; i < n_r; ++i) xs[static_cast<std::size_t>(i)] = p.x_lo + h * (i + 1);
    } else {
        for (int i = 0; i < n_r; ++i) xs[static_cast<std::size_t>(i)] = p.x_lo + len * i / n_r;
    }
    return xs;
}

inline std::vector<double> initial_points_1d(const PDEProblem& p, int n_u) {
    std::vector<double> xs(static_cast<std::size_t>(n_u));
    const double len = p.length_x();
    if (p.boundary == BoundaryType::Dirichlet && n_u > 1) {
        for (int i = 0; i < n_u; ++i) xs[static_cast<std::size_t>(i)] = p.x_lo + len * i / (n_u - 1);
    } else {
        for (int i = 0; i < n_u; ++i) xs[static_cast<std::size_t>(i)] = p.x_lo + len * i / n_u;
    }
    return xs;
}

inline std::vector<std::pair<double, double>> lattice_points_2d(const PDEProblem& p, int n_r) {
    const int m = std::max(2, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_r)))));
    std::vector<std::pair<double, double>> pts;
    pts.reserve(static_cast<std::size_t>(m) * static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            pts.emplace_back(p.x_lo + p.length_x() * i / m, p.y_lo + p.length_y() * j / m);
    return pts;
}

struct ResidualSpec {
    NodeId node = kNoNode;
    double weight = 1.0;  // contributes weight/n_points * r^2
    int category = 0;     // 0 residual, 1 boundary, 2 initial, 3 auxiliary
};

struct MeanTerm {
    NodeId node = kNoNode;
    double weight = 1.0;  // contributes weight * mean(value)^2
};

struct Batch {
    Tape tape;
    std::vector<ResidualSpec> residuals;
    std::vector<MeanTerm> mean_terms;
    std::size_t n_points = 0;
    std::vector<double> ext;  // row-major [point][tape.n_ext]

    std::span<const double> ext_row(std::size_t i) const {
        return {ext.data() + i * static_cast<std::size_t>(tape.n_ext),
                static_cast<std::size_t>(tape.n_ext)};
    }
    double* ext_row_mut(std::size_t i) {
        return ext.data() + i * static_cast<std::size_t>(tape.n_ext);
    }
    void resize_points(std::size_t n) {
        n_points = n;
        ext.assign(n * static_cast<std::size_t>(tape.n_ext), 0.0);
    }
};

struct LossParts {
    double total = 0.0;
    double residual = 0.0;
    double boundary = 0.0;
    double initial = 0.0;
    double aux = 0.0;
};

/// Deterministic static partition over [0, n_items): fn(thread, begin, end).
template <class Fn>
void parallel_chunks(int n_threads, std::size_t n_items, Fn&& fn) {
    if (n_threads <= 1 || n_items < 2 * static_cast<std::size_t>(n_threads)) {
        fn(0, std::size_t{0}, n_items);
        return;
    }
    const auto T = static_cast<std::size_t>(n_threads);
    std::vector<std::thread> workers;
    workers.reserve(T - 1);
    for (std::size_t t = 1; t < T; ++t) {
        const std::size_t b = n_items * t / T;
        const std::size_t e = n_items * (t + 1) / T;
        workers.emplace_back([&fn, t, b, e] { fn(static_cast<int>(t), b, e); });
    }
    fn(0, std::size_t{0}, n_items / T);
    for (auto& w : workers) w.join();
}

inline TowerView<TapeScalar> tower_view_on_tape(Tape& t, const TapeJet& jet, int max_order) {
    auto comp = [&](int k) -> TapeScalar {
        if (k > jet.order || jet.c[static_cast<std::size_t>(k)] == kNoNode)
            return TapeScalar{&t, t.konst(0.0)};
        return TapeScalar{&t, jet.c[static_cast<std::size_t>(k)]};
    };
    TowerView<TapeScalar> v;
    v.u = comp(0);
    if (max_order >= 1) v.ux = comp(1);
    if (max_order >= 2) v.uxx = comp(2);
    if (max_order >= 3) v.uxxx = comp(3);
    if (max_order >= 4) v.uxxxx = comp(4);
    return v;
}

} // namespace train_detail

/// The sequential warm-started training engine for one (problem, config)
/// pair. Tapes are recorded once at construction and replayed per
/// collocation point; per-point external inputs (previous-state towers,
/// nested-stage targets) are refilled between timestamps.
class TrainSession {
public:
    enum class Family { SingleCN, SingleBE, SingleTrap, Nested, Bundle };

    TrainSession(PDEProblem problem, TrainConfig cfg)
        : problem_(std::move(problem)), cfg_(cfg) {
        cfg_.validate();
        tableau_ = builtin_tableau(cfg_.scheme);
        family_ = choose_family();
        net_ = make_network(problem_, cfg_);
        bundle_ = StageBundle{net_, tableau_.q};
        if (problem_.spatial_dim == 1) {
            xs_ = train_detail::interior_points_1d(problem_, cfg_.n_r);
            x0_ = train_detail::initial_points_1d(problem_, cfg_.initial_points());
        } else {
            pts2_ = train_detail::lattice_points_2d(problem_, cfg_.n_r);
        }
        build_all();
        grads_.assign(static_cast<std::size_t>(cfg_.threads), {});
    }

    const Network& network() const { return net_; }
    const ButcherTableau& tableau() const { return tableau_; }
    Family family() const { return family_; }
    const PDEProblem& problem() const { return problem_; }
    const TrainConfig& config() const { return cfg_; }
    double tau() const { return problem_.end_time / cfg_.n_t; }

    ParameterVector initial_params() const { return net_.init(cfg_.seed); }

    /// Step (a): fit the initial condition. Runs the full budget unless the
    /// loss falls below 1e-12.
    std::pair<ParameterVector, TimestampRecord> fit_initial(ParameterVector start) {
        fill_fit_ext();
        std::vector<train_detail::Batch*> batches = {&fit_batch_};
        if (has_boundary_term()) batches.push_back(&boundary_batch_);
        TimestampRecord rec = adam_loop(batches, start.values, nullptr, cfg_.m0, false);
        rec.index = 0;
        return {std::move(start), rec};
    }

    /// Step (b) state: the trainable parameters carried between timestamps
    /// (a single network, or the stage bundle for multi-stage schemes).
    ParameterVector make_advance_state(const ParameterVector& theta0) {
        if (family_ != Family::Bundle) return theta0;
        ParameterVector state = bundle_.init(cfg_.seed + 0xb5ad4eceda1ce2a9ULL);
        auto dst = state.values.begin() +
                   static_cast<std::ptrdiff_t>(bundle_.member_base(tableau_.q));
        std::copy(theta0.values.begin(), theta0.values.end(), dst);
        return state;
    }

    /// The solution network theta^n inside an advance state.
    ParameterVector solution_of(const ParameterVector& state) const {
        if (family_ != Family::Bundle) return state;
        const auto base = static_cast<std::ptrdiff_t>(bundle_.member_base(tableau_.q));
        ParameterVector out;
        out.values.assign(state.values.begin() + base,
                          state.values.begin() + base + static_cast<std::ptrdiff_t>(bundle_.member_params()));
        for (const auto& s : net_.layout()) out.layout.push_back(s);
        return out;
    }

    /// One timestamp: warm start from `state`, train, stop on the
    /// successive-loss threshold. n is the source timestamp index.
    std::pair<ParameterVector, TimestampRecord> advance(ParameterVector state, int n) {
        fill_advance_ext(solution_of(state), xs_);
        if (cfg_.transfer == TransferMode::None) {
            const std::uint64_t cold = cfg_.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(n + 1);
            if (family_ == Family::Bundle) {
                ParameterVector fresh = bundle_.init(cold);
                state.values = std::move(fresh.values);
            } else {
                ParameterVector fresh = net_.init(cold);
                state.values = std::move(fresh.values);
            }
        }
        std::vector<train_detail::Batch*> batches = {&advance_batch_};
        if (has_boundary_term()) batches.push_back(&boundary_batch_);
        const auto* ranges = trainable_ranges_.empty() ? nullptr : &trainable_ranges_;
        TimestampRecord rec = adam_loop(batches, state.values, ranges, cfg_.m1, true);
        rec.index = n + 1;
        return {std::move(state), rec};
    }

    /// Algorithm: initial fit, then strictly sequential warm-started
    /// timestamp training. On numerical overflow the partial trajectory is
    /// returned with the abort recorded.
    TrajectorySolution run() {
        TrajectorySolution out;
        out.config = cfg_;
        out.problem_name = problem_.name;
        try {
            auto [theta0, rec0] = fit_initial(initial_params());
            out.params.push_back(theta0);
            out.records.push_back(rec0);
            ParameterVector state = make_advance_state(theta0);
            for (int n = 0; n < cfg_.n_t; ++n) {
                auto [next, rec] = advance(std::move(state), n);
                state = std::move(next);
                out.params.push_back(solution_of(state));
                out.records.push_back(rec);
            }
        } catch (const NumericalOverflow& e) {
            out.aborted = true;
            out.abort_reason = e.what();
        }
        return out;
    }

    /// Loss of Eq. (5) for given parameters over explicit points
    /// (residual term plus the soft boundary term when applicable).
    double stage_loss(const ParameterVector& theta_next, const ParameterVector& theta_prev,
                      std::span<const double> points) {
        if (problem_.spatial_dim != 1)
            throw ShapeError("stage_loss with explicit points is 1-D only");
        std::vector<double> pts(points.begin(), points.end());
        fill_advance_ext(theta_prev, pts);
        std::vector<train_detail::Batch*> batches = {&advance_batch_};
        if (has_boundary_term()) batches.push_back(&boundary_batch_);
        auto parts = eval_batches(batches, theta_next.values, false, {});
        // Restore the config collocation set for subsequent calls.
        if (!xs_.empty()) fill_advance_ext(theta_prev, xs_);
        return parts.total;
    }

    /// Direct (non-tape) network evaluation, for sampling fields.
    double predict(const ParameterVector& theta, double x, double y = 0.0, int output = 0) const {
        return net_.eval(theta.values, x, y)[static_cast<std::size_t>(output)];
    }

private:
    PDEProblem problem_;
    TrainConfig cfg_;
    ButcherTableau tableau_;
    Family family_ = Family::SingleCN;
    Network net_;
    StageBundle bundle_;
    std::vector<double> xs_, x0_;
    std::vector<std::pair<double, double>> pts2_;

    train_detail::Batch fit_batch_, advance_batch_, boundary_batch_;
    Tape eval_tape_;
    std::vector<NodeId> eval_nodes_;  // jet components of the solution net
    int eval_order_ = 0;
    std::vector<std::pair<std::size_t, std::size_t>> trainable_ranges_;
    std::vector<std::vector<TapeWorkspace>> ws_;  // [batch kind][thread]
    std::vector<std::vector<double>> grads_;      // [thread][n_params]
    long long global_step_ = 0;

    bool has_boundary_term() const {
        return problem_.boundary == BoundaryType::Dirichlet && problem_.spatial_dim == 1;
    }

    Family choose_family() {
        const std::string& s = cfg_.scheme;
        if (problem_.op == OperatorKind::NavierStokes2D) {
            if (s != "crank_nicolson")
                throw ConfigError("the 2-D Navier-Stokes problem is trained with crank_nicolson");
            return Family::SingleCN;
        }
        if (s == "crank_nicolson") return Family::SingleCN;
        if (s == "backward_euler") return Family::SingleBE;
        if (s == "trapezoidal") return Family::SingleTrap;
        if (!tableau_.implicit) {
            // Nested evaluation needs q * d tower orders.
            if (tableau_.q * problem_.max_derivative_order <= kMaxDerivOrder)
                return Family::Nested;
            return Family::Bundle;
        }
        return Family::Bundle;
    }

    // ---- tape construction -------------------------------------------------

    void build_all() {
        build_fit_batch();
        if (problem_.spatial_dim == 1) {
            build_advance_batch_1d();
            if (has_boundary_term()) build_boundary_batch();
            build_eval_tape_1d();
        } else {
            build_advance_batch_ns();
            build_eval_tape_ns();
        }
        build_trainable_ranges();
        ws_.assign(3, std::vector<TapeWorkspace>(static_cast<std::size_t>(cfg_.threads)));
    }

    void build_fit_batch() {
        Tape& t = fit_batch_.tape;
        if (problem_.spatial_dim == 1) {
            NodeId x = t.ext_in(0), target = t.ext_in(1);
            auto outs = net_.record(t, TapeJet::variable(t, x, 0), TapeJet{});
            NodeId r = t.sub(outs[0].c[0], target);
            fit_batch_.residuals.push_back({r, cfg_.lambda_u, 2});
            return;
        }
        // Navier-Stokes: fit the initial vorticity; keep the velocity
        // solenoidal and tied to w through the curl, with a mean-velocity
        // gauge term to pin the undetermined constants.
        NodeId x = t.ext_in(0), y = t.ext_in(1), w0 = t.ext_in(2);
        auto st = record_ns_state(t, x, y, 1);
        fit_batch_.residuals.push_back({t.sub(st.w.v.id, w0), cfg_.lambda_u, 2});
        fit_batch_.residuals.push_back({ns_divergence(st).id, cfg_.lambda_r, 3});
        fit_batch_.residuals.push_back({ns_vorticity_defect(st).id, cfg_.lambda_r, 3});
        fit_batch_.mean_terms.push_back({st.u.v.id, 1.0});
        fit_batch_.mean_terms.push_back({st.v.v.id, 1.0});
    }

    void build_boundary_batch() {
        Tape& t = boundary_batch_.tape;
        NodeId x = t.ext_in(0), g = t.ext_in(1);
        const std::size_t base =
            family_ == Family::Bundle ? bundle_.member_base(tableau_.q) : 0;
        auto outs = net_.record(t, TapeJet::variable(t, x, 0), TapeJet{}, base);
        boundary_batch_.residuals.push_back({t.sub(outs[0].c[0], g), cfg_.lambda_b, 1});
        boundary_batch_.resize_points(2);
        double* r0 = boundary_batch_.ext_row_mut(0);
        r0[0] = problem_.x_lo;
        r0[1] = problem_.dirichlet_value;
        double* r1 = boundary_batch_.ext_row_mut(1);
        r1[0] = problem_.x_hi;
        r1[1] = problem_.dirichlet_value;
    }

    void build_advance_batch_1d() {
        Tape& t = advance_batch_.tape;
        const int d = problem_.max_derivative_order;
        const double dt = tau();
        NodeId x = t.ext_in(0);

        auto op_on = [&](const TapeJet& jet) {
            return apply_operator_t<TapeScalar>(problem_,
                                                train_detail::tower_view_on_tape(t, jet, d));
        };

        switch (family_) {
            case Family::SingleCN: {
                TapeJet next = net_.record(t, TapeJet::variable(t, x, d), TapeJet{})[0];
                TapeJet prev = ext_jet(t, 1, d);
                TapeJet avg = jet::scale(t, jet::add(t, next, prev), 0.5);
                TapeScalar dudt{&t, t.scale(t.sub(next.c[0], prev.c[0]), 1.0 / dt)};
                NodeId r = (dudt - op_on(avg)).id;
                advance_batch_.residuals.push_back({r, cfg_.lambda_r, 0});
                break;
            }
            case Family::SingleBE: {
                TapeJet next = net_.record(t, TapeJet::variable(t, x, d), TapeJet{})[0];
                NodeId prev0 = t.ext_in(1);
                TapeScalar dudt{&t, t.scale(t.sub(next.c[0], prev0), 1.0 / dt)};
                advance_batch_.residuals.push_back({(dudt - op_on(next)).id, cfg_.lambda_r, 0});
                break;
            }
            case Family::SingleTrap: {
                TapeJet next = net_.record(t, TapeJet::variable(t, x, d), TapeJet{})[0];
                NodeId prev0 = t.ext_in(1);
                NodeId n_prev = t.ext_in(2);  // N[u^n](x), theta-independent
                TapeScalar dudt{&t, t.scale(t.sub(next.c[0], prev0), 1.0 / dt)};
                TapeScalar mean_n = 0.5 * (op_on(next) + TapeScalar{&t, n_prev});
                advance_batch_.residuals.push_back({(dudt - mean_n).id, cfg_.lambda_r, 0});
                break;
            }
            case Family::Nested: {
                TapeJet next = net_.record(t, TapeJet::variable(t, x, 0), TapeJet{})[0];
                NodeId prev0 = t.ext_in(1);
                NodeId target = t.ext_in(2);  // sum_i b_i k_i(x), theta-independent
                TapeScalar dudt{&t, t.scale(t.sub(next.c[0], prev0), 1.0 / dt)};
                advance_batch_.residuals.push_back(
                    {(dudt - TapeScalar{&t, target}).id, cfg_.lambda_r, 0});
                break;
            }
            case Family::Bundle: {
                TapeJet xj = TapeJet::variable(t, x, d);
                TapeJet prev = ext_jet(t, 1, d);
                std::vector<TapeJet> stages;
                for (int m = 0; m < tableau_.q; ++m)
                    stages.push_back(net_.record(t, xj, TapeJet{}, bundle_.member_base(m))[0]);
                TapeJet next = net_.record(t, xj, TapeJet{}, bundle_.member_base(tableau_.q))[0];
                for (int i = 0; i < tableau_.q; ++i) {
                    TapeJet arg = prev;
                    for (int j = 0; j < tableau_.q; ++j) {
                        const double aij = tableau_.A(i, j);
                        if (aij != 0.0)
                            arg = jet::add(t, arg, jet::scale(t, stages[static_cast<std::size_t>(j)], dt * aij));
                    }
                    TapeScalar ki{&t, stages[static_cast<std::size_t>(i)].c[0]};
                    advance_batch_.residuals.push_back({(ki - op_on(arg)).id, cfg_.lambda_r, 0});
                }
                TapeScalar acc{&t, t.konst(0.0)};
                for (int i = 0; i < tableau_.q; ++i)
                    acc = acc + tableau_.b[static_cast<std::size_t>(i)] *
                                    TapeScalar{&t, stages[static_cast<std::size_t>(i)].c[0]};
                TapeScalar dudt{&t, t.scale(t.sub(next.c[0], prev.c[0]), 1.0 / dt)};
                advance_batch_.residuals.push_back({(dudt - acc).id, cfg_.lambda_r, 0});
                break;
            }
        }
    }

    // Records the network along both axes and assembles per-field views
    // (value and first/second derivatives in x and y) on the tape.
    NSState<TapeScalar> record_ns_state(Tape& t, NodeId x, NodeId y, int order) {
        auto xs = net_.record(t, TapeJet::variable(t, x, order), TapeJet::constant(y, order));
        auto ys = net_.record(t, TapeJet::constant(x, order), TapeJet::variable(t, y, order));
        auto field = [&](int idx) {
            Field2D<TapeScalar> f;
            f.v = TapeScalar{&t, xs[static_cast<std::size_t>(idx)].c[0]};
            f.dx = TapeScalar{&t, xs[static_cast<std::size_t>(idx)].c[1]};
            f.dy = TapeScalar{&t, ys[static_cast<std::size_t>(idx)].c[1]};
            if (order >= 2) {
                f.dxx = TapeScalar{&t, xs[static_cast<std::size_t>(idx)].c[2]};
                f.dyy = TapeScalar{&t, ys[static_cast<std::size_t>(idx)].c[2]};
            }
            return f;
        };
        NSState<TapeScalar> st;
        st.u = field(0);
        st.v = field(1);
        st.w = field(2);
        return st;
    }

    void build_advance_batch_ns() {
        Tape& t = advance_batch_.tape;
        const double dt = tau();
        NodeId x = t.ext_in(0), y = t.ext_in(1);
        auto next = record_ns_state(t, x, y, 2);
        // Previous state per field: [v, dx, dxx, dy, dyy] starting at slot 2.
        auto prev_field = [&](int f) {
            Field2D<TapeScalar> pf;
            const int base = 2 + 5 * f;
            pf.v = TapeScalar{&t, t.ext_in(base + 0)};
            pf.dx = TapeScalar{&t, t.ext_in(base + 1)};
            pf.dxx = TapeScalar{&t, t.ext_in(base + 2)};
            pf.dy = TapeScalar{&t, t.ext_in(base + 3)};
            pf.dyy = TapeScalar{&t, t.ext_in(base + 4)};
            return pf;
        };
        NSState<TapeScalar> prev;
        prev.u = prev_field(0);
        prev.v = prev_field(1);
        prev.w = prev_field(2);
        auto avg_field = [&](const Field2D<TapeScalar>& a, const Field2D<TapeScalar>& b) {
            Field2D<TapeScalar> m;
            m.v = 0.5 * (a.v + b.v);
            m.dx = 0.5 * (a.dx + b.dx);
            m.dy = 0.5 * (a.dy + b.dy);
            m.dxx = 0.5 * (a.dxx + b.dxx);
            m.dyy = 0.5 * (a.dyy + b.dyy);
            return m;
        };
        NSState<TapeScalar> avg;
        avg.u = avg_field(next.u, prev.u);
        avg.v = avg_field(next.v, prev.v);
        avg.w = avg_field(next.w, prev.w);

        TapeScalar dwdt = (1.0 / dt) * (next.w.v - prev.w.v);
        advance_batch_.residuals.push_back({(dwdt - ns_transport_rhs(problem_, avg)).id, cfg_.lambda_r, 0});
        advance_batch_.residuals.push_back({ns_divergence(next).id, cfg_.lambda_r, 3});
        advance_batch_.residuals.push_back({ns_vorticity_defect(next).id, cfg_.lambda_r, 3});
        advance_batch_.mean_terms.push_back({next.u.v.id, 1.0});
        advance_batch_.mean_terms.push_back({next.v.v.id, 1.0});
    }

    static TapeJet ext_jet(Tape& t, int first_slot, int order) {
        TapeJet j;
        j.order = order;
        for (int k = 0; k <= order; ++k) j.c[static_cast<std::size_t>(k)] = t.ext_in(first_slot + k);
        return j;
    }

    void build_eval_tape_1d() {
        switch (family_) {
            case Family::SingleCN:
            case Family::SingleTrap:
            case Family::Bundle: eval_order_ = problem_.max_derivative_order; break;
            case Family::SingleBE: eval_order_ = 0; break;
            case Family::Nested: eval_order_ = tableau_.q * problem_.max_derivative_order; break;
        }
        NodeId x = eval_tape_.ext_in(0);
        auto outs = net_.record(eval_tape_, TapeJet::variable(eval_tape_, x, eval_order_), TapeJet{});
        for (int k = 0; k <= eval_order_; ++k) {
            NodeId id = outs[0].c[static_cast<std::size_t>(k)];
            eval_nodes_.push_back(id == kNoNode ? eval_tape_.konst(0.0) : id);
        }
    }

    void build_eval_tape_ns() {
        eval_order_ = 2;
        NodeId x = eval_tape_.ext_in(0), y = eval_tape_.ext_in(1);
        auto xs = net_.record(eval_tape_, TapeJet::variable(eval_tape_, x, 2), TapeJet::constant(y, 2));
        auto ys = net_.record(eval_tape_, TapeJet::constant(x, 2), TapeJet::variable(eval_tape_, y, 2));
        for (int f = 0; f < 3; ++f) {
            eval_nodes_.push_back(xs[static_cast<std::size_t>(f)].c[0]);
            eval_nodes_.push_back(xs[static_cast<std::size_t>(f)].c[1]);
            eval_nodes_.push_back(xs[static_cast<std::size_t>(f)].c[2]);
            eval_nodes_.push_back(ys[static_cast<std::size_t>(f)].c[1]);
            eval_nodes_.push_back(ys[static_cast<std::size_t>(f)].c[2]);
        }
    }

    void build_trainable_ranges() {
        trainable_ranges_.clear();
        if (cfg_.transfer != TransferMode::LastK) return;
        auto groups = net_.layer_groups();
        const int keep = std::min<int>(cfg_.transfer_k, static_cast<int>(groups.size()));
        std::vector<std::string> kept(groups.end() - keep, groups.end());
        auto add_member = [&](const std::string& prefix, std::size_t base) {
            ParameterVector proto = net_.init(0, base, prefix);
            for (const auto& g : kept) {
                for (const char* wb : {"W", "b"}) {
                    for (const auto& s : proto.layout) {
                        if (s.name == prefix + wb + g)
                            trainable_ranges_.emplace_back(s.offset, s.length);
                    }
                }
            }
        };
        if (family_ == Family::Bundle) {
            for (int m = 0; m <= tableau_.q; ++m)
                add_member(bundle_.member_name(m) + ".", bundle_.member_base(m));
        } else {
            add_member("", 0);
        }
    }

    // ---- per-timestamp external inputs -------------------------------------

    void fill_fit_ext() {
        if (problem_.spatial_dim == 1) {
            fit_batch_.resize_points(x0_.size());
            for (std::size_t i = 0; i < x0_.size(); ++i) {
                double* row = fit_batch_.ext_row_mut(i);
                row[0] = x0_[i];
                row[1] = problem_.initial(x0_[i]);
            }
        } else {
            fit_batch_.resize_points(pts2_.size());
            for (std::size_t i = 0; i < pts2_.size(); ++i) {
                double* row = fit_batch_.ext_row_mut(i);
                row[0] = pts2_[i].first;
                row[1] = pts2_[i].second;
                row[2] = problem_.initial(pts2_[i].first, pts2_[i].second);
            }
        }
    }

    void fill_advance_ext(const ParameterVector& theta_prev, std::span<const double> points) {
        if (problem_.spatial_dim == 2) {
            fill_advance_ext_ns(theta_prev);
            return;
        }
        advance_batch_.resize_points(points.size());
        TapeWorkspace ws;
        eval_tape_.prepare(ws);
        const double dt = tau();
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double ext[1] = {points[i]};
            eval_tape_.forward(ws, theta_prev.values, std::span<const double>(ext, 1));
            DerivativeTower tower(eval_order_);
            for (int k = 0; k <= eval_order_; ++k)
                tower.c[static_cast<std::size_t>(k)] =
                    ws.val[static_cast<std::size_t>(eval_nodes_[static_cast<std::size_t>(k)])];
            if (!tower.finite())
                throw NumericalOverflow("previous-state tower is non-finite");
            double* row = advance_batch_.ext_row_mut(i);
            row[0] = points[i];
            switch (family_) {
                case Family::SingleCN:
                case Family::Bundle:
                    for (int k = 0; k <= problem_.max_derivative_order; ++k)
                        row[1 + k] = tower.c[static_cast<std::size_t>(k)];
                    break;
                case Family::SingleBE:
                    row[1] = tower.c[0];
                    break;
                case Family::SingleTrap:
                    row[1] = tower.c[0];
                    row[2] = apply_operator(problem_, tower);
                    break;
                case Family::Nested: {
                    row[1] = tower.c[0];
                    auto ks = explicit_stage_jets(
                        tableau_, tower, dt, problem_.max_derivative_order,
                        [&](const DerivativeTower& arg, int out_order) {
                            return apply_operator_jet(problem_, arg, out_order);
                        });
                    double acc = 0.0;
                    for (int s = 0; s < tableau_.q; ++s)
                        acc += tableau_.b[static_cast<std::size_t>(s)] * ks[static_cast<std::size_t>(s)].value();
                    row[2] = acc;
                    break;
                }
            }
        }
    }

    void fill_advance_ext_ns(const ParameterVector& theta_prev) {
        advance_batch_.resize_points(pts2_.size());
        TapeWorkspace ws;
        eval_tape_.prepare(ws);
        for (std::size_t i = 0; i < pts2_.size(); ++i) {
            const double ext[2] = {pts2_[i].first, pts2_[i].second};
            eval_tape_.forward(ws, theta_prev.values, std::span<const double>(ext, 2));
            double* row = advance_batch_.ext_row_mut(i);
            row[0] = pts2_[i].first;
            row[1] = pts2_[i].second;
            for (int k = 0; k < 15; ++k) {
                const double v = ws.val[static_cast<std::size_t>(eval_nodes_[static_cast<std::size_t>(k)])];
                if (!std::isfinite(v)) throw NumericalOverflow("previous-state field is non-finite");
                row[2 + k] = v;
            }
        }
    }

    // ---- loss evaluation and the optimization loop -------------------------

    std::vector<TapeWorkspace>& workspaces_for(const train_detail::Batch* b) {
        int kind = b == &fit_batch_ ? 0 : (b == &advance_batch_ ? 1 : 2);
        auto& vec = ws_[static_cast<std::size_t>(kind)];
        for (auto& w : vec)
            if (w.val.size() != b->tape.size()) b->tape.prepare(w);
        return vec;
    }

    train_detail::LossParts eval_batches(const std::vector<train_detail::Batch*>& batches,
                                         std::span<const double> params, bool with_grad,
                                         std::span<double> grad_out) {
        const int T = cfg_.threads;
        if (with_grad) {
            for (auto& g : grads_) g.assign(params.size(), 0.0);
        }
        train_detail::LossParts parts;
        for (auto* b : batches) {
            auto& workspaces = workspaces_for(b);
            // Mean terms need the means before the gradient pass.
            std::vector<double> means(b->mean_terms.size(), 0.0);
            if (!b->mean_terms.empty()) {
                std::vector<std::vector<double>> partial(
                    static_cast<std::size_t>(T), std::vector<double>(b->mean_terms.size(), 0.0));
                train_detail::parallel_chunks(T, b->n_points, [&](int t, std::size_t lo, std::size_t hi) {
                    auto& ws = workspaces[static_cast<std::size_t>(t)];
                    for (std::size_t i = lo; i < hi; ++i) {
                        b->tape.forward(ws, params, b->ext_row(i));
                        for (std::size_t m = 0; m < b->mean_terms.size(); ++m)
                            partial[static_cast<std::size_t>(t)][m] +=
                                ws.val[static_cast<std::size_t>(b->mean_terms[m].node)];
                    }
                });
                for (int t = 0; t < T; ++t)
                    for (std::size_t m = 0; m < means.size(); ++m)
                        means[m] += partial[static_cast<std::size_t>(t)][m];
                for (auto& m : means) m /= static_cast<double>(b->n_points);
            }

            std::vector<std::array<double, 4>> cat(
                static_cast<std::size_t>(T), std::array<double, 4>{0.0, 0.0, 0.0, 0.0});
            const double inv_n = 1.0 / static_cast<double>(b->n_points);
            train_detail::parallel_chunks(T, b->n_points, [&](int t, std::size_t lo, std::size_t hi) {
                auto& ws = workspaces[static_cast<std::size_t>(t)];
                for (std::size_t i = lo; i < hi; ++i) {
                    b->tape.forward(ws, params, b->ext_row(i));
                    for (const auto& rs : b->residuals) {
                        const double r = ws.val[static_cast<std::size_t>(rs.node)];
                        const double w = rs.weight * inv_n;
                        cat[static_cast<std::size_t>(t)][static_cast<std::size_t>(std::min(rs.category, 3))] += w * r * r;
                        if (with_grad) ws.adj[static_cast<std::size_t>(rs.node)] += 2.0 * w * r;
                    }
                    if (with_grad) {
                        for (std::size_t m = 0; m < b->mean_terms.size(); ++m)
                            ws.adj[static_cast<std::size_t>(b->mean_terms[m].node)] +=
                                2.0 * b->mean_terms[m].weight * means[m] * inv_n;
                        b->tape.reverse(ws, params, grads_[static_cast<std::size_t>(t)]);
                    }
                }
            });
            for (int t = 0; t < T; ++t) {
                parts.residual += cat[static_cast<std::size_t>(t)][0];
                parts.boundary += cat[static_cast<std::size_t>(t)][1];
                parts.initial += cat[static_cast<std::size_t>(t)][2];
                parts.aux += cat[static_cast<std::size_t>(t)][3];
            }
            for (std::size_t m = 0; m < b->mean_terms.size(); ++m)
                parts.aux += b->mean_terms[m].weight * means[m] * means[m];
        }
        parts.total = parts.residual + parts.boundary + parts.initial + parts.aux;
        if (with_grad) {
            for (int t = 0; t < cfg_.threads; ++t) {
                const auto& g = grads_[static_cast<std::size_t>(t)];
                for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out[i] += g[i];
            }
        }
        return parts;
    }

    TimestampRecord adam_loop(const std::vector<train_detail::Batch*>& batches,
                              std::span<double> theta,
                              const std::vector<std::pair<std::size_t, std::size_t>>* trainable,
                              int max_iters, bool delta_stop) {
        const auto t_start = std::chrono::steady_clock::now();
        AdamState adam(theta.size());
        std::vector<double> grad(theta.size());
        TimestampRecord rec;
        double prev_loss = 0.0;
        bool have_prev = false;
        train_detail::LossParts parts;
        int updates = 0;
        for (int i = 1; i <= max_iters; ++i) {
            std::fill(grad.begin(), grad.end(), 0.0);
            parts = eval_batches(batches, theta, true, grad);
            if (!std::isfinite(parts.total))
                throw NumericalOverflow("loss became non-finite during training");
            const bool stop = delta_stop ? (have_prev && std::abs(parts.total - prev_loss) < cfg_.epsilon)
                                         : (parts.total < 1e-12);
            if (stop) {
                rec.stop_reason = StopReason::Threshold;
                rec.epochs = updates;
                rec.final_loss = parts.total;
                rec.residual_loss = parts.residual;
                rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
                return rec;
            }
            prev_loss = parts.total;
            have_prev = true;
            const double eta =
                cfg_.eta0 * std::pow(cfg_.decay_factor,
                                     static_cast<double>(global_step_) / cfg_.decay_every);
            adam_step(adam, theta, grad, eta, trainable);
            ++global_step_;
            ++updates;
        }
        parts = eval_batches(batches, theta, false, {});
        if (!std::isfinite(parts.total))
            throw NumericalOverflow("loss became non-finite during training");
        rec.stop_reason = StopReason::MaxIters;
        rec.epochs = updates;
        rec.final_loss = parts.total;
        rec.residual_loss = parts.residual;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return rec;
    }
};

// ---------------------------------------------------------------------------
// Free-function surface mirroring the per-operation contracts.

inline std::pair<ParameterVector, TimestampRecord> fit_initial(const PDEProblem& p,
                                                               const TrainConfig& cfg) {
    TrainSession s(p, cfg);
    return s.fit_initial(s.initial_params());
}

inline std::pair<ParameterVector, TimestampRecord> advance(const ParameterVector& theta_n,
                                                           const PDEProblem& p,
                                                           const TrainConfig& cfg, int n = 0) {
    TrainSession s(p, cfg);
    if (s.family() == TrainSession::Family::Bundle)
        throw ConfigError("advance() on a multi-stage bundle is driven through run()");
    auto [state, rec] = s.advance(theta_n, n);
    return {std::move(state), rec};
}

inline double stage_loss(const ParameterVector& theta_next, const ParameterVector& theta_prev,
                         const PDEProblem& p, const ButcherTableau& tableau,
                         std::span<const double> points, TrainConfig cfg) {
    cfg.scheme = tableau.name;
    TrainSession s(p, cfg);
    return s.stage_loss(theta_next, theta_prev, points);
}

inline TrajectorySolution run(const PDEProblem& p, const TrainConfig& cfg) {
    TrainSession s(p, cfg);
    return s.run();
}

/// Network fields sampled by direct evaluation onto a grid:
/// values[t][i] for t = 1..N_t (skipping the initial fit).
inline std::vector<double> sample_trajectory(const TrajectorySolution& traj, const PDEProblem& p,
                                             std::span<const double> grid, int field = 0,
                                             bool include_t0 = false) {
    Network net = make_network(p, traj.config);
    std::vector<double> out;
    const std::size_t first = include_t0 ? 0 : 1;
    for (std::size_t n = first; n < traj.params.size(); ++n)
        for (double x : grid)
            out.push_back(net.eval(traj.params[n].values, x)[static_cast<std::size_t>(field)]);
    return out;
}

} // namespace dpinn
