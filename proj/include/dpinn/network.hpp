#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dpinn/errors.hpp"
#include "dpinn/params.hpp"
#include "dpinn/tape.hpp"
#include "dpinn/tower.hpp"

namespace dpinn {

/// Deterministic, platform-independent uniform generator (splitmix64).
struct SplitMix64 {
    std::uint64_t state;
    explicit SplitMix64(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform_pm(double limit) { return (2.0 * uniform() - 1.0) * limit; }
};

/// gamma(x) = [1, cos(wx), sin(wx), ..., cos(Mwx), sin(Mwx)], w = 2*pi/L.
/// Exactly periodic after range reduction, which hard-enforces periodic
/// boundary conditions on anything downstream of it.
struct FourierEmbedding1D {
    int M = 1;
    double L = 2.0;

    double omega() const { return 2.0 * std::numbers::pi / L; }
    int output_dim() const { return 2 * M + 1; }

    double reduce(double x) const {
        double r = std::fmod(x, L);
        if (r < 0.0) r += L;
        return r;
    }

    std::vector<double> embed(double x) const {
        const double r = reduce(x);
        const double w = omega();
        std::vector<double> f;
        f.reserve(static_cast<std::size_t>(output_dim()));
        f.push_back(1.0);
        for (int i = 1; i <= M; ++i) {
            f.push_back(std::cos(i * w * r));
            f.push_back(std::sin(i * w * r));
        }
        return f;
    }
};

/// 2-D embedding: constant 1, the four pure blocks cos/sin in each axis,
/// then the four product blocks over all (i, j) pairs in row-major order.
/// Output dimension 1 + 4M + 4M^2.
struct FourierEmbedding2D {
    int M = 1;
    double Lx = 2.0 * std::numbers::pi;
    double Ly = 2.0 * std::numbers::pi;

    double omega_x() const { return 2.0 * std::numbers::pi / Lx; }
    double omega_y() const { return 2.0 * std::numbers::pi / Ly; }
    int output_dim() const { return 1 + 4 * M + 4 * M * M; }

    std::vector<double> embed(double x, double y) const {
        double rx = std::fmod(x, Lx);
        if (rx < 0.0) rx += Lx;
        double ry = std::fmod(y, Ly);
        if (ry < 0.0) ry += Ly;
        const double wx = omega_x(), wy = omega_y();
        std::vector<double> cx(static_cast<std::size_t>(M)), sx(static_cast<std::size_t>(M)),
            cy(static_cast<std::size_t>(M)), sy(static_cast<std::size_t>(M));
        for (int i = 1; i <= M; ++i) {
            cx[static_cast<std::size_t>(i - 1)] = std::cos(i * wx * rx);
            sx[static_cast<std::size_t>(i - 1)] = std::sin(i * wx * rx);
            cy[static_cast<std::size_t>(i - 1)] = std::cos(i * wy * ry);
            sy[static_cast<std::size_t>(i - 1)] = std::sin(i * wy * ry);
        }
        std::vector<double> f;
        f.reserve(static_cast<std::size_t>(output_dim()));
        f.push_back(1.0);
        for (double v : cx) f.push_back(v);
        for (double v : cy) f.push_back(v);
        for (double v : sx) f.push_back(v);
        for (double v : sy) f.push_back(v);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) f.push_back(cx[static_cast<std::size_t>(i)] * cy[static_cast<std::size_t>(j)]);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) f.push_back(cx[static_cast<std::size_t>(i)] * sy[static_cast<std::size_t>(j)]);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) f.push_back(sx[static_cast<std::size_t>(i)] * cy[static_cast<std::size_t>(j)]);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) f.push_back(sx[static_cast<std::size_t>(i)] * sy[static_cast<std::size_t>(j)]);
        return f;
    }
};

enum class Arch { Plain, Modified };

struct NetworkSpec {
    int spatial_dim = 1;
    Arch arch = Arch::Modified;
    int depth = 3;   // number of hidden states H_1..H_D
    int width = 64;
    int out_dim = 1;
    int fourier_m = 10;          // 0 = raw coordinates, no embedding
    double period_x = 2.0;
    double period_y = 2.0;

    int feature_dim() const {
        if (fourier_m == 0) return spatial_dim;
        if (spatial_dim == 1) return 2 * fourier_m + 1;
        return 1 + 4 * fourier_m + 4 * fourier_m * fourier_m;
    }
};

namespace detail {

// Jet components of consecutive features/neurons rearranged so that each
// derivative order occupies one contiguous id block (what Affine needs).
struct BlockedJets {
    std::array<NodeId, kMaxDerivOrder + 1> first{};
    std::int32_t count = 0;
    int order = 0;

    TapeJet jet_at(int i) const {
        TapeJet j;
        j.order = order;
        for (int k = 0; k <= order; ++k) j.c[static_cast<std::size_t>(k)] = first[static_cast<std::size_t>(k)] + i;
        return j;
    }
};

inline BlockedJets block_jets(Tape& t, std::span<const TapeJet> js, int order) {
    BlockedJets b;
    b.count = static_cast<std::int32_t>(js.size());
    b.order = order;
    for (int k = 0; k <= order; ++k) {
        for (std::size_t i = 0; i < js.size(); ++i) {
            NodeId src = k <= js[i].order ? js[i].c[static_cast<std::size_t>(k)] : kNoNode;
            NodeId id = (src == kNoNode) ? t.fresh_zero() : t.copy(src);
            if (i == 0) b.first[static_cast<std::size_t>(k)] = id;
        }
    }
    return b;
}

// One affine layer: out[n] = sum_i W[n,i] in[i] + b[n], W row-major at wofs.
inline BlockedJets affine_layer(Tape& t, const BlockedJets& in, std::int32_t n_out,
                                std::int32_t wofs, std::int32_t bofs) {
    BlockedJets out;
    out.count = n_out;
    out.order = in.order;
    for (int k = 0; k <= in.order; ++k) {
        for (std::int32_t n = 0; n < n_out; ++n) {
            NodeId id = t.affine(wofs + n * in.count, in.first[static_cast<std::size_t>(k)], in.count,
                                 k == 0 ? bofs + n : -1);
            if (n == 0) out.first[static_cast<std::size_t>(k)] = id;
        }
    }
    return out;
}

inline BlockedJets tanh_layer(Tape& t, const BlockedJets& in) {
    std::vector<TapeJet> ys(static_cast<std::size_t>(in.count));
    for (std::int32_t n = 0; n < in.count; ++n) ys[static_cast<std::size_t>(n)] = jet::tanh(t, in.jet_at(n));
    return block_jets(t, ys, in.order);
}

} // namespace detail

/// A Fourier-embedded MLP (plain or modified) with a flat parameter layout.
/// Recording emits the whole forward pass, including spatial-derivative
/// towers, onto a Tape; forward_features is the direct evaluation used for
/// sampling and for the public feature-level contract.
class Network {
public:
    NetworkSpec spec;

    Network() = default;
    explicit Network(const NetworkSpec& s) : spec(s) { build_layout(); }

    const std::vector<LayerSpan>& layout() const { return layout_; }
    std::size_t param_count() const { return n_params_; }

    /// Ordered (W, b) layer-group names, input side first, output layer last.
    /// transfer = last_k trains exactly the last k groups.
    const std::vector<std::string>& layer_groups() const { return groups_; }

    ParameterVector init(std::uint64_t seed, std::size_t base_offset = 0,
                         const std::string& prefix = "") const {
        ParameterVector p;
        p.values.assign(n_params_, 0.0);
        SplitMix64 rng(seed);
        for (const auto& s : layout_) {
            p.layout.push_back({prefix + s.name, base_offset + s.offset, s.length});
            if (s.name[0] != 'W') continue;  // biases stay zero
            const auto [fan_in, fan_out] = fans_.at(s.name);
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (std::size_t i = 0; i < s.length; ++i)
                p.values[s.offset + i] = rng.uniform_pm(limit);
        }
        return p;
    }

    std::vector<double> embed(double x, double y = 0.0) const {
        if (spec.fourier_m == 0) {
            if (spec.spatial_dim == 1) return {x};
            return {x, y};
        }
        if (spec.spatial_dim == 1)
            return FourierEmbedding1D{spec.fourier_m, spec.period_x}.embed(x);
        return FourierEmbedding2D{spec.fourier_m, spec.period_x, spec.period_y}.embed(x, y);
    }

    /// MLP forward pass on a ready feature vector.
    std::vector<double> forward_features(std::span<const double> params,
                                         std::span<const double> features) const {
        if (static_cast<int>(features.size()) != spec.feature_dim())
            throw ShapeError("feature vector has length " + std::to_string(features.size()) +
                             ", expected " + std::to_string(spec.feature_dim()));
        if (params.size() < n_params_) throw ShapeError("parameter vector too short");
        const int W = spec.width, D = spec.depth;
        std::vector<double> u, v, h(static_cast<std::size_t>(W)), z(static_cast<std::size_t>(W));
        if (spec.arch == Arch::Modified) {
            u = dense_tanh(params, "Wu", "bu", features, W);
            v = dense_tanh(params, "Wv", "bv", features, W);
        }
        h = dense_tanh(params, "W0", "b0", features, W);
        for (int n = 1; n <= D - 1; ++n) {
            z = dense_tanh(params, "W" + std::to_string(n), "b" + std::to_string(n), h, W);
            if (spec.arch == Arch::Modified) {
                for (int i = 0; i < W; ++i)
                    h[static_cast<std::size_t>(i)] =
                        (1.0 - z[static_cast<std::size_t>(i)]) * u[static_cast<std::size_t>(i)] +
                        z[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
            } else {
                h = z;
            }
        }
        return dense(params, "W" + std::to_string(D), "b" + std::to_string(D), h, spec.out_dim);
    }

    std::vector<double> eval(std::span<const double> params, double x, double y = 0.0) const {
        const auto f = embed(x, y);
        return forward_features(params, f);
    }

    /// Records embedding + forward pass as jets along one axis. xj and yj
    /// are the coordinate jets (for 1-D problems yj is ignored); the sweep
    /// axis carries the variable jet, the other a constant one.
    std::vector<TapeJet> record(Tape& t, const TapeJet& xj, const TapeJet& yj,
                                std::size_t param_base = 0) const {
        const int order = xj.order;
        std::vector<TapeJet> feats = record_embedding(t, xj, yj);
        detail::BlockedJets X = detail::block_jets(t, feats, order);
        const auto base = static_cast<std::int32_t>(param_base);
        const int W = spec.width, D = spec.depth;

        detail::BlockedJets U{}, V{};
        if (spec.arch == Arch::Modified) {
            U = detail::tanh_layer(t, detail::affine_layer(t, X, W, ofs("Wu") + base, ofs("bu") + base));
            V = detail::tanh_layer(t, detail::affine_layer(t, X, W, ofs("Wv") + base, ofs("bv") + base));
        }
        detail::BlockedJets H = detail::tanh_layer(t, detail::affine_layer(t, X, W, ofs("W0") + base, ofs("b0") + base));
        for (int n = 1; n <= D - 1; ++n) {
            const std::string idx = std::to_string(n);
            detail::BlockedJets Z = detail::tanh_layer(
                t, detail::affine_layer(t, H, W, ofs("W" + idx) + base, ofs("b" + idx) + base));
            if (spec.arch == Arch::Modified) {
                std::vector<TapeJet> hs(static_cast<std::size_t>(W));
                for (int i = 0; i < W; ++i) {
                    TapeJet d = jet::sub(t, V.jet_at(i), U.jet_at(i));
                    TapeJet p = jet::mul(t, Z.jet_at(i), d);
                    hs[static_cast<std::size_t>(i)] = jet::add(t, U.jet_at(i), p);
                }
                H = detail::block_jets(t, hs, order);
            } else {
                H = Z;
            }
        }
        const std::string di = std::to_string(D);
        detail::BlockedJets out =
            detail::affine_layer(t, H, spec.out_dim, ofs("W" + di) + base, ofs("b" + di) + base);
        std::vector<TapeJet> res(static_cast<std::size_t>(spec.out_dim));
        for (int o = 0; o < spec.out_dim; ++o) res[static_cast<std::size_t>(o)] = out.jet_at(o);
        return res;
    }

private:
    std::vector<LayerSpan> layout_;
    std::vector<std::string> groups_;
    std::map<std::string, std::pair<int, int>> fans_;  // name -> (fan_in, fan_out)
    std::map<std::string, std::int32_t> offsets_;
    std::size_t n_params_ = 0;

    std::int32_t ofs(const std::string& name) const { return offsets_.at(name); }

    void add_span(const std::string& name, std::size_t len, int fan_in, int fan_out) {
        offsets_[name] = static_cast<std::int32_t>(n_params_);
        layout_.push_back({name, n_params_, len});
        fans_[name] = {fan_in, fan_out};
        n_params_ += len;
    }

    void build_layout() {
        const int F = spec.feature_dim(), W = spec.width, D = spec.depth, O = spec.out_dim;
        if (D < 1) throw ShapeError("network depth must be >= 1");
        auto wb = [&](const std::string& g, int nin, int nout) {
            add_span("W" + g, static_cast<std::size_t>(nin) * static_cast<std::size_t>(nout), nin, nout);
            add_span("b" + g, static_cast<std::size_t>(nout), nin, nout);
            groups_.push_back(g);
        };
        if (spec.arch == Arch::Modified) {
            wb("u", F, W);
            wb("v", F, W);
        }
        wb("0", F, W);
        for (int n = 1; n <= D - 1; ++n) wb(std::to_string(n), W, W);
        wb(std::to_string(D), W, O);
    }

    std::vector<double> dense(std::span<const double> params, const std::string& wname,
                              const std::string& bname, std::span<const double> in,
                              int n_out) const {
        const double* w = params.data() + offsets_.at(wname);
        const double* b = params.data() + offsets_.at(bname);
        std::vector<double> out(static_cast<std::size_t>(n_out));
        const std::size_t nin = in.size();
        for (int n = 0; n < n_out; ++n) {
            double acc = b[n];
            const double* row = w + static_cast<std::size_t>(n) * nin;
            for (std::size_t i = 0; i < nin; ++i) acc += row[i] * in[i];
            out[static_cast<std::size_t>(n)] = acc;
        }
        return out;
    }

    std::vector<double> dense_tanh(std::span<const double> params, const std::string& wname,
                                   const std::string& bname, std::span<const double> in,
                                   int n_out) const {
        auto out = dense(params, wname, bname, in, n_out);
        for (double& v : out) v = std::tanh(v);
        return out;
    }

    std::vector<TapeJet> record_embedding(Tape& t, const TapeJet& xj, const TapeJet& yj) const {
        std::vector<TapeJet> feats;
        if (spec.fourier_m == 0) {
            feats.push_back(xj);
            if (spec.spatial_dim == 2) feats.push_back(yj);
            return feats;
        }
        const int order = xj.order, M = spec.fourier_m;
        if (spec.spatial_dim == 1) {
            const double w = 2.0 * std::numbers::pi / spec.period_x;
            feats.push_back(TapeJet::constant(t.konst(1.0), order));
            for (int i = 1; i <= M; ++i) {
                TapeJet arg = jet::scale(t, xj, i * w);
                TapeJet s, c;
                jet::sincos(t, arg, s, c);
                feats.push_back(c);
                feats.push_back(s);
            }
            return feats;
        }
        const double wx = 2.0 * std::numbers::pi / spec.period_x;
        const double wy = 2.0 * std::numbers::pi / spec.period_y;
        std::vector<TapeJet> cx, sx, cy, sy;
        for (int i = 1; i <= M; ++i) {
            TapeJet s, c;
            jet::sincos(t, jet::scale(t, xj, i * wx), s, c);
            cx.push_back(c);
            sx.push_back(s);
            jet::sincos(t, jet::scale(t, yj, i * wy), s, c);
            cy.push_back(c);
            sy.push_back(s);
        }
        feats.push_back(TapeJet::constant(t.konst(1.0), order));
        for (auto& v : cx) feats.push_back(v);
        for (auto& v : cy) feats.push_back(v);
        for (auto& v : sx) feats.push_back(v);
        for (auto& v : sy) feats.push_back(v);
        auto products = [&](const std::vector<TapeJet>& a, const std::vector<TapeJet>& b) {
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < M; ++j)
                    feats.push_back(jet::mul(t, a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]));
        };
        products(cx, cy);
        products(cx, sy);
        products(sx, cy);
        products(sx, sy);
        return feats;
    }
};

/// q+1 networks of identical topology with disjoint parameters: stage
/// fields k_1..k_q plus the next-step solution.
struct StageBundle {
    Network net;
    int q = 1;

    std::size_t member_params() const { return net.param_count(); }
    std::size_t param_count() const { return static_cast<std::size_t>(q + 1) * net.param_count(); }
    std::size_t member_base(int member) const { return static_cast<std::size_t>(member) * net.param_count(); }
    std::string member_name(int member) const {
        return member < q ? "k" + std::to_string(member + 1) : "next";
    }

    ParameterVector init(std::uint64_t seed) const {
        ParameterVector p;
        p.values.reserve(param_count());
        for (int m = 0; m <= q; ++m) {
            ParameterVector sub = net.init(seed + 0x9e3779b9u * static_cast<std::uint64_t>(m + 1),
                                           member_base(m), member_name(m) + ".");
            p.values.insert(p.values.end(), sub.values.begin(), sub.values.end());
            for (auto& s : sub.layout) p.layout.push_back(s);
        }
        p.validate();
        return p;
    }
};

/// Evaluates the network and its spatial derivatives up to `order` along
/// one axis at a point. The returned tower components are checked finite.
inline std::vector<DerivativeTower> taylor_eval_all(const Network& net,
                                                    std::span<const double> params, double x,
                                                    double y, int axis, int order) {
    DerivativeTower::check_order(order);
    Tape t;
    NodeId xn = t.ext_in(0), yn = t.ext_in(1);
    TapeJet xj = axis == 0 ? TapeJet::variable(t, xn, order) : TapeJet::constant(xn, order);
    TapeJet yj = axis == 1 ? TapeJet::variable(t, yn, order) : TapeJet::constant(yn, order);
    auto outs = net.record(t, xj, yj);
    TapeWorkspace ws;
    t.prepare(ws);
    const double ext[2] = {x, y};
    t.forward(ws, params, std::span<const double>(ext, 2));
    std::vector<DerivativeTower> towers;
    towers.reserve(outs.size());
    for (const auto& o : outs) {
        DerivativeTower tw(order);
        for (int k = 0; k <= order; ++k) {
            NodeId id = o.c[static_cast<std::size_t>(k)];
            tw.c[static_cast<std::size_t>(k)] = id == kNoNode ? 0.0 : ws.val[static_cast<std::size_t>(id)];
        }
        if (!tw.finite())
            throw NumericalOverflow("non-finite derivative tower at x=" + std::to_string(x));
        towers.push_back(tw);
    }
    return towers;
}

inline DerivativeTower taylor_eval(const Network& net, const ParameterVector& params, double x,
                                   int order, int output = 0) {
    auto all = taylor_eval_all(net, params.values, x, 0.0, 0, order);
    return all.at(static_cast<std::size_t>(output));
}

} // namespace dpinn
