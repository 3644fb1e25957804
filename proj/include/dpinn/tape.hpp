#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dpinn/errors.hpp"
#include "dpinn/tower.hpp"

namespace dpinn {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : std::uint8_t {
    Const,   // consts[a]
    ExtIn,   // per-point external input, slot a
    Param,   // parameter leaf, flat index a
    Copy,    // v[a]
    Add,     // v[a] + v[b]
    Sub,     // v[a] - v[b]
    Mul,     // v[a] * v[b]
    Axpb,    // consts[b] * v[a] + consts[c]
    FmaSS,   // consts[c2] * v[a] * v[b] + (c >= 0 ? v[c] : 0)
    Square,  // v[a]^2
    Tanh,
    Sin,
    Cos,
    Exp,
    Affine,  // affine_recs[a]: params[w..w+n) dot v[first..first+n) + optional bias param
};

struct Node {
    Op op;
    NodeId a = kNoNode;
    NodeId b = kNoNode;
    std::int32_t c = -1;
    std::int32_t c2 = -1;
};

struct AffineRec {
    std::int32_t weight_ofs;  // offset into the flat parameter array
    NodeId in_first;          // inputs are the contiguous nodes [in_first, in_first + count)
    std::int32_t count;
    std::int32_t bias;        // parameter index of the bias, or -1
};

/// Reusable per-thread buffers for tape replay. The adjoint array must be
/// all-zero before the first reverse() call; reverse() leaves it all-zero.
struct TapeWorkspace {
    std::vector<double> val;
    std::vector<double> adj;
};

/// A recorded scalar computation over (parameters, per-point inputs).
/// The graph is recorded once per training phase and replayed for every
/// collocation point; reverse() accumulates d(seeded outputs)/d(params).
class Tape {
public:
    std::vector<Node> nodes;
    std::vector<double> consts;
    std::vector<AffineRec> affine_recs;
    int n_ext = 0;
    int n_params = 0;

    std::size_t size() const { return nodes.size(); }

    NodeId konst(double v) {
        if (v == 0.0 && zero_ != kNoNode) return zero_;
        if (v == 1.0 && one_ != kNoNode) return one_;
        NodeId id = push(Op::Const, kNoNode, kNoNode, add_const(v));
        if (v == 0.0) zero_ = id;
        if (v == 1.0) one_ = id;
        return id;
    }

    // Fresh (non-deduplicated) zero, for building contiguous id blocks.
    NodeId fresh_zero() { return push(Op::Const, kNoNode, kNoNode, add_const(0.0)); }

    NodeId ext_in(int slot) {
        if (slot >= n_ext) n_ext = slot + 1;
        return push(Op::ExtIn, kNoNode, kNoNode, slot);
    }

    NodeId param(int index) {
        if (index >= n_params) n_params = index + 1;
        return push(Op::Param, kNoNode, kNoNode, index);
    }

    NodeId copy(NodeId a) { return push(Op::Copy, a); }
    NodeId add(NodeId a, NodeId b) { return push(Op::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return push(Op::Mul, a, b); }
    NodeId square(NodeId a) { return push(Op::Square, a); }
    NodeId tanh_(NodeId a) { return push(Op::Tanh, a); }
    NodeId sin_(NodeId a) { return push(Op::Sin, a); }
    NodeId cos_(NodeId a) { return push(Op::Cos, a); }
    NodeId exp_(NodeId a) { return push(Op::Exp, a); }

    NodeId axpb(NodeId x, double a, double b) {
        return push(Op::Axpb, x, kNoNode, add_const(a), add_const(b));
    }
    NodeId scale(NodeId x, double s) { return axpb(x, s, 0.0); }
    NodeId neg(NodeId x) { return axpb(x, -1.0, 0.0); }

    // s * v[a] * v[b] + v[acc]; acc may be kNoNode.
    NodeId fma_ss(NodeId a, NodeId b, NodeId acc, double s) {
        return push(Op::FmaSS, a, b, acc, add_const(s));
    }

    NodeId affine(std::int32_t weight_ofs, NodeId in_first, std::int32_t count, std::int32_t bias) {
        const std::int32_t hi = weight_ofs + count;
        if (hi > n_params) n_params = hi;
        if (bias >= n_params) n_params = bias + 1;
        affine_recs.push_back({weight_ofs, in_first, count, bias});
        return push(Op::Affine, kNoNode, kNoNode, static_cast<std::int32_t>(affine_recs.size() - 1));
    }

    void prepare(TapeWorkspace& ws) const {
        ws.val.assign(nodes.size(), 0.0);
        ws.adj.assign(nodes.size(), 0.0);
    }

    void forward(TapeWorkspace& ws, std::span<const double> params,
                 std::span<const double> ext) const {
        double* __restrict v = ws.val.data();
        const double* __restrict p = params.data();
        const double* __restrict cs = consts.data();
        const std::size_t n = nodes.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Node& nd = nodes[i];
            switch (nd.op) {
                case Op::Const: v[i] = cs[nd.c]; break;
                case Op::ExtIn: v[i] = ext[static_cast<std::size_t>(nd.c)]; break;
                case Op::Param: v[i] = p[nd.c]; break;
                case Op::Copy: v[i] = v[nd.a]; break;
                case Op::Add: v[i] = v[nd.a] + v[nd.b]; break;
                case Op::Sub: v[i] = v[nd.a] - v[nd.b]; break;
                case Op::Mul: v[i] = v[nd.a] * v[nd.b]; break;
                case Op::Axpb: v[i] = cs[nd.c] * v[nd.a] + cs[nd.c2]; break;
                case Op::FmaSS: {
                    double acc = nd.c >= 0 ? v[nd.c] : 0.0;
                    v[i] = cs[nd.c2] * v[nd.a] * v[nd.b] + acc;
                    break;
                }
                case Op::Square: v[i] = v[nd.a] * v[nd.a]; break;
                case Op::Tanh: v[i] = std::tanh(v[nd.a]); break;
                case Op::Sin: v[i] = std::sin(v[nd.a]); break;
                case Op::Cos: v[i] = std::cos(v[nd.a]); break;
                case Op::Exp: v[i] = std::exp(v[nd.a]); break;
                case Op::Affine: {
                    const AffineRec& r = affine_recs[nd.c];
                    const double* __restrict w = p + r.weight_ofs;
                    const double* __restrict x = v + r.in_first;
                    double acc = r.bias >= 0 ? p[r.bias] : 0.0;
                    for (std::int32_t j = 0; j < r.count; ++j) acc += w[j] * x[j];
                    v[i] = acc;
                    break;
                }
            }
        }
    }

    /// Back-propagates whatever seeds the caller placed in ws.adj.
    /// Parameter gradients are ADDED into grad. Consumed adjoint entries
    /// are zeroed, so ws.adj is all-zero again on return.
    void reverse(TapeWorkspace& ws, std::span<const double> params,
                 std::span<double> grad) const {
        double* __restrict v = ws.val.data();
        double* __restrict aj = ws.adj.data();
        const double* __restrict p = params.data();
        const double* __restrict cs = consts.data();
        double* __restrict g = grad.data();
        for (std::size_t i = nodes.size(); i-- > 0;) {
            const double a_i = aj[i];
            if (a_i == 0.0) continue;
            aj[i] = 0.0;
            const Node& nd = nodes[i];
            switch (nd.op) {
                case Op::Const:
                case Op::ExtIn:
                    break;
                case Op::Param: g[nd.c] += a_i; break;
                case Op::Copy: aj[nd.a] += a_i; break;
                case Op::Add:
                    aj[nd.a] += a_i;
                    aj[nd.b] += a_i;
                    break;
                case Op::Sub:
                    aj[nd.a] += a_i;
                    aj[nd.b] -= a_i;
                    break;
                case Op::Mul:
                    aj[nd.a] += a_i * v[nd.b];
                    aj[nd.b] += a_i * v[nd.a];
                    break;
                case Op::Axpb: aj[nd.a] += a_i * cs[nd.c]; break;
                case Op::FmaSS: {
                    const double s = cs[nd.c2];
                    aj[nd.a] += a_i * s * v[nd.b];
                    aj[nd.b] += a_i * s * v[nd.a];
                    if (nd.c >= 0) aj[nd.c] += a_i;
                    break;
                }
                case Op::Square: aj[nd.a] += a_i * 2.0 * v[nd.a]; break;
                case Op::Tanh: aj[nd.a] += a_i * (1.0 - v[i] * v[i]); break;
                case Op::Sin: aj[nd.a] += a_i * std::cos(v[nd.a]); break;
                case Op::Cos: aj[nd.a] -= a_i * std::sin(v[nd.a]); break;
                case Op::Exp: aj[nd.a] += a_i * v[i]; break;
                case Op::Affine: {
                    const AffineRec& r = affine_recs[nd.c];
                    const double* __restrict w = p + r.weight_ofs;
                    double* __restrict gw = g + r.weight_ofs;
                    const double* __restrict x = v + r.in_first;
                    double* __restrict ax = aj + r.in_first;
                    for (std::int32_t j = 0; j < r.count; ++j) {
                        ax[j] += a_i * w[j];
                        gw[j] += a_i * x[j];
                    }
                    if (r.bias >= 0) g[r.bias] += a_i;
                    break;
                }
            }
        }
    }

private:
    NodeId zero_ = kNoNode;
    NodeId one_ = kNoNode;

    NodeId push(Op op, NodeId a = kNoNode, NodeId b = kNoNode, std::int32_t c = -1,
                std::int32_t c2 = -1) {
        nodes.push_back({op, a, b, c, c2});
        return static_cast<NodeId>(nodes.size() - 1);
    }

    std::int32_t add_const(double v) {
        consts.push_back(v);
        return static_cast<std::int32_t>(consts.size() - 1);
    }
};

/// Handle for recording scalar expressions with ordinary operator syntax
/// (used to write PDE operators once, generically over the scalar type).
struct TapeScalar {
    Tape* tape = nullptr;
    NodeId id = kNoNode;
};

inline TapeScalar operator+(TapeScalar a, TapeScalar b) { return {a.tape, a.tape->add(a.id, b.id)}; }
inline TapeScalar operator-(TapeScalar a, TapeScalar b) { return {a.tape, a.tape->sub(a.id, b.id)}; }
inline TapeScalar operator*(TapeScalar a, TapeScalar b) { return {a.tape, a.tape->mul(a.id, b.id)}; }
inline TapeScalar operator*(double s, TapeScalar a) { return {a.tape, a.tape->scale(a.id, s)}; }
inline TapeScalar operator*(TapeScalar a, double s) { return s * a; }
inline TapeScalar operator+(TapeScalar a, double b) { return {a.tape, a.tape->axpb(a.id, 1.0, b)}; }
inline TapeScalar operator+(double b, TapeScalar a) { return a + b; }
inline TapeScalar operator-(TapeScalar a, double b) { return a + (-b); }
inline TapeScalar operator-(double b, TapeScalar a) { return {a.tape, a.tape->axpb(a.id, -1.0, b)}; }
inline TapeScalar operator-(TapeScalar a) { return {a.tape, a.tape->neg(a.id)}; }

/// Taylor jet on the tape: component k is the scalar node holding
/// d^k(value)/dx^k at the point. kNoNode marks a structural zero.
struct TapeJet {
    std::array<NodeId, kMaxDerivOrder + 1> c{kNoNode, kNoNode, kNoNode, kNoNode, kNoNode};
    int order = 0;

    static TapeJet constant(NodeId v, int order) {
        TapeJet j;
        j.order = order;
        j.c[0] = v;
        return j;
    }

    static TapeJet variable(Tape& t, NodeId x, int order) {
        TapeJet j;
        j.order = order;
        j.c[0] = x;
        if (order >= 1) j.c[1] = t.konst(1.0);
        return j;
    }
};

namespace jet {

inline TapeJet add(Tape& t, const TapeJet& a, const TapeJet& b) {
    TapeJet r;
    r.order = a.order < b.order ? a.order : b.order;
    for (int k = 0; k <= r.order; ++k) {
        NodeId x = a.c[static_cast<std::size_t>(k)], y = b.c[static_cast<std::size_t>(k)];
        r.c[static_cast<std::size_t>(k)] = (x == kNoNode) ? y : (y == kNoNode ? x : t.add(x, y));
    }
    return r;
}

inline TapeJet sub(Tape& t, const TapeJet& a, const TapeJet& b) {
    TapeJet r;
    r.order = a.order < b.order ? a.order : b.order;
    for (int k = 0; k <= r.order; ++k) {
        NodeId x = a.c[static_cast<std::size_t>(k)], y = b.c[static_cast<std::size_t>(k)];
        r.c[static_cast<std::size_t>(k)] =
            (y == kNoNode) ? x : (x == kNoNode ? t.neg(y) : t.sub(x, y));
    }
    return r;
}

inline TapeJet scale(Tape& t, const TapeJet& a, double s) {
    TapeJet r;
    r.order = a.order;
    for (int k = 0; k <= r.order; ++k)
        if (a.c[static_cast<std::size_t>(k)] != kNoNode)
            r.c[static_cast<std::size_t>(k)] = t.scale(a.c[static_cast<std::size_t>(k)], s);
    return r;
}

/// Leibniz product of two jets.
inline TapeJet mul(Tape& t, const TapeJet& a, const TapeJet& b) {
    TapeJet r;
    r.order = a.order < b.order ? a.order : b.order;
    for (int k = 0; k <= r.order; ++k) {
        NodeId acc = kNoNode;
        for (int j = 0; j <= k; ++j) {
            NodeId x = a.c[static_cast<std::size_t>(j)], y = b.c[static_cast<std::size_t>(k - j)];
            if (x == kNoNode || y == kNoNode) continue;
            acc = t.fma_ss(x, y, acc,
                           detail::kBinom[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]);
        }
        r.c[static_cast<std::size_t>(k)] = acc;
    }
    return r;
}

namespace impl {

// Shared recurrence: y_m = sum_{j<=m-1} binom(m-1,j) * g_j * a_{m-j},
// where g is the jet of phi'(a), built alongside y by `next_g`.
template <class G0, class NextG>
TapeJet compose(Tape& t, const TapeJet& a, NodeId y0, G0 g0, NextG next_g) {
    TapeJet y;
    y.order = a.order;
    y.c[0] = y0;
    TapeJet g;
    g.order = a.order;
    for (int m = 0; m <= a.order; ++m) {
        if (m >= 1) {
            NodeId acc = kNoNode;
            for (int j = 0; j <= m - 1; ++j) {
                NodeId gj = g.c[static_cast<std::size_t>(j)];
                NodeId ad = a.c[static_cast<std::size_t>(m - j)];
                if (gj == kNoNode || ad == kNoNode) continue;
                acc = t.fma_ss(gj, ad, acc,
                               detail::kBinom[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)]);
            }
            y.c[static_cast<std::size_t>(m)] = acc;
        }
        if (m < a.order) g.c[static_cast<std::size_t>(m)] = (m == 0) ? g0() : next_g(y, g, m);
    }
    return y;
}

} // namespace impl

inline TapeJet tanh(Tape& t, const TapeJet& a) {
    NodeId y0 = t.tanh_(a.c[0]);
    // g = 1 - y^2; g_m = -(y^2)_m for m >= 1.
    return impl::compose(
        t, a, y0, [&] { return t.axpb(t.square(y0), -1.0, 1.0); },
        [&](const TapeJet& y, const TapeJet&, int m) -> NodeId {
            NodeId acc = kNoNode;
            for (int j = 0; j <= m; ++j) {
                NodeId yj = y.c[static_cast<std::size_t>(j)], yk = y.c[static_cast<std::size_t>(m - j)];
                if (yj == kNoNode || yk == kNoNode) continue;
                acc = t.fma_ss(yj, yk, acc,
                               -detail::kBinom[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
            }
            return acc == kNoNode ? t.konst(0.0) : acc;
        });
}

inline void sincos(Tape& t, const TapeJet& a, TapeJet& s, TapeJet& c) {
    s.order = c.order = a.order;
    s.c[0] = t.sin_(a.c[0]);
    c.c[0] = t.cos_(a.c[0]);
    for (int m = 1; m <= a.order; ++m) {
        NodeId accs = kNoNode, accc = kNoNode;
        for (int j = 0; j <= m - 1; ++j) {
            NodeId ad = a.c[static_cast<std::size_t>(m - j)];
            if (ad == kNoNode) continue;
            const double B = detail::kBinom[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
            NodeId cj = c.c[static_cast<std::size_t>(j)];
            NodeId sj = s.c[static_cast<std::size_t>(j)];
            if (cj != kNoNode) accs = t.fma_ss(cj, ad, accs, B);
            if (sj != kNoNode) accc = t.fma_ss(sj, ad, accc, -B);
        }
        s.c[static_cast<std::size_t>(m)] = accs;
        c.c[static_cast<std::size_t>(m)] = accc;
    }
}

inline TapeJet sin(Tape& t, const TapeJet& a) {
    TapeJet s, c;
    sincos(t, a, s, c);
    return s;
}

inline TapeJet cos(Tape& t, const TapeJet& a) {
    TapeJet s, c;
    sincos(t, a, s, c);
    return c;
}

} // namespace jet
} // namespace dpinn
