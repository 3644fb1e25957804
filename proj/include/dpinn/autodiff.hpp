#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dpinn/errors.hpp"
#include "dpinn/params.hpp"
#include "dpinn/tape.hpp"

namespace dpinn {

/// Reverse-mode gradient of an arbitrary recorded scalar loss.
/// `build` receives the tape and one TapeScalar leaf per parameter and
/// returns the loss node. The gradient comes back in the layout of params.
template <class BuildFn>
ParameterVector grad(BuildFn&& build, const ParameterVector& params) {
    Tape t;
    std::vector<TapeScalar> leaves(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        leaves[i] = TapeScalar{&t, t.param(static_cast<int>(i))};
    TapeScalar loss = build(t, std::span<TapeScalar>(leaves));

    TapeWorkspace ws;
    t.prepare(ws);
    t.forward(ws, params.values, {});
    if (!std::isfinite(ws.val[static_cast<std::size_t>(loss.id)]))
        throw NumericalOverflow("loss evaluated non-finite");

    ParameterVector g;
    g.values.assign(params.size(), 0.0);
    g.layout = params.layout;
    ws.adj[static_cast<std::size_t>(loss.id)] = 1.0;
    t.reverse(ws, params.values, g.values);
    return g;
}

} // namespace dpinn
