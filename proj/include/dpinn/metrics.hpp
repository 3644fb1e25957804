#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "dpinn/errors.hpp"

namespace dpinn {

/// Per-run error summary: the space-time relative L2 error plus the
/// per-timestamp profiles used for the diagnostic figures.
struct ErrorReport {
    double relative_l2 = 0.0;
    std::vector<double> per_timestamp_l2;   // one entry per timestamp t_1..t_Nt
    std::vector<double> residual_profile;   // final residual loss per timestamp
    std::vector<double> epochs_profile;     // training epochs per timestamp
};

/// sqrt( sum (pred-ref)^2 / sum ref^2 ) over everything passed in.
inline double relative_l2(std::span<const double> pred, std::span<const double> ref) {
    if (pred.size() != ref.size())
        throw ShapeError("relative_l2: prediction and reference sizes differ");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = pred[i] - ref[i];
        num += d * d;
        den += ref[i] * ref[i];
    }
    if (den == 0.0) throw DegenerateReference("reference field is identically zero");
    return std::sqrt(num / den);
}

/// Same ratio restricted to one timestamp slice of equal-length fields.
inline std::vector<double> per_timestamp_l2(std::span<const double> pred,
                                            std::span<const double> ref, std::size_t n_steps,
                                            std::size_t grid_size) {
    if (pred.size() != ref.size() || pred.size() != n_steps * grid_size)
        throw ShapeError("per_timestamp_l2: size mismatch");
    std::vector<double> out(n_steps);
    for (std::size_t n = 0; n < n_steps; ++n) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < grid_size; ++i) {
            const double d = pred[n * grid_size + i] - ref[n * grid_size + i];
            num += d * d;
            den += ref[n * grid_size + i] * ref[n * grid_size + i];
        }
        out[n] = den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
    }
    return out;
}

/// Least-squares slope of log e against log h.
inline double convergence_order(std::span<const std::pair<double, double>> points) {
    if (points.size() < 3)
        throw DomainError("convergence_order needs at least 3 (h, e) points");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].second <= 0.0)
            throw DomainError("convergence_order needs strictly positive errors");
        if (i > 0 && points[i].first >= points[i - 1].first)
            throw DomainError("convergence_order needs strictly decreasing h");
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(points.size());
    for (const auto& [h, e] : points) {
        const double x = std::log(h), y = std::log(e);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double convergence_order(const std::vector<std::pair<double, double>>& points) {
    return convergence_order(std::span<const std::pair<double, double>>(points));
}

} // namespace dpinn
