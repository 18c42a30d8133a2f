#pragma once

// Dense-vector primitives: cosine similarity, temperature softmax, and a
// central finite-difference gradient oracle used by the test suite.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "errors.hpp"

namespace fedapa {

using Vec = std::vector<double>;

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw DimensionMismatch("dot: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine_similarity(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw DimensionMismatch("cosine_similarity: " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na == 0.0 || nb == 0.0)
        throw ZeroVector("cosine_similarity of a zero-norm vector");
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

// exp((s_k - max)/tau) / sum, max-subtracted for stability; exact sum-to-1
// enforced by a single renormalization.
inline std::vector<double> softmax_temperature(const std::vector<double>& scores,
                                               double tau) {
    if (scores.empty()) throw EmptyInput("softmax_temperature on empty scores");
    if (!(tau > 0.0)) throw NonPositiveTemperature("tau = " + std::to_string(tau));
    const double m = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp((scores[i] - m) / tau);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

// central differences (f(x+eps e_k) - f(x-eps e_k)) / (2 eps)
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec x,
                            double eps) {
    Vec g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double orig = x[k];
        x[k] = orig + eps;
        const double fp = f(x);
        x[k] = orig - eps;
        const double fm = f(x);
        x[k] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NonFiniteEvaluation("finite_diff_grad at coordinate " +
                                      std::to_string(k));
        g[k] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace fedapa
