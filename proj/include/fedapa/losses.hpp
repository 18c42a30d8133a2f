#pragma once

// Hybrid local objective: cross-entropy + prototype-contrastive terms with the
// cosine warm-up coefficient. All gradients are analytic; prototypes are
// round-frozen constants (no gradient flows into them).

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "vec_math.hpp"

namespace fedapa {

struct WarmupSchedule {
    double lambda_min = 0.0;
    double lambda_max = 1.0;
    int t_warm = 50;

    void validate() const {
        if (lambda_min > lambda_max)
            throw InvalidSpec("warm-up: lambda_min > lambda_max");
        if (t_warm < 1) throw InvalidSpec("warm-up: T_warm must be >= 1");
    }
};

struct LossBreakdown {
    double ce = 0.0;
    double lg = 0.0;
    double lc = 0.0;
    double lambda_t = 0.0;
    double total = 0.0;
};

// Cosine ramp from lambda_min to lambda_max over t_warm rounds, constant
// afterwards. Evaluated via the midpoint-symmetric identity
// 1 - cos(pi*u) = 1 + sin(pi*(u - 1/2)) so the half-way value is the exact
// arithmetic mean and both endpoints are hit exactly.
inline double warmup_lambda(int t, const WarmupSchedule& sched) {
    sched.validate();
    if (t < 1) throw InvalidSpec("warmup_lambda: t must be >= 1");
    const double u = static_cast<double>(std::min(t, sched.t_warm)) / sched.t_warm;
    constexpr double pi = 3.141592653589793238462643383279502884;
    return sched.lambda_min +
           (sched.lambda_max - sched.lambda_min) * 0.5 * (1.0 + std::sin(pi * (u - 0.5)));
}

// -log softmax(logits)[label]; gradient = softmax - onehot
inline double cross_entropy(const Vec& logits, int label, Vec& d_logits) {
    const int C = static_cast<int>(logits.size());
    if (label < 0 || label >= C)
        throw LabelOutOfRange("label " + std::to_string(label) + " for C=" +
                              std::to_string(C));
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    d_logits.assign(logits.size(), 0.0);
    for (int c = 0; c < C; ++c) {
        d_logits[static_cast<std::size_t>(c)] = std::exp(logits[static_cast<std::size_t>(c)] - m);
        sum += d_logits[static_cast<std::size_t>(c)];
    }
    const double log_p = logits[static_cast<std::size_t>(label)] - m - std::log(sum);
    for (auto& v : d_logits) v /= sum;
    d_logits[static_cast<std::size_t>(label)] -= 1.0;
    return -log_p;
}

// Softmax-contrastive over cosine similarities to one prototype per class.
// loss = -log exp(cos(r,p_y)/tau) / sum_c exp(cos(r,p_c)/tau)
// d_r may be null when only the value is needed.
inline double proto_contrastive(const Vec& r, int y, const std::map<int, Vec>& protos,
                                double tau, Vec* d_r) {
    if (!(tau > 0.0)) throw NonPositiveTemperature("tau = " + std::to_string(tau));
    if (protos.find(y) == protos.end())
        throw MissingClassPrototype("class " + std::to_string(y));
    const double rn = std::max(norm2(r), 1e-12);

    std::vector<int> classes;
    std::vector<double> cosv, pn;
    classes.reserve(protos.size());
    for (const auto& [c, p] : protos) {
        if (p.size() != r.size())
            throw DimensionMismatch("prototype dim " + std::to_string(p.size()) +
                                    " vs embedding " + std::to_string(r.size()));
        const double n = std::max(norm2(p), 1e-12);
        classes.push_back(c);
        pn.push_back(n);
        cosv.push_back(dot(r, p) / (rn * n));
    }
    std::vector<double> logits(cosv.size());
    for (std::size_t k = 0; k < cosv.size(); ++k) logits[k] = cosv[k] / tau;
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    std::vector<double> sm(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        sm[k] = std::exp(logits[k] - m);
        sum += sm[k];
    }
    std::size_t y_idx = 0;
    for (std::size_t k = 0; k < classes.size(); ++k)
        if (classes[k] == y) y_idx = k;
    const double loss = -(logits[y_idx] - m - std::log(sum));
    if (!d_r) return loss;
    for (auto& v : sm) v /= sum;

    // d cos_k / d r = p_k/(rn*pn_k) - cos_k * r / rn^2 ; chain with (sm - onehot)/tau
    d_r->assign(r.size(), 0.0);
    double radial = 0.0;  // accumulates sum_k dl_k * cos_k
    std::size_t k = 0;
    for (const auto& [c, p] : protos) {
        const double dl = (sm[k] - (classes[k] == y ? 1.0 : 0.0)) / tau;
        const double coef = dl / (rn * pn[k]);
        for (std::size_t j = 0; j < r.size(); ++j) (*d_r)[j] += coef * p[j];
        radial += dl * cosv[k];
        ++k;
    }
    const double rcoef = radial / (rn * rn);
    for (std::size_t j = 0; j < r.size(); ++j) (*d_r)[j] -= rcoef * r[j];
    return loss;
}

// pull toward the client's personalized set Q_i
inline double loss_lg(const Vec& r, int y, const std::map<int, Vec>& q_i, double tau,
                      Vec* d_r) {
    return proto_contrastive(r, y, q_i, tau, d_r);
}

// mean contrast against every client's stacked set, own set included
inline double loss_lc(const Vec& r, int y, const std::vector<std::map<int, Vec>>& stacked,
                      double tau, Vec* d_r) {
    if (stacked.empty()) throw EmptyInput("loss_lc: empty prototype stack");
    if (d_r) d_r->assign(r.size(), 0.0);
    double acc = 0.0;
    Vec d_one;
    for (const auto& set : stacked) {
        acc += proto_contrastive(r, y, set, tau, d_r ? &d_one : nullptr);
        if (d_r)
            for (std::size_t j = 0; j < r.size(); ++j) (*d_r)[j] += d_one[j];
    }
    const double inv = 1.0 / static_cast<double>(stacked.size());
    if (d_r)
        for (auto& v : *d_r) v *= inv;
    return acc * inv;
}

// Mean over a batch of ce + lambda*(lg + lc). Gradients accumulate into a
// GradShadow; lambda == 0 skips the contrastive terms entirely so the
// trajectory is bitwise-identical to plain cross-entropy training.
inline LossBreakdown total_loss(const ModelParams& m,
                                const std::vector<Sample>& batch,
                                const std::map<int, Vec>* q_i,
                                const std::vector<std::map<int, Vec>>* stacked,
                                double tau, double lambda_t, GradShadow* grads) {
    if (batch.empty()) throw EmptyInput("total_loss on empty batch");
    if (grads) *grads = GradShadow::zeros_like(m);
    LossBreakdown out;
    out.lambda_t = lambda_t;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ForwardCache cache;
    Vec d_logits, d_r_g, d_r_c, d_r_extra;
    for (const auto& s : batch) {
        const Vec r = encoder_forward(m, s.features, &cache);
        const Vec logits = classifier_forward(m, r);
        const double ce = cross_entropy(logits, s.label, d_logits);
        out.ce += ce * inv_b;
        for (auto& v : d_logits) v *= inv_b;

        d_r_extra.assign(r.size(), 0.0);
        if (lambda_t != 0.0) {
            if (q_i) {
                const double lg = loss_lg(r, s.label, *q_i, tau, grads ? &d_r_g : nullptr);
                out.lg += lg * inv_b;
                if (grads) {
                    const double w = lambda_t * inv_b;
                    for (std::size_t j = 0; j < r.size(); ++j) d_r_extra[j] += w * d_r_g[j];
                }
            }
            if (stacked) {
                const double lc = loss_lc(r, s.label, *stacked, tau, grads ? &d_r_c : nullptr);
                out.lc += lc * inv_b;
                if (grads) {
                    const double w = lambda_t * inv_b;
                    for (std::size_t j = 0; j < r.size(); ++j) d_r_extra[j] += w * d_r_c[j];
                }
            }
        }
        if (grads) backprop_sample(m, cache, r, d_logits, d_r_extra, *grads);
    }
    out.total = out.ce + lambda_t * (out.lg + out.lc);
    return out;
}

}  // namespace fedapa
