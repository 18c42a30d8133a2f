#pragma once

// One client's round: receive frozen prototype sets, run S local SGD steps on
// the hybrid objective, recompute class prototypes with the updated encoder,
// and report per-step gradient statistics for the convergence trace.

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "prototypes.hpp"
#include "rng.hpp"

namespace fedapa {

struct ClientState {
    int client_id = 0;
    ModelParams model;
    OptimizerState optimizer;
    ClientDataset dataset;
    WarmupSchedule sched;
    int batch_size = 16;
    int local_epochs = 1;
    double tau_loss = 0.5;
    bool use_personalized_term = true;  // pull toward q_i^y
    bool use_client_term = true;        // contrast against every client's set
    std::uint64_t run_seed = 0;

    void validate() const {
        if (batch_size < 1) throw InvalidSpec("batch_size must be >= 1");
        if (local_epochs < 1) throw InvalidSpec("local_epochs must be >= 1");
        sched.validate();
    }
};

struct RoundClientStats {
    int t = 0;
    int client_id = 0;
    double lambda_t = 0.0;
    int steps = 0;
    std::vector<double> grad_sq_per_step;  // ||d loss / d w||^2, no decay term
    std::vector<double> vel_sq_per_step;   // ||velocity||^2 after each update
    LossBreakdown loss_start;              // full-train loss at the round start
    double param_delta_norm = 0.0;         // ||w_{t,S} - w_{t,0}||

    double grad_sq_sum() const {
        return std::accumulate(grad_sq_per_step.begin(), grad_sq_per_step.end(), 0.0);
    }
    double grad_sq_max() const {
        double m = 0.0;
        for (double v : grad_sq_per_step) m = std::max(m, v);
        return m;
    }
    double vel_sq_max() const {
        double m = 0.0;
        for (double v : vel_sq_per_step) m = std::max(m, v);
        return m;
    }
};

namespace detail {

inline double model_param_sq(const ModelParams& m) {
    double s = 0.0;
    for (const auto& l : m.encoder) {
        for (double v : l.w) s += v * v;
        for (double v : l.b) s += v * v;
    }
    for (double v : m.classifier.w) s += v * v;
    for (double v : m.classifier.b) s += v * v;
    return s;
}

inline double model_param_delta(const ModelParams& a, const ModelParams& b) {
    double s = 0.0;
    for (std::size_t li = 0; li < a.encoder.size(); ++li) {
        for (std::size_t k = 0; k < a.encoder[li].w.size(); ++k) {
            const double d = a.encoder[li].w[k] - b.encoder[li].w[k];
            s += d * d;
        }
        for (std::size_t k = 0; k < a.encoder[li].b.size(); ++k) {
            const double d = a.encoder[li].b[k] - b.encoder[li].b[k];
            s += d * d;
        }
    }
    for (std::size_t k = 0; k < a.classifier.w.size(); ++k) {
        const double d = a.classifier.w[k] - b.classifier.w[k];
        s += d * d;
    }
    for (std::size_t k = 0; k < a.classifier.b.size(); ++k) {
        const double d = a.classifier.b[k] - b.classifier.b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace detail

// Full-train mean loss at the current weights; no gradients, no side effects.
inline LossBreakdown client_eval_loss(const ClientState& state,
                                      const PersonalizedPrototypes* q,
                                      const StackedPrototypes* p, double lambda_t) {
    const std::map<int, Vec>* qptr = nullptr;
    std::vector<std::map<int, Vec>> stacked;
    const std::vector<std::map<int, Vec>>* sptr = nullptr;
    if (state.use_personalized_term && q) qptr = &q->entries;
    if (state.use_client_term && p) {
        stacked.reserve(p->sets.size());
        for (const auto& s : p->sets) stacked.push_back(s.entries);
        sptr = &stacked;
    }
    return total_loss(state.model, state.dataset.train, qptr, sptr, state.tau_loss,
                      lambda_t, nullptr);
}

// The round's local work. Prototype arguments are copied before training, so
// the caller may mutate or free them immediately after the call returns.
inline std::pair<PrototypeSet, RoundClientStats> client_update(
    ClientState& state, const PersonalizedPrototypes* q_prev,
    const StackedPrototypes* p_prev, int t) {
    state.validate();
    if (t < 1) throw InvalidSpec("client_update: t must be >= 1");
    const double lambda_t = warmup_lambda(t, state.sched);

    // frozen copies of the served prototype sets
    std::map<int, Vec> q_local;
    const std::map<int, Vec>* qptr = nullptr;
    if (state.use_personalized_term && q_prev) {
        q_local = q_prev->entries;
        qptr = &q_local;
    }
    std::vector<std::map<int, Vec>> stacked_local;
    const std::vector<std::map<int, Vec>>* sptr = nullptr;
    if (state.use_client_term && p_prev) {
        stacked_local.reserve(p_prev->sets.size());
        for (const auto& s : p_prev->sets) stacked_local.push_back(s.entries);
        sptr = &stacked_local;
    }

    const std::size_t n = state.dataset.train.size();
    if (n == 0) throw EmptyDataset("client " + std::to_string(state.client_id));

    RoundClientStats stats;
    stats.t = t;
    stats.client_id = state.client_id;
    stats.lambda_t = lambda_t;
    stats.loss_start = total_loss(state.model, state.dataset.train, qptr, sptr,
                                  state.tau_loss, lambda_t, nullptr);

    const ModelParams w0 = state.model;

    Rng shuffle_rng(Rng::derive_seed(
        Rng::derive_seed(state.run_seed, 0xC11E47u, static_cast<std::uint64_t>(state.client_id)),
        0x20CA15u, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    GradShadow grads;
    std::vector<Sample> batch;
    for (int epoch = 0; epoch < state.local_epochs; ++epoch) {
        shuffle_rng.shuffle(idx);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(state.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(state.batch_size));
            batch.clear();
            for (std::size_t k = start; k < stop; ++k)
                batch.push_back(state.dataset.train[idx[k]]);
            total_loss(state.model, batch, qptr, sptr, state.tau_loss, lambda_t, &grads);
            const double gsq = grads.squared_norm();
            if (!std::isfinite(gsq))
                throw NonFiniteEvaluation("gradient norm at t=" + std::to_string(t) +
                                          " client " + std::to_string(state.client_id));
            stats.grad_sq_per_step.push_back(gsq);
            sgd_step(state.model, grads, state.optimizer);
            const double vsq = state.optimizer.velocity.squared_norm();
            if (!std::isfinite(vsq))
                throw NonFiniteEvaluation("velocity norm at t=" + std::to_string(t) +
                                          " client " + std::to_string(state.client_id));
            stats.vel_sq_per_step.push_back(vsq);
            ++stats.steps;
        }
    }
    stats.param_delta_norm = detail::model_param_delta(state.model, w0);

    PrototypeSet uploaded = compute_local_prototypes(state.model, state.dataset);
    return {std::move(uploaded), std::move(stats)};
}

struct EvalResult {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double mae = 0.0;
};

// Metrics over the local test split. Argmax ties resolve to the lowest
// class index so evaluation is deterministic.
inline EvalResult evaluate(const ClientState& state) {
    if (state.dataset.test.empty())
        throw EmptyTestSet("client " + std::to_string(state.client_id));
    std::vector<int> preds, labels;
    preds.reserve(state.dataset.test.size());
    labels.reserve(state.dataset.test.size());
    for (const auto& s : state.dataset.test) {
        const Vec r = encoder_forward(state.model, s.features);
        const Vec logits = classifier_forward(state.model, r);
        const auto best = std::max_element(logits.begin(), logits.end());
        preds.push_back(static_cast<int>(best - logits.begin()));
        labels.push_back(s.label);
    }
    EvalResult e;
    e.accuracy = accuracy(preds, labels);
    e.macro_f1 = macro_f1(preds, labels, state.model.n_classes);
    e.mae = mae(preds, labels);
    return e;
}

}  // namespace fedapa
