#pragma once

// Classification metrics and communication-cost accounting. Costs use
// 4 bytes per transmitted parameter and decimal kilobytes (1 KB = 1000 B).

#include <cstdint>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "losses.hpp"

namespace fedapa {

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size())
        throw LengthMismatch("accuracy: " + std::to_string(preds.size()) + " vs " +
                             std::to_string(labels.size()));
    if (preds.empty()) throw EmptyInput("accuracy on empty vectors");
    std::size_t hit = 0;
    for (std::size_t k = 0; k < preds.size(); ++k)
        if (preds[k] == labels[k]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

// Unweighted mean of per-class F1. Classes absent from both the truth and the
// predictions are excluded from the mean.
inline double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels,
                       int n_classes) {
    if (preds.size() != labels.size())
        throw LengthMismatch("macro_f1: " + std::to_string(preds.size()) + " vs " +
                             std::to_string(labels.size()));
    if (preds.empty()) throw EmptyInput("macro_f1 on empty vectors");
    for (std::size_t k = 0; k < preds.size(); ++k) {
        if (labels[k] < 0 || labels[k] >= n_classes)
            throw LabelOutOfRange("label " + std::to_string(labels[k]));
        if (preds[k] < 0 || preds[k] >= n_classes)
            throw LabelOutOfRange("prediction " + std::to_string(preds[k]));
    }
    std::vector<std::int64_t> tp(static_cast<std::size_t>(n_classes), 0),
        fp(static_cast<std::size_t>(n_classes), 0), fn(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t k = 0; k < preds.size(); ++k) {
        const auto p = static_cast<std::size_t>(preds[k]);
        const auto y = static_cast<std::size_t>(labels[k]);
        if (p == y) {
            ++tp[y];
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < n_classes; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        const std::int64_t denom = 2 * tp[cc] + fp[cc] + fn[cc];
        if (denom == 0) continue;  // class appears in neither truth nor prediction
        sum += 2.0 * static_cast<double>(tp[cc]) / static_cast<double>(denom);
        ++counted;
    }
    return counted > 0 ? sum / counted : 0.0;
}

// Labels are ordinal counts, so |pred - truth| is meaningful.
inline double mae(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size())
        throw LengthMismatch("mae: " + std::to_string(preds.size()) + " vs " +
                             std::to_string(labels.size()));
    if (preds.empty()) throw EmptyInput("mae on empty vectors");
    double s = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k)
        s += std::abs(static_cast<double>(preds[k]) - static_cast<double>(labels[k]));
    return s / static_cast<double>(preds.size());
}

// ---- communication cost ----

struct CostModel {
    int bytes_per_param = 4;
    int kilobyte = 1000;  // decimal KB throughout
    int d_feat = 256;
    int n_classes = 21;
    int n_clients = 6;

    std::int64_t prototype_bytes() const {
        return static_cast<std::int64_t>(d_feat) * bytes_per_param;
    }
};

// parameter count of the convolutional reference model used for the
// model-sharing comparison (2 x params x 4 bytes per round)
constexpr std::int64_t kModelSharingReferenceParams = 463750;

struct RoundCost {
    std::vector<std::int64_t> up;    // per client: uploaded prototype bytes
    std::vector<std::int64_t> down;  // per client: personalized set + full stack
    // headline convention: all uploads plus a single class-set downlink;
    // with complete sets this is (N+1) x C x d_feat x 4
    std::int64_t total_shared_downlink = 0;
    std::int64_t total_up_down = 0;  // plain sum of per-client up + down
};

inline RoundCost fedapa_round_bytes(const CostModel& cm, const std::vector<int>& p_counts,
                                    const std::vector<int>& q_counts) {
    if (p_counts.size() != q_counts.size())
        throw LengthMismatch("fedapa_round_bytes: count vectors disagree");
    const std::int64_t pb = cm.prototype_bytes();
    RoundCost rc;
    std::int64_t all_p = 0;
    for (int c : p_counts) all_p += c;
    for (std::size_t i = 0; i < p_counts.size(); ++i) {
        rc.up.push_back(pb * p_counts[i]);
        rc.down.push_back(pb * (q_counts[i] + all_p));
        rc.total_up_down += rc.up.back() + rc.down.back();
    }
    rc.total_shared_downlink = pb * (all_p + cm.n_classes);
    return rc;
}

inline std::int64_t model_sharing_round_bytes(const CostModel& cm, std::int64_t params) {
    return 2 * params * cm.bytes_per_param;
}

inline double reduction_percent(std::int64_t ours, std::int64_t reference) {
    return 100.0 * (1.0 - static_cast<double>(ours) / static_cast<double>(reference));
}

inline double to_kb(std::int64_t bytes, const CostModel& cm) {
    return static_cast<double>(bytes) / static_cast<double>(cm.kilobyte);
}

// ---- per-round reporting ----

struct ClientRoundMetrics {
    int client_id = 0;
    double accuracy = 0.0, macro_f1 = 0.0, mae = 0.0;
    LossBreakdown loss;       // full-train loss at the round start
    double grad_sq_sum = 0.0;  // sum over local steps of ||grad||^2
    std::int64_t bytes_up = 0, bytes_down = 0;
};

struct RoundMetrics {
    int t = 0;
    double lambda_t = 0.0;
    std::vector<ClientRoundMetrics> clients;

    void validate() const {
        for (const auto& c : clients) {
            const bool ok = c.accuracy >= 0.0 && c.accuracy <= 1.0 && c.macro_f1 >= 0.0 &&
                            c.macro_f1 <= 1.0 && c.mae >= 0.0 && c.bytes_up >= 0 &&
                            c.bytes_down >= 0 && std::isfinite(c.grad_sq_sum) &&
                            c.grad_sq_sum >= 0.0;
            if (!ok)
                throw InvalidSpec("round " + std::to_string(t) + " client " +
                                  std::to_string(c.client_id) + ": metric out of range");
        }
    }
};

}  // namespace fedapa
