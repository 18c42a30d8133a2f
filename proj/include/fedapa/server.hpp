#pragma once

// Parameter-server round: similarity-softmax weighting, personalized
// aggregation, and padding of missing classes. Summations over clients run in
// a canonical value order (not client-id order) so that relabeling clients
// permutes the output bit-identically.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"
#include "prototypes.hpp"
#include "rng.hpp"
#include "vec_math.hpp"

namespace fedapa {

enum class AggregationMode { APA, UniformAverage };

struct ServerConfig {
    double tau = 0.5;
    AggregationMode mode = AggregationMode::APA;
    bool exclude_self = false;           // ablation: drop j == i from J_c(i)
    bool sample_weighted_padding = false;  // ablation: weight donors by m_j^c
};

struct ServerState {
    int t = 0;
    StackedPrototypes p_prev;
    std::vector<PersonalizedPrototypes> q_prev;
    ServerConfig cfg;
    int n_classes = 0;
    int d_feat = 0;
};

// per-class weight rows alpha_{ij}^c for the round log
struct WeightMatrixPerClass {
    // weights[c][i] = vector of (j, alpha) pairs over J_c(i)
    std::map<int, std::map<int, std::vector<std::pair<int, double>>>> rows;
};

struct ServerRoundOutput {
    StackedPrototypes p;                        // padded-complete
    std::vector<PersonalizedPrototypes> q;      // padded-complete
    WeightMatrixPerClass weights;
    std::map<int, std::set<int>> padded_classes;  // client -> classes padded
};

namespace detail {

// canonical addend ordering: by key value, ties broken lexicographically by
// the vector entries; identical addends may appear in any relative order
// without affecting the sum.
struct Addend {
    double key;
    const Vec* v;
    int j;
};

inline void canonical_sort(std::vector<Addend>& a) {
    std::sort(a.begin(), a.end(), [](const Addend& x, const Addend& y) {
        if (x.key != y.key) return x.key < y.key;
        return std::lexicographical_compare(x.v->begin(), x.v->end(), y.v->begin(),
                                            y.v->end());
    });
}

}  // namespace detail

inline std::pair<StackedPrototypes, std::vector<PersonalizedPrototypes>> init_prototypes(
    int n_clients, int n_classes, int d_feat, Rng& rng) {
    StackedPrototypes p;
    p.round_index = 0;
    std::vector<PersonalizedPrototypes> q;
    for (int i = 0; i < n_clients; ++i) {
        PrototypeSet ps;
        ps.client_id = i;
        for (int c = 0; c < n_classes; ++c) {
            ps.entries[c] = rng.unit_vector(static_cast<std::size_t>(d_feat));
            ps.padded.insert(c);  // synthetic starting values, not measured ones
        }
        PersonalizedPrototypes qp;
        qp.client_id = i;
        qp.entries = ps.entries;
        qp.padded = ps.padded;
        p.sets.push_back(std::move(ps));
        q.push_back(std::move(qp));
    }
    return {std::move(p), std::move(q)};
}

// s_{ij}^c over the eligible set J_c(i) = {j : c in C_i and c in C_j}.
// Self-similarity is exactly 1. Zero-norm entries are treated as absent.
inline std::map<int, double> pairwise_class_similarity(const StackedPrototypes& p,
                                                       int i, int c,
                                                       bool exclude_self = false) {
    const auto& own = p.sets.at(static_cast<std::size_t>(i));
    auto it = own.entries.find(c);
    if (it == own.entries.end() || own.is_padded(c))
        throw ClassAbsentAtClient("client " + std::to_string(i) + " class " +
                                  std::to_string(c));
    if (norm2(it->second) == 0.0)
        throw ClassAbsentAtClient("client " + std::to_string(i) + " class " +
                                  std::to_string(c) + " (zero-norm prototype)");
    std::map<int, double> sims;
    for (const auto& other : p.sets) {
        const int j = other.client_id;
        if (exclude_self && j == i) continue;
        auto jt = other.entries.find(c);
        if (jt == other.entries.end() || other.is_padded(c)) continue;
        if (norm2(jt->second) == 0.0) continue;  // degenerate upload: skip
        sims[j] = (j == i) ? 1.0 : cosine_similarity(it->second, jt->second);
    }
    return sims;
}

// Temperature softmax over the eligible similarities. The canonical
// evaluation order makes the result independent of client labels.
inline std::map<int, double> adaptive_weights(const std::map<int, double>& sims,
                                              double tau) {
    if (sims.empty()) throw EmptyInput("adaptive_weights on empty similarity map");
    if (!(tau > 0.0)) throw NonPositiveTemperature("tau = " + std::to_string(tau));
    // sort by similarity value (ties by client id are harmless here: equal
    // scores produce equal exp terms, so the sum is order-independent for the
    // tie group only if values are identical — which they are)
    std::vector<std::pair<double, int>> order;
    order.reserve(sims.size());
    for (const auto& [j, s] : sims) order.emplace_back(s, j);
    std::sort(order.begin(), order.end());
    double m = order.back().first;
    double sum = 0.0;
    std::vector<double> e(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        e[k] = std::exp((order[k].first - m) / tau);
        sum += e[k];
    }
    std::map<int, double> w;
    for (std::size_t k = 0; k < order.size(); ++k) w[order[k].second] = e[k] / sum;
    return w;
}

// q_i^c = sum_j alpha_{ij}^c p_j^c for locally-present classes.
inline PersonalizedPrototypes aggregate_personalized(
    const StackedPrototypes& p, int i, double tau, bool exclude_self,
    WeightMatrixPerClass* wlog = nullptr) {
    PersonalizedPrototypes out;
    out.client_id = i;
    const auto& own = p.sets.at(static_cast<std::size_t>(i));
    for (const auto& [c, proto] : own.entries) {
        if (own.is_padded(c)) continue;
        if (norm2(proto) == 0.0) continue;  // degenerate: left for padding
        const auto sims = pairwise_class_similarity(p, i, c, exclude_self);
        const auto w = adaptive_weights(sims, tau);
        std::vector<detail::Addend> addends;
        addends.reserve(w.size());
        for (const auto& [j, alpha] : w)
            addends.push_back({alpha, &p.sets.at(static_cast<std::size_t>(j)).entries.at(c), j});
        detail::canonical_sort(addends);
        Vec q(proto.size(), 0.0);
        for (const auto& a : addends)
            for (std::size_t k = 0; k < q.size(); ++k) q[k] += a.key * (*a.v)[k];
        out.entries[c] = std::move(q);
        if (wlog) {
            auto& row = wlog->rows[c][i];
            for (const auto& a : addends) row.emplace_back(a.j, a.key);
        }
    }
    return out;
}

// Padded value for a class the client lacks: mean over donors possessing it
// (optionally weighted by donor sample counts).
inline Vec padding_value(const StackedPrototypes& p, int c, bool sample_weighted,
                         const std::vector<std::map<int, std::int64_t>>* class_counts) {
    std::vector<detail::Addend> donors;
    for (const auto& s : p.sets) {
        auto it = s.entries.find(c);
        if (it == s.entries.end() || s.is_padded(c)) continue;
        if (norm2(it->second) == 0.0) continue;
        double w = 1.0;
        if (sample_weighted && class_counts) {
            auto ct = (*class_counts)[static_cast<std::size_t>(s.client_id)].find(c);
            w = (ct != (*class_counts)[static_cast<std::size_t>(s.client_id)].end())
                    ? static_cast<double>(ct->second)
                    : 0.0;
        }
        donors.push_back({w, &it->second, s.client_id});
    }
    if (donors.empty())
        throw ClassUncoveredGlobally("class " + std::to_string(c) +
                                     " has no donor client");
    double wsum = 0.0;
    for (const auto& d : donors) wsum += d.key;
    if (wsum <= 0.0) {
        for (auto& d : donors) d.key = 1.0;
        wsum = static_cast<double>(donors.size());
    }
    detail::canonical_sort(donors);
    Vec pad(donors.front().v->size(), 0.0);
    for (const auto& d : donors)
        for (std::size_t k = 0; k < pad.size(); ++k) pad[k] += d.key * (*d.v)[k];
    for (auto& v : pad) v /= wsum;
    return pad;
}

// One full server round over the uploaded sets. Returns padded-complete
// (P_t, Q_t) and advances the state.
inline ServerRoundOutput server_round(
    ServerState& state, std::vector<PrototypeSet> uploaded,
    const std::vector<std::map<int, std::int64_t>>* class_counts = nullptr) {
    const int n = static_cast<int>(state.p_prev.sets.size());
    if (static_cast<int>(uploaded.size()) != n)
        throw MissingUpload("expected " + std::to_string(n) + " uploads, got " +
                            std::to_string(uploaded.size()));
    std::sort(uploaded.begin(), uploaded.end(),
              [](const PrototypeSet& a, const PrototypeSet& b) {
                  return a.client_id < b.client_id;
              });
    for (int i = 0; i < n; ++i)
        if (uploaded[static_cast<std::size_t>(i)].client_id != i)
            throw MissingUpload("no upload from client " + std::to_string(i));

    ServerRoundOutput out;
    out.p.sets = std::move(uploaded);
    out.p.round_index = state.t + 1;

    // aggregation for locally-present classes
    out.q.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (state.cfg.mode == AggregationMode::APA) {
            out.q.push_back(aggregate_personalized(out.p, i, state.cfg.tau,
                                                   state.cfg.exclude_self, &out.weights));
        } else {
            // uniform mean over all possessors of c
            PersonalizedPrototypes qp;
            qp.client_id = i;
            const auto& own = out.p.sets[static_cast<std::size_t>(i)];
            for (const auto& [c, proto] : own.entries) {
                if (own.is_padded(c) || norm2(proto) == 0.0) continue;
                qp.entries[c] = padding_value(out.p, c, false, nullptr);
            }
            out.q.push_back(std::move(qp));
        }
    }

    // padding: every client's P-set and Q-set must cover all classes
    for (int i = 0; i < n; ++i) {
        auto& pset = out.p.sets[static_cast<std::size_t>(i)];
        auto& qset = out.q[static_cast<std::size_t>(i)];
        for (int c = 0; c < state.n_classes; ++c) {
            const bool have_p = pset.entries.count(c) && !pset.is_padded(c) &&
                                norm2(pset.entries[c]) != 0.0;
            if (!have_p) {
                const Vec pad = padding_value(out.p, c, state.cfg.sample_weighted_padding,
                                              class_counts);
                pset.entries[c] = pad;
                pset.padded.insert(c);
                qset.entries[c] = pad;
                qset.padded.insert(c);
                out.padded_classes[i].insert(c);
            }
        }
    }

    state.p_prev = out.p;
    state.q_prev = out.q;
    state.t += 1;
    return out;
}

// Empirical estimate of the aggregation map's Lipschitz constant: max ratio
// ||Q(P') - Q(P)||_F / ||P' - P||_F over random bounded perturbations.
inline double empirical_agg_lipschitz(const ServerState& state, double perturbation_scale,
                                      int trials, Rng& rng) {
    if (trials < 1) throw InvalidSpec("empirical_agg_lipschitz: trials >= 1");
    const auto& p = state.p_prev;
    const int n = static_cast<int>(p.sets.size());

    auto build_q = [&](const StackedPrototypes& stack) {
        std::vector<PersonalizedPrototypes> qs;
        for (int i = 0; i < n; ++i)
            qs.push_back(aggregate_personalized(stack, i, state.cfg.tau,
                                                state.cfg.exclude_self, nullptr));
        return qs;
    };

    const auto q0 = build_q(p);
    double best = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        StackedPrototypes pp = p;
        double dp2 = 0.0;
        for (auto& s : pp.sets) {
            for (auto& [c, v] : s.entries) {
                if (s.is_padded(c)) continue;
                for (auto& x : v) {
                    const double d = perturbation_scale * rng.normal();
                    x += d;
                    dp2 += d * d;
                }
                // keep the perturbed prototype inside the unit ball
                const double nv = norm2(v);
                if (nv > 1.0)
                    for (auto& x : v) x /= nv;
            }
        }
        // recompute the true perturbation after the re-projection
        dp2 = 0.0;
        for (std::size_t i = 0; i < pp.sets.size(); ++i) {
            for (const auto& [c, v] : pp.sets[i].entries) {
                if (pp.sets[i].is_padded(c)) continue;
                const auto& v0 = p.sets[i].entries.at(c);
                for (std::size_t k = 0; k < v.size(); ++k) {
                    const double d = v[k] - v0[k];
                    dp2 += d * d;
                }
            }
        }
        if (dp2 <= 0.0) continue;
        const auto q1 = build_q(pp);
        double dq2 = 0.0;
        for (int i = 0; i < n; ++i) {
            for (const auto& [c, v] : q1[static_cast<std::size_t>(i)].entries) {
                auto it = q0[static_cast<std::size_t>(i)].entries.find(c);
                if (it == q0[static_cast<std::size_t>(i)].entries.end()) continue;
                for (std::size_t k = 0; k < v.size(); ++k) {
                    const double d = v[k] - it->second[k];
                    dq2 += d * d;
                }
            }
        }
        best = std::max(best, std::sqrt(dq2 / dp2));
    }
    return best;
}

}  // namespace fedapa
