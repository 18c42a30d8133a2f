#pragma once

// Per-class prototype extraction (mean embedding over the local train split)
// and the containers exchanged between clients and server.

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "vec_math.hpp"

namespace fedapa {

struct PrototypeSet {
    int client_id = 0;
    std::map<int, Vec> entries;  // class -> prototype
    std::set<int> padded;        // classes filled in by the server

    bool is_padded(int c) const { return padded.count(c) != 0; }
};

struct StackedPrototypes {
    std::vector<PrototypeSet> sets;  // index-aligned with client ids
    int round_index = 0;
};

struct PersonalizedPrototypes {
    int client_id = 0;
    std::map<int, Vec> entries;  // class -> q_i^c
    std::set<int> padded;

    bool is_padded(int c) const { return padded.count(c) != 0; }
};

// p_i^c = mean embedding of the class-c train samples under the current
// (post-local-training) encoder.
inline PrototypeSet compute_local_prototypes(const ModelParams& m,
                                             const ClientDataset& ds) {
    if (ds.train.empty()) throw EmptyDataset("client " + std::to_string(ds.client_id));
    PrototypeSet out;
    out.client_id = ds.client_id;
    std::map<int, std::int64_t> counts;
    for (const auto& s : ds.train) {
        const Vec r = encoder_forward(m, s.features);
        auto [it, inserted] = out.entries.try_emplace(s.label, Vec(r.size(), 0.0));
        for (std::size_t k = 0; k < r.size(); ++k) it->second[k] += r[k];
        ++counts[s.label];
    }
    for (auto& [c, p] : out.entries) {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (auto& v : p) v *= inv;
    }
    return out;
}

// ||P_{i,t} - P_{i,t-1}||_F over classes that are locally computed
// (non-padded) in both rounds.
inline double prototype_set_delta_frobenius(const PrototypeSet& a, const PrototypeSet& b) {
    double acc = 0.0;
    for (const auto& [c, p] : a.entries) {
        if (a.is_padded(c)) continue;
        auto it = b.entries.find(c);
        if (it == b.entries.end() || b.is_padded(c)) continue;
        if (p.size() != it->second.size())
            throw ShapeMismatch("prototype dim changed between rounds");
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double d = p[k] - it->second[k];
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

// sqrt(sum_i sum_c ||p_{i,t}^c - p_{i,t-1}^c||^2) over classes that are
// locally computed (non-padded) in both rounds.
inline double prototype_delta_frobenius(const StackedPrototypes& cur,
                                        const StackedPrototypes& prev) {
    if (cur.sets.size() != prev.sets.size())
        throw ShapeMismatch("prototype_delta_frobenius: client count differs");
    double acc = 0.0;
    for (std::size_t i = 0; i < cur.sets.size(); ++i) {
        const double d = prototype_set_delta_frobenius(cur.sets[i], prev.sets[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Frobenius distance over the shared keys of two class->vector maps, padded
// entries included — the swap magnitude as the loss sees it.
inline double entries_delta_frobenius(const std::map<int, Vec>& a,
                                      const std::map<int, Vec>& b) {
    double acc = 0.0;
    for (const auto& [c, p] : a) {
        auto it = b.find(c);
        if (it == b.end()) continue;
        if (p.size() != it->second.size())
            throw ShapeMismatch("prototype dim changed between rounds");
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double d = p[k] - it->second[k];
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

}  // namespace fedapa
