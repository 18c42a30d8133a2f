#pragma once

// Synthetic non-IID dataset generation (Dirichlet label skew + per-client
// affine feature skew) and CSV ingestion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "vec_math.hpp"

namespace fedapa {

struct Sample {
    Vec features;
    int label = 0;
};

struct ClientDataset {
    int client_id = 0;
    std::vector<Sample> train;
    std::vector<Sample> test;
    std::map<int, std::int64_t> class_counts;  // over train
    std::set<int> present_classes;             // {c : class_counts[c] >= 1}

    void recompute_counts() {
        class_counts.clear();
        present_classes.clear();
        for (const auto& s : train) {
            ++class_counts[s.label];
            present_classes.insert(s.label);
        }
    }
};

struct SynthSpec {
    int num_clients = 6;
    int num_classes = 21;
    int input_dim = 32;
    double dirichlet_beta = 0.3;
    double feature_skew_strength = 0.3;
    int samples_per_client = 420;
    double class_separation = 1.0;
    double noise_sigma = 0.3;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;

    bool operator==(const SynthSpec&) const = default;

    void validate() const {
        if (num_clients < 2) throw InvalidSpec("num_clients must be >= 2");
        if (num_classes < 2) throw InvalidSpec("num_classes must be >= 2");
        if (input_dim < 1) throw InvalidSpec("input_dim must be >= 1");
        if (!(dirichlet_beta > 0.0)) throw InvalidSpec("dirichlet_beta must be > 0");
        if (feature_skew_strength < 0.0)
            throw InvalidSpec("feature_skew_strength must be >= 0");
        if (samples_per_client < 1)
            throw InvalidSpec("samples_per_client must be >= 1");
        if (!(class_separation > 0.0))
            throw InvalidSpec("class_separation must be > 0");
        if (!(noise_sigma > 0.0)) throw InvalidSpec("noise_sigma must be > 0");
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw InvalidSpec("train_fraction must lie in (0,1)");
    }
};

namespace detail {

// Integer allocation whose parts sum exactly to `total`, proportional to
// `ideal` (largest-remainder / Hamilton rounding). Stable tie-break by index.
inline std::vector<std::int64_t> largest_remainder(const std::vector<double>& ideal,
                                                   std::int64_t total) {
    const std::size_t n = ideal.size();
    std::vector<std::int64_t> parts(n);
    std::vector<double> frac(n);
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = std::max(0.0, ideal[i]);
        parts[i] = static_cast<std::int64_t>(std::floor(v));
        frac[i] = v - std::floor(v);
        assigned += parts[i];
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (assigned < total) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
        std::int64_t rem = total - assigned;
        for (std::size_t k = 0; rem > 0; k = (k + 1) % n) {
            ++parts[order[k]];
            --rem;
        }
    } else if (assigned > total) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return frac[a] < frac[b]; });
        std::int64_t rem = assigned - total;
        for (std::size_t k = 0; rem > 0; k = (k + 1) % n) {
            if (parts[order[k]] > 0) {
                --parts[order[k]];
                --rem;
            }
        }
    }
    return parts;
}

// 30-step power iteration estimate of the spectral norm of a d x d matrix
// (row-major). Start vector of ones; deterministic.
inline double spectral_norm(const std::vector<double>& m, int d) {
    std::vector<double> v(d, 1.0), mv(d), mtmv(d);
    double inv = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& x : v) x *= inv;
    double lambda = 0.0;
    for (int it = 0; it < 30; ++it) {
        for (int r = 0; r < d; ++r) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += m[r * d + c] * v[c];
            mv[r] = s;
        }
        for (int c = 0; c < d; ++c) {
            double s = 0.0;
            for (int r = 0; r < d; ++r) s += m[r * d + c] * mv[r];
            mtmv[c] = s;
        }
        double n = 0.0;
        for (double x : mtmv) n += x * x;
        n = std::sqrt(n);
        if (n == 0.0) return 0.0;
        lambda = n;  // approximates sigma_max^2 after normalization
        for (int c = 0; c < d; ++c) v[c] = mtmv[c] / n;
    }
    return std::sqrt(lambda);
}

// Per-client stratified train/test split. Guarantees: >= 1 train sample per
// present class; >= 1 test sample for classes with >= 5 samples; total train
// count equals round(n * train_fraction) whenever the bounds allow.
inline void stratified_split(std::vector<Sample>& pool, double train_fraction,
                             Rng& rng, std::vector<Sample>& train,
                             std::vector<Sample>& test) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < pool.size(); ++i)
        by_class[pool[i].label].push_back(i);

    const auto n_total = static_cast<std::int64_t>(pool.size());
    std::int64_t target =
        static_cast<std::int64_t>(std::llround(n_total * train_fraction));

    std::vector<int> classes;
    for (const auto& [c, idx] : by_class) classes.push_back(c);

    std::map<int, std::int64_t> lo, hi, take;
    std::map<int, double> ideal;
    std::int64_t lo_sum = 0, hi_sum = 0;
    for (int c : classes) {
        const auto n = static_cast<std::int64_t>(by_class[c].size());
        lo[c] = 1;
        hi[c] = (n >= 5) ? n - 1 : n;
        ideal[c] = n * train_fraction;
        lo_sum += lo[c];
        hi_sum += hi[c];
    }
    target = std::clamp(target, lo_sum, hi_sum);
    std::int64_t assigned = 0;
    for (int c : classes) {
        take[c] = std::clamp(static_cast<std::int64_t>(std::floor(ideal[c])), lo[c], hi[c]);
        assigned += take[c];
    }
    // distribute the remainder by descending fractional part, round-robin
    std::vector<int> order = classes;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return (ideal[a] - std::floor(ideal[a])) > (ideal[b] - std::floor(ideal[b]));
    });
    std::size_t guard = 0;
    const std::size_t guard_max = 10 * order.size() + 10;
    while (assigned != target && guard < guard_max) {
        for (int c : order) {
            if (assigned < target && take[c] < hi[c]) {
                ++take[c];
                ++assigned;
            } else if (assigned > target && take[c] > lo[c]) {
                --take[c];
                --assigned;
            }
            if (assigned == target) break;
        }
        ++guard;
    }
    for (int c : classes) {
        auto& idx = by_class[c];
        rng.shuffle(idx);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (static_cast<std::int64_t>(k) < take[c])
                train.push_back(pool[idx[k]]);
            else
                test.push_back(pool[idx[k]]);
        }
    }
}

}  // namespace detail

// Allocate each class's total across N clients with one Dirichlet(beta) draw
// per class. Conserves totals exactly.
inline std::vector<std::map<int, std::int64_t>> dirichlet_partition(
    const std::map<int, std::int64_t>& class_totals, double beta, int n_clients,
    Rng& rng) {
    if (!(beta > 0.0)) throw NonPositiveBeta("beta = " + std::to_string(beta));
    if (n_clients < 1) throw InvalidSpec("dirichlet_partition needs N >= 1");
    std::vector<std::map<int, std::int64_t>> quotas(n_clients);
    for (const auto& [c, total] : class_totals) {
        const auto p = rng.dirichlet(beta, static_cast<std::size_t>(n_clients));
        std::vector<double> ideal(p.size());
        for (std::size_t i = 0; i < p.size(); ++i)
            ideal[i] = p[i] * static_cast<double>(total);
        const auto parts = detail::largest_remainder(ideal, total);
        for (int i = 0; i < n_clients; ++i)
            if (parts[i] > 0) quotas[i][c] = parts[i];
    }
    return quotas;
}

// Synthetic generator. Each client holds exactly samples_per_client samples;
// label proportions drawn per client from Dirichlet(beta over classes);
// feature skew via x = A_i (mu_c + noise) + b_i with A_i = I + s E_i,
// E_i a dense Gaussian matrix normalized to spectral norm 1, b_i = s * unit.
inline std::vector<ClientDataset> generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int N = spec.num_clients, C = spec.num_classes, d = spec.input_dim;

    // class means on the separation sphere
    std::vector<Vec> mu(C);
    for (int c = 0; c < C; ++c) {
        mu[c] = rng.unit_vector(static_cast<std::size_t>(d));
        for (auto& x : mu[c]) x *= spec.class_separation;
    }

    std::vector<ClientDataset> out;
    out.reserve(N);
    for (int i = 0; i < N; ++i) {
        // per-client label proportions -> exact per-client quota
        const auto p = rng.dirichlet(spec.dirichlet_beta, static_cast<std::size_t>(C));
        std::vector<double> ideal(p.size());
        for (std::size_t k = 0; k < p.size(); ++k)
            ideal[k] = p[k] * spec.samples_per_client;
        const auto quota = detail::largest_remainder(ideal, spec.samples_per_client);

        // client transform A_i = I + s*E_i, bias b_i
        std::vector<double> A(static_cast<std::size_t>(d) * d, 0.0);
        Vec b(static_cast<std::size_t>(d), 0.0);
        if (spec.feature_skew_strength > 0.0) {
            std::vector<double> E(static_cast<std::size_t>(d) * d);
            for (auto& x : E) x = rng.normal();
            const double sn = detail::spectral_norm(E, d);
            const double scale = (sn > 0.0) ? spec.feature_skew_strength / sn : 0.0;
            for (std::size_t k = 0; k < E.size(); ++k) A[k] = E[k] * scale;
            b = rng.unit_vector(static_cast<std::size_t>(d));
            for (auto& x : b) x *= spec.feature_skew_strength;
        }
        for (int r = 0; r < d; ++r) A[static_cast<std::size_t>(r) * d + r] += 1.0;

        ClientDataset cd;
        cd.client_id = i;
        std::vector<Sample> pool;
        pool.reserve(static_cast<std::size_t>(spec.samples_per_client));
        for (int c = 0; c < C; ++c) {
            for (std::int64_t k = 0; k < quota[static_cast<std::size_t>(c)]; ++k) {
                Vec z(static_cast<std::size_t>(d));
                for (int j = 0; j < d; ++j)
                    z[static_cast<std::size_t>(j)] =
                        mu[c][static_cast<std::size_t>(j)] + spec.noise_sigma * rng.normal();
                Sample s;
                s.label = c;
                s.features.assign(static_cast<std::size_t>(d), 0.0);
                for (int r = 0; r < d; ++r) {
                    double acc = b[static_cast<std::size_t>(r)];
                    const double* row = &A[static_cast<std::size_t>(r) * d];
                    for (int j = 0; j < d; ++j) acc += row[j] * z[static_cast<std::size_t>(j)];
                    s.features[static_cast<std::size_t>(r)] = acc;
                }
                pool.push_back(std::move(s));
            }
        }
        detail::stratified_split(pool, spec.train_fraction, rng, cd.train, cd.test);
        cd.recompute_counts();
        out.push_back(std::move(cd));
    }
    return out;
}

// CSV ingestion: header `client_id,label,f0,...,f{d-1}`, one sample per row.
// The file carries no split column; the same stratified scheme as the
// synthetic path is applied per client with the given fraction and seed.
inline std::vector<ClientDataset> load_dataset_csv(const std::string& path,
                                                   double train_fraction = 0.8,
                                                   std::uint64_t seed = 0) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw ParseError(path + ": empty file or missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t dim = 0;  // feature count, declared by the header
    {
        std::istringstream hs(line);
        std::string tok;
        std::getline(hs, tok, ',');
        if (tok != "client_id")
            throw ParseError(path + ": header must start with client_id,label,f0,...");
        std::getline(hs, tok, ',');
        if (tok != "label")
            throw ParseError(path + ": second header column must be label");
        while (std::getline(hs, tok, ',')) ++dim;
        if (dim == 0)
            throw ParseError(path + ": header declares no feature columns");
    }
    std::map<int, std::vector<Sample>> pools;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        std::size_t col = 0;
        int cid = 0, label = 0;
        Vec feats;
        try {
            while (std::getline(ls, tok, ',')) {
                if (col == 0)
                    cid = std::stoi(tok);
                else if (col == 1)
                    label = std::stoi(tok);
                else
                    feats.push_back(std::stod(tok));
                ++col;
            }
        } catch (const std::exception&) {
            throw ParseError(path + ": row " + std::to_string(row) + ", column " +
                             std::to_string(col + 1) + ": bad value '" + tok + "'");
        }
        if (col < 3)
            throw ParseError(path + ": row " + std::to_string(row) +
                             ": need client_id,label and at least one feature");
        if (label < 0)
            throw ParseError(path + ": row " + std::to_string(row) +
                             ": negative label");
        if (feats.size() != dim)
            throw InconsistentDim(path + ": row " + std::to_string(row) + " has " +
                                  std::to_string(feats.size()) + " features, expected " +
                                  std::to_string(dim));
        if (!all_finite(feats))
            throw ParseError(path + ": row " + std::to_string(row) +
                             ": non-finite feature");
        pools[cid].push_back(Sample{std::move(feats), label});
    }
    if (pools.empty()) throw ParseError(path + ": no data rows");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InvalidSpec("train_fraction must lie in (0,1)");

    std::vector<ClientDataset> out;
    for (auto& [cid, pool] : pools) {
        ClientDataset cd;
        cd.client_id = cid;
        Rng rng(Rng::derive_seed(seed, 0x0C57ULL, static_cast<std::uint64_t>(cid)));
        detail::stratified_split(pool, train_fraction, rng, cd.train, cd.test);
        cd.recompute_counts();
        out.push_back(std::move(cd));
    }
    return out;
}

}  // namespace fedapa
