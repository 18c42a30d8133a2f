#pragma once

// Post-hoc instrumentation of the convergence story: per-round gradient
// sums, prototype movement against its velocity-based bound, windowed
// descent checks with a plug-in tolerance, and the stationarity summary.
// Constants that the analysis treats as assumptions (smoothness, gradient
// bound, prototype sensitivity) are estimated empirically here, so these
// checks report bound satisfaction rather than proving it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "client.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "prototypes.hpp"
#include "rng.hpp"

namespace fedapa {

// One record per (round, client). Round-level quantities (dp_round, dp_full,
// agg_lipschitz) are replicated into each client's record of that round.
struct TraceRecord {
    int t = 0;
    int client_id = 0;
    int steps = 0;
    int n_classes_present = 0;
    double lambda_t = 0.0;
    double loss_start = 0.0;       // full-train loss at w_{t,0}, current sets
    double loss_start_prev = std::numeric_limits<double>::quiet_NaN();
    // ^ same weights, previous round's sets (NaN before round 2)
    double g_sq_sum = 0.0;   // sum over the round's steps of ||grad||^2
    double g_sq_max = 0.0;   // largest single-step ||grad||^2
    double v_sq_max = 0.0;   // largest single-step ||velocity||^2
    double param_delta = 0.0;  // ||w_{t,S} - w_{t,0}||
    double dp_client = 0.0;  // this client's measured prototype movement
    double dp_round = 0.0;   // stacked measured movement ||P_t - P_{t-1}||_F
    double dp_full = 0.0;    // swap magnitude of the stack incl. padded entries
    double dq_full = 0.0;    // swap magnitude of this client's personalized set
    double agg_lipschitz = std::numeric_limits<double>::quiet_NaN();
};

struct ConvergenceTrace {
    std::vector<TraceRecord> records;  // ordered by (t, client_id)

    int max_round() const {
        int m = 0;
        for (const auto& r : records) m = std::max(m, r.t);
        return m;
    }
    int n_clients() const {
        int m = -1;
        for (const auto& r : records) m = std::max(m, r.client_id);
        return m + 1;
    }
};

// ---- JSON-lines serialization (one object per record) ----

namespace detail {

inline nlohmann::json trace_to_json(const TraceRecord& r) {
    nlohmann::json j;
    j["t"] = r.t;
    j["client"] = r.client_id;
    j["steps"] = r.steps;
    j["n_classes"] = r.n_classes_present;
    j["lambda"] = r.lambda_t;
    j["loss_start"] = r.loss_start;
    if (std::isfinite(r.loss_start_prev))
        j["loss_start_prev"] = r.loss_start_prev;
    else
        j["loss_start_prev"] = nullptr;
    j["g_sq_sum"] = r.g_sq_sum;
    j["g_sq_max"] = r.g_sq_max;
    j["v_sq_max"] = r.v_sq_max;
    j["param_delta"] = r.param_delta;
    j["dp_client"] = r.dp_client;
    j["dp_round"] = r.dp_round;
    j["dp_full"] = r.dp_full;
    j["dq_full"] = r.dq_full;
    if (std::isfinite(r.agg_lipschitz))
        j["agg_lipschitz"] = r.agg_lipschitz;
    else
        j["agg_lipschitz"] = nullptr;
    return j;
}

inline TraceRecord trace_from_json(const nlohmann::json& j) {
    TraceRecord r;
    r.t = j.at("t").get<int>();
    r.client_id = j.at("client").get<int>();
    r.steps = j.at("steps").get<int>();
    r.n_classes_present = j.at("n_classes").get<int>();
    r.lambda_t = j.at("lambda").get<double>();
    r.loss_start = j.at("loss_start").get<double>();
    r.loss_start_prev = j.at("loss_start_prev").is_null()
                            ? std::numeric_limits<double>::quiet_NaN()
                            : j.at("loss_start_prev").get<double>();
    r.g_sq_sum = j.at("g_sq_sum").get<double>();
    r.g_sq_max = j.at("g_sq_max").get<double>();
    r.v_sq_max = j.at("v_sq_max").get<double>();
    r.param_delta = j.at("param_delta").get<double>();
    r.dp_client = j.at("dp_client").get<double>();
    r.dp_round = j.at("dp_round").get<double>();
    r.dp_full = j.at("dp_full").get<double>();
    r.dq_full = j.at("dq_full").get<double>();
    r.agg_lipschitz = j.at("agg_lipschitz").is_null()
                          ? std::numeric_limits<double>::quiet_NaN()
                          : j.at("agg_lipschitz").get<double>();
    return r;
}

}  // namespace detail

inline void write_trace_jsonl(const ConvergenceTrace& trace, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (const auto& r : trace.records) os << detail::trace_to_json(r).dump() << '\n';
    if (!os) throw IoError("write failed for " + path);
}

inline ConvergenceTrace read_trace_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    ConvergenceTrace trace;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            trace.records.push_back(detail::trace_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return trace;
}

// ---- derived schedule info ----

// First round of the longest exactly-constant lambda tail. With the cosine
// warm-up this is the configured warm-up length (lambda is bitwise constant
// from there on); with a static schedule it is round 1.
inline int derive_t_warm(const ConvergenceTrace& trace) {
    if (trace.records.empty()) throw InsufficientTrace("empty trace");
    std::map<int, double> lam;
    for (const auto& r : trace.records) lam[r.t] = r.lambda_t;
    auto it = lam.rbegin();
    const double final_lambda = it->second;
    int t_warm = it->first;
    for (; it != lam.rend(); ++it) {
        if (it->second != final_lambda) break;
        t_warm = it->first;
    }
    return t_warm;
}

// ---- plug-in constants estimated from the trace ----

struct PlugInConstants {
    double g_hat = 0.0;        // max per-step gradient norm (post-warm-up)
    double g_v_hat = 0.0;      // max per-step velocity norm (all rounds)
    double sigma_sq_hat = 0.0;  // >= gradient variance: max per-round mean ||g||^2
    double k_hat = 0.0;        // prototype movement per unit eta*S*G_v
    double gamma_hat = 0.0;    // loss change per unit prototype swap magnitude
    double lambda_post = 0.0;  // lambda after warm-up
    int t_warm = 1;
};

inline PlugInConstants estimate_constants(const ConvergenceTrace& trace, double eta) {
    if (trace.records.empty()) throw InsufficientTrace("empty trace");
    PlugInConstants c;
    c.t_warm = derive_t_warm(trace);
    std::map<int, double> dp_by_round;
    std::map<int, int> steps_by_round;
    for (const auto& r : trace.records) {
        c.g_v_hat = std::max(c.g_v_hat, std::sqrt(r.v_sq_max));
        if (r.t >= c.t_warm) {
            c.g_hat = std::max(c.g_hat, std::sqrt(r.g_sq_max));
            if (r.steps > 0)
                c.sigma_sq_hat = std::max(c.sigma_sq_hat, r.g_sq_sum / r.steps);
        }
        dp_by_round[r.t] = r.dp_round;
        steps_by_round[r.t] = std::max(steps_by_round[r.t], r.steps);
        if (std::isfinite(r.loss_start_prev)) {
            const double denom = r.dp_full + r.dq_full;
            if (denom > 1e-12)
                c.gamma_hat = std::max(
                    c.gamma_hat, std::abs(r.loss_start - r.loss_start_prev) / denom);
        }
    }
    const int t_last = trace.max_round();
    for (const auto& r : trace.records)
        if (r.t == t_last) c.lambda_post = r.lambda_t;
    if (c.g_v_hat > 0.0 && eta > 0.0) {
        for (const auto& [t, dp] : dp_by_round) {
            if (t < 2) continue;
            const double denom = eta * steps_by_round[t] * c.g_v_hat;
            if (denom > 0.0) c.k_hat = std::max(c.k_hat, dp / denom);
        }
    }
    return c;
}

// Allowed per-window loss increase: the second-order SGD noise term plus the
// prototype-refresh term, both with empirical plug-ins.
inline double descent_tolerance(const PlugInConstants& c, double l_max_hat, double eta,
                                double steps_per_round) {
    return 0.5 * l_max_hat * eta * eta * steps_per_round * c.sigma_sq_hat +
           c.lambda_post * c.gamma_hat * c.k_hat * eta * steps_per_round * c.g_hat;
}

// ---- windowed descent check ----

struct DescentClientReport {
    int client_id = 0;
    int windows = 0;
    int passed = 0;
    double max_increase = 0.0;  // worst MA step; slack = max_increase - tolerance
    bool pass = false;
};

struct DescentReport {
    std::vector<DescentClientReport> per_client;
    double tolerance = 0.0;
    int t_warm = 0;
    int windows = 0;
    int passed = 0;
    double pass_fraction = 0.0;
    bool all_pass = false;
};

inline DescentReport descent_check(const ConvergenceTrace& trace, int window,
                                   double tolerance, int t_warm = -1) {
    if (window < 1) throw InvalidSpec("descent_check: window must be >= 1");
    if (t_warm < 0) t_warm = derive_t_warm(trace);
    std::map<int, std::map<int, double>> series;  // client -> t -> loss_start
    for (const auto& r : trace.records)
        if (r.t >= t_warm) series[r.client_id][r.t] = r.loss_start;
    if (series.empty()) throw InsufficientTrace("no post-warm-up rounds");

    DescentReport rep;
    rep.tolerance = tolerance;
    rep.t_warm = t_warm;
    for (const auto& [cid, by_t] : series) {
        std::vector<double> loss;
        loss.reserve(by_t.size());
        for (const auto& [t, v] : by_t) loss.push_back(v);
        const int m = static_cast<int>(loss.size());
        if (m < window + 1)
            throw InsufficientTrace("client " + std::to_string(cid) + ": " +
                                    std::to_string(m) + " post-warm-up rounds < window+1");
        DescentClientReport cr;
        cr.client_id = cid;
        cr.max_increase = -std::numeric_limits<double>::infinity();
        double ma_prev = 0.0;
        for (int k = 0; k < window; ++k) ma_prev += loss[static_cast<std::size_t>(k)];
        ma_prev /= window;
        for (int k = window; k < m; ++k) {
            double ma = ma_prev + (loss[static_cast<std::size_t>(k)] -
                                   loss[static_cast<std::size_t>(k - window)]) /
                                      window;
            const double inc = ma - ma_prev;
            cr.max_increase = std::max(cr.max_increase, inc);
            ++cr.windows;
            if (inc <= tolerance) ++cr.passed;
            ma_prev = ma;
        }
        cr.pass = cr.passed == cr.windows;
        rep.windows += cr.windows;
        rep.passed += cr.passed;
        rep.per_client.push_back(cr);
    }
    rep.pass_fraction =
        rep.windows > 0 ? static_cast<double>(rep.passed) / rep.windows : 1.0;
    rep.all_pass = rep.passed == rep.windows;
    return rep;
}

// ---- stationarity summary ----

struct StationarityClientSummary {
    int client_id = 0;
    std::int64_t steps = 0;         // K: post-warm-up step count used
    double mean_g_sq = 0.0;         // (1/K) sum of per-step ||g||^2
    double term_delta = 0.0;        // 2 * Delta_i / (K * eta)
    double term_smooth = 0.0;       // L_max * eta * sigma^2
    double term_floor = 0.0;        // 2 * lambda * Gamma * k * G
    double bound() const { return term_delta + term_smooth + term_floor; }
    bool within_bound = false;      // reported, never asserted
};

struct StationarityReport {
    std::vector<StationarityClientSummary> per_client;
    PlugInConstants constants;
};

inline StationarityReport stationarity_summary(const ConvergenceTrace& trace,
                                               std::int64_t k_steps, double eta,
                                               double l_max_hat, int t_warm = -1) {
    if (t_warm < 0) t_warm = derive_t_warm(trace);
    StationarityReport rep;
    rep.constants = estimate_constants(trace, eta);
    std::map<int, std::vector<const TraceRecord*>> by_client;
    for (const auto& r : trace.records)
        if (r.t >= t_warm) by_client[r.client_id].push_back(&r);
    if (by_client.empty()) throw InsufficientTrace("no post-warm-up rounds");
    for (auto& [cid, recs] : by_client) {
        std::sort(recs.begin(), recs.end(),
                  [](const TraceRecord* a, const TraceRecord* b) { return a->t < b->t; });
        StationarityClientSummary s;
        s.client_id = cid;
        double g_total = 0.0;
        double first_loss = recs.front()->loss_start, min_loss = recs.front()->loss_start;
        for (const auto* r : recs) {
            g_total += r->g_sq_sum;
            s.steps += r->steps;
            min_loss = std::min(min_loss, r->loss_start);
        }
        if (k_steps > 0 && k_steps > s.steps)
            throw InsufficientTrace("client " + std::to_string(cid) + ": requested " +
                                    std::to_string(k_steps) + " steps, trace has " +
                                    std::to_string(s.steps));
        if (s.steps == 0) throw InsufficientTrace("zero post-warm-up steps");
        s.mean_g_sq = g_total / static_cast<double>(s.steps);
        const double delta_i = std::max(0.0, first_loss - min_loss);
        s.term_delta = 2.0 * delta_i / (static_cast<double>(s.steps) * eta);
        s.term_smooth = l_max_hat * eta * rep.constants.sigma_sq_hat;
        s.term_floor = 2.0 * rep.constants.lambda_post * rep.constants.gamma_hat *
                       rep.constants.k_hat * rep.constants.g_hat;
        s.within_bound = s.mean_g_sq <= s.bound();
        rep.per_client.push_back(s);
    }
    return rep;
}

// ---- prototype-movement bound ----

struct MovementBoundReport {
    double l_wtheta_hat = 0.0;  // encoder-to-prototype sensitivity
    double g_v_hat = 0.0;       // max per-step velocity norm
    int rounds_checked = 0;
    double max_ratio = 0.0;  // worst dp_round / bound
    std::vector<int> violating_rounds;
    bool all_within = false;
};

// Checks ||P_t - P_{t-1}||_F <= slack * L_wtheta * sqrt(sum_i C_i) * eta * S * G
// every round, with L_wtheta the larger of a probe-based estimate (optional)
// and the realized per-client movement/parameter-delta ratio.
inline MovementBoundReport movement_bound_check(const ConvergenceTrace& trace, double eta,
                                                double slack = 1.05,
                                                double probed_l_wtheta = 0.0) {
    if (trace.records.empty()) throw InsufficientTrace("empty trace");
    MovementBoundReport rep;
    rep.l_wtheta_hat = probed_l_wtheta;
    std::map<int, double> dp_by_round, sum_ci;
    std::map<int, int> steps_by_round;
    for (const auto& r : trace.records) {
        rep.g_v_hat = std::max(rep.g_v_hat, std::sqrt(r.v_sq_max));
        if (r.t >= 2 && r.param_delta > 0.0)
            rep.l_wtheta_hat = std::max(rep.l_wtheta_hat, r.dp_client / r.param_delta);
        dp_by_round[r.t] = r.dp_round;
        sum_ci[r.t] += r.n_classes_present;
        steps_by_round[r.t] = std::max(steps_by_round[r.t], r.steps);
    }
    rep.all_within = true;
    for (const auto& [t, dp] : dp_by_round) {
        ++rep.rounds_checked;
        if (dp == 0.0) continue;  // nothing measurable moved (e.g. round 1)
        const double bound = slack * rep.l_wtheta_hat * std::sqrt(sum_ci[t]) * eta *
                             steps_by_round[t] * rep.g_v_hat;
        const double ratio = bound > 0.0 ? dp / bound
                                         : std::numeric_limits<double>::infinity();
        rep.max_ratio = std::max(rep.max_ratio, ratio);
        if (ratio > 1.0) {
            rep.all_within = false;
            rep.violating_rounds.push_back(t);
        }
    }
    return rep;
}

// ---- live-model probes for the Lipschitz plug-ins ----

namespace detail {

inline GradShadow random_direction(const ModelParams& m, Rng& rng) {
    GradShadow d = GradShadow::zeros_like(m);
    for (auto& v : d.enc_w)
        for (auto& x : v) x = rng.normal();
    for (auto& v : d.enc_b)
        for (auto& x : v) x = rng.normal();
    for (auto& x : d.cls_w) x = rng.normal();
    for (auto& x : d.cls_b) x = rng.normal();
    return d;
}

inline void apply_direction(ModelParams& m, const GradShadow& d, double scale) {
    for (std::size_t li = 0; li < m.encoder.size(); ++li) {
        for (std::size_t k = 0; k < m.encoder[li].w.size(); ++k)
            m.encoder[li].w[k] += scale * d.enc_w[li][k];
        for (std::size_t k = 0; k < m.encoder[li].b.size(); ++k)
            m.encoder[li].b[k] += scale * d.enc_b[li][k];
    }
    for (std::size_t k = 0; k < m.classifier.w.size(); ++k)
        m.classifier.w[k] += scale * d.cls_w[k];
    for (std::size_t k = 0; k < m.classifier.b.size(); ++k)
        m.classifier.b[k] += scale * d.cls_b[k];
}

inline double grad_diff_norm(const GradShadow& a, const GradShadow& b) {
    GradShadow d = a;
    d.add_scaled(b, -1.0);
    return std::sqrt(d.squared_norm());
}

}  // namespace detail

// max over random directions of ||grad(w + delta) - grad(w)|| / ||delta||
// for the full-train objective — the smoothness plug-in L_max.
inline double estimate_smoothness(const ClientState& state,
                                  const PersonalizedPrototypes* q,
                                  const StackedPrototypes* p, double lambda,
                                  int probes, double eps, Rng& rng) {
    if (probes < 1) throw InvalidSpec("estimate_smoothness: probes >= 1");
    if (!(eps > 0.0)) throw InvalidSpec("estimate_smoothness: eps > 0");
    const std::map<int, Vec>* qptr = nullptr;
    if (state.use_personalized_term && q) qptr = &q->entries;
    std::vector<std::map<int, Vec>> stacked;
    const std::vector<std::map<int, Vec>>* sptr = nullptr;
    if (state.use_client_term && p) {
        for (const auto& s : p->sets) stacked.push_back(s.entries);
        sptr = &stacked;
    }
    GradShadow g0, g1;
    total_loss(state.model, state.dataset.train, qptr, sptr, state.tau_loss, lambda, &g0);
    double best = 0.0;
    for (int k = 0; k < probes; ++k) {
        GradShadow dir = detail::random_direction(state.model, rng);
        const double dn = std::sqrt(dir.squared_norm());
        if (dn == 0.0) continue;
        ModelParams probe = state.model;
        detail::apply_direction(probe, dir, eps / dn);
        total_loss(probe, state.dataset.train, qptr, sptr, state.tau_loss, lambda, &g1);
        best = std::max(best, detail::grad_diff_norm(g1, g0) / eps);
    }
    return best;
}

// max over random directions of ||protos(w + delta) - protos(w)||_F / ||delta||
// — the encoder-to-prototype sensitivity plug-in L_wtheta.
inline double estimate_prototype_lipschitz(const ClientState& state, int probes,
                                           double eps, Rng& rng) {
    if (probes < 1) throw InvalidSpec("estimate_prototype_lipschitz: probes >= 1");
    if (!(eps > 0.0)) throw InvalidSpec("estimate_prototype_lipschitz: eps > 0");
    const PrototypeSet base = compute_local_prototypes(state.model, state.dataset);
    double best = 0.0;
    for (int k = 0; k < probes; ++k) {
        GradShadow dir = detail::random_direction(state.model, rng);
        const double dn = std::sqrt(dir.squared_norm());
        if (dn == 0.0) continue;
        ModelParams probe = state.model;
        detail::apply_direction(probe, dir, eps / dn);
        ClientState tmp = state;
        tmp.model = std::move(probe);
        const PrototypeSet moved = compute_local_prototypes(tmp.model, tmp.dataset);
        best = std::max(best, prototype_set_delta_frobenius(moved, base) / eps);
    }
    return best;
}

}  // namespace fedapa
