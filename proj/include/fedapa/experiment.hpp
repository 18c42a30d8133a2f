#pragma once

// Config-driven experiment runner: builds the federation, executes T rounds
// (clients sequentially or in parallel workers — bit-identical either way),
// and writes metrics.csv, trace.jsonl, cost.json, summary.json, manifest.json
// and the per-round server log.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "client.hpp"
#include "config.hpp"
#include "data.hpp"
#include "diagnostics.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "prototypes.hpp"
#include "rng.hpp"
#include "server.hpp"
#include "version.hpp"

namespace fedapa {

struct ModeFlags {
    bool exchange = true;        // any server communication at all
    AggregationMode agg = AggregationMode::APA;
    bool pull_to_personalized = true;  // L_g term
    bool contrast_all_clients = true;  // L_c term
    WarmupSchedule sched;
};

inline ModeFlags resolve_mode(const ExperimentConfig& cfg) {
    ModeFlags f;
    if (cfg.mode == "fedapa") {
        f.sched = {cfg.lambda_min, cfg.lambda_max, cfg.warmup_rounds};
    } else if (cfg.mode == "fedapa_no_lc") {
        f.contrast_all_clients = false;
        f.sched = {cfg.lambda_min, cfg.lambda_max, cfg.warmup_rounds};
    } else if (cfg.mode == "uniform_proto") {
        f.agg = AggregationMode::UniformAverage;
        f.contrast_all_clients = false;
        f.sched = {cfg.lambda_min, cfg.lambda_max, cfg.warmup_rounds};
    } else if (cfg.mode == "fedapa_static_lambda") {
        f.sched = {cfg.static_lambda, cfg.static_lambda, 1};
    } else if (cfg.mode == "local_only") {
        f.exchange = false;
        f.pull_to_personalized = false;
        f.contrast_all_clients = false;
        f.sched = {0.0, 0.0, 1};
    } else {
        throw ConfigError("mode: unrecognized '" + cfg.mode + "'");
    }
    return f;
}

struct SummaryStats {
    int averaged_rounds = 0;  // trailing rounds in the mean (5 when T >= 5)
    std::vector<double> client_accuracy, client_macro_f1, client_mae;
    double accuracy = 0.0, macro_f1 = 0.0, mae = 0.0;
};

struct ExperimentResult {
    ExperimentConfig config;  // resolved (arch broadcast, etc.)
    int n_clients = 0, n_classes = 0;
    std::vector<RoundMetrics> rounds;
    ConvergenceTrace trace;
    RoundCost round_cost;  // identical every round (padded-complete sets)
    SummaryStats summary;
};

namespace detail {

inline std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline SummaryStats summarize(const std::vector<RoundMetrics>& rounds, int window = 5) {
    SummaryStats s;
    if (rounds.empty()) return s;
    const int take = std::min<int>(window, static_cast<int>(rounds.size()));
    const std::size_t n_clients = rounds.back().clients.size();
    s.averaged_rounds = take;
    s.client_accuracy.assign(n_clients, 0.0);
    s.client_macro_f1.assign(n_clients, 0.0);
    s.client_mae.assign(n_clients, 0.0);
    for (int k = 0; k < take; ++k) {
        const auto& rm = rounds[rounds.size() - 1 - static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < n_clients; ++i) {
            s.client_accuracy[i] += rm.clients[i].accuracy / take;
            s.client_macro_f1[i] += rm.clients[i].macro_f1 / take;
            s.client_mae[i] += rm.clients[i].mae / take;
        }
    }
    for (std::size_t i = 0; i < n_clients; ++i) {
        s.accuracy += s.client_accuracy[i] / static_cast<double>(n_clients);
        s.macro_f1 += s.client_macro_f1[i] / static_cast<double>(n_clients);
        s.mae += s.client_mae[i] / static_cast<double>(n_clients);
    }
    return s;
}

// deterministic worker pool: client i handled by worker i % W, results merged
// by client index
template <typename Fn>
inline void for_each_client(int n, int threads, Fn&& fn) {
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, n);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg_in,
                                       bool write_artifacts = true) {
    cfg_in.validate();
    ExperimentConfig cfg = cfg_in;
    const ModeFlags mode = resolve_mode(cfg);

    // ---- data ----
    std::vector<ClientDataset> data;
    int n_classes = 0, input_dim = 0;
    if (cfg.data_csv.empty()) {
        SynthSpec spec = cfg.synth;
        spec.seed = cfg.seed;
        data = generate_synthetic(spec);
        n_classes = spec.num_classes;
        input_dim = spec.input_dim;
    } else {
        data = load_dataset_csv(cfg.data_csv, cfg.synth.train_fraction, cfg.seed);
        for (const auto& ds : data) {
            for (const auto& s : ds.train) n_classes = std::max(n_classes, s.label + 1);
            for (const auto& s : ds.test) n_classes = std::max(n_classes, s.label + 1);
        }
        if (data.empty() || (data[0].train.empty() && data[0].test.empty()))
            throw EmptyDataset(cfg.data_csv);
        input_dim = static_cast<int>(
            (data[0].train.empty() ? data[0].test : data[0].train)[0].features.size());
    }
    const int n = static_cast<int>(data.size());
    if (cfg.arch.size() == 1 && n > 1) cfg.arch.assign(static_cast<std::size_t>(n), cfg.arch[0]);
    if (static_cast<int>(cfg.arch.size()) != n)
        throw ConfigError("arch: list length " + std::to_string(cfg.arch.size()) +
                          " != clients " + std::to_string(n));

    // ---- clients (same-preset clients share their initial weights) ----
    std::map<std::string, ModelParams> shared_init;
    {
        std::set<std::string> names(cfg.arch.begin(), cfg.arch.end());
        std::uint64_t k = 0;
        for (const auto& name : names) {
            Rng r(Rng::derive_seed(cfg.seed, 0xA2C4u, k++));
            shared_init[name] =
                init_model(ArchSpec::preset(name, input_dim, cfg.d_feat), n_classes, r);
        }
    }
    std::vector<ClientState> clients(static_cast<std::size_t>(n));
    std::vector<std::map<int, std::int64_t>> class_counts;
    for (int i = 0; i < n; ++i) {
        auto& c = clients[static_cast<std::size_t>(i)];
        c.client_id = i;
        c.model = shared_init.at(cfg.arch[static_cast<std::size_t>(i)]);
        c.optimizer = OptimizerState::for_model(c.model, cfg.lr, cfg.momentum,
                                                cfg.weight_decay);
        c.dataset = std::move(data[static_cast<std::size_t>(i)]);
        c.sched = mode.sched;
        c.batch_size = cfg.batch;
        c.local_epochs = cfg.local_epochs;
        c.tau_loss = cfg.tau_loss;
        c.use_personalized_term = mode.pull_to_personalized;
        c.use_client_term = mode.contrast_all_clients;
        c.run_seed = cfg.seed;
        class_counts.push_back(c.dataset.class_counts);
    }

    // ---- server ----
    ServerState server;
    server.cfg.tau = cfg.tau_agg;
    server.cfg.mode = mode.agg;
    server.cfg.exclude_self = cfg.exclude_self;
    server.cfg.sample_weighted_padding = cfg.sample_weighted_padding;
    server.n_classes = n_classes;
    server.d_feat = cfg.d_feat;
    if (mode.exchange) {
        Rng proto_rng(Rng::derive_seed(cfg.seed, 0x9047u, 0));
        auto init = init_prototypes(n, n_classes, cfg.d_feat, proto_rng);
        server.p_prev = std::move(init.first);
        server.q_prev = std::move(init.second);
    }

    // sets served entering the current round / the round before it
    StackedPrototypes p_served = server.p_prev, p_served_old;
    std::vector<PersonalizedPrototypes> q_served = server.q_prev, q_served_old;

    const CostModel cost_model{4, 1000, cfg.d_feat, n_classes, n};
    ExperimentResult result;
    result.config = cfg;
    result.n_clients = n;
    result.n_classes = n_classes;

    std::ofstream server_log;
    const bool log_server = write_artifacts && mode.exchange && cfg.server_log != "off";
    if (write_artifacts) {
        std::filesystem::create_directories(cfg.out);
        if (log_server) {
            server_log.open(cfg.out + "/server_log.jsonl");
            if (!server_log) throw IoError("cannot open " + cfg.out + "/server_log.jsonl");
        }
    }

    struct WorkItem {
        PrototypeSet upload;
        RoundClientStats stats;
        EvalResult eval;
        double loss_prev = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<WorkItem> work(static_cast<std::size_t>(n));
    double agg_lipschitz = std::numeric_limits<double>::quiet_NaN();

    for (int t = 1; t <= cfg.rounds; ++t) {
        detail::for_each_client(n, cfg.threads, [&](int i) {
            auto& st = clients[static_cast<std::size_t>(i)];
            auto& w = work[static_cast<std::size_t>(i)];
            const double lambda_t = warmup_lambda(t, st.sched);
            if (mode.exchange && t >= 2)
                w.loss_prev = client_eval_loss(st, &q_served_old[static_cast<std::size_t>(i)],
                                               &p_served_old, lambda_t)
                                  .total;
            else
                w.loss_prev = std::numeric_limits<double>::quiet_NaN();
            auto up = client_update(st,
                                    mode.exchange ? &q_served[static_cast<std::size_t>(i)] : nullptr,
                                    mode.exchange ? &p_served : nullptr, t);
            w.upload = std::move(up.first);
            w.stats = std::move(up.second);
            w.eval = evaluate(st);
        });

        // ---- server exchange ----
        ServerRoundOutput out;
        RoundCost rc;
        if (mode.exchange) {
            std::vector<PrototypeSet> uploads;
            uploads.reserve(static_cast<std::size_t>(n));
            for (const auto& w : work) uploads.push_back(w.upload);
            out = server_round(server, std::move(uploads), &class_counts);
            std::vector<int> p_counts, q_counts;
            for (int i = 0; i < n; ++i) {
                p_counts.push_back(static_cast<int>(out.p.sets[static_cast<std::size_t>(i)].entries.size()));
                q_counts.push_back(static_cast<int>(out.q[static_cast<std::size_t>(i)].entries.size()));
            }
            rc = fedapa_round_bytes(cost_model, p_counts, q_counts);
            if (server.cfg.mode == AggregationMode::APA &&
                (t == 2 || t == std::max(2, cfg.rounds / 2) || t == cfg.rounds)) {
                Rng diag_rng(Rng::derive_seed(cfg.seed, 0xD1A6u, static_cast<std::uint64_t>(t)));
                agg_lipschitz = empirical_agg_lipschitz(server, 0.05, 3, diag_rng);
            }
        } else {
            rc.up.assign(static_cast<std::size_t>(n), 0);
            rc.down.assign(static_cast<std::size_t>(n), 0);
        }
        result.round_cost = rc;

        // ---- metrics row ----
        RoundMetrics rm;
        rm.t = t;
        rm.lambda_t = work[0].stats.lambda_t;
        for (int i = 0; i < n; ++i) {
            const auto& w = work[static_cast<std::size_t>(i)];
            ClientRoundMetrics cm;
            cm.client_id = i;
            cm.accuracy = w.eval.accuracy;
            cm.macro_f1 = w.eval.macro_f1;
            cm.mae = w.eval.mae;
            cm.loss = w.stats.loss_start;
            cm.grad_sq_sum = w.stats.grad_sq_sum();
            cm.bytes_up = rc.up[static_cast<std::size_t>(i)];
            cm.bytes_down = rc.down[static_cast<std::size_t>(i)];
            rm.clients.push_back(cm);
        }
        rm.validate();
        result.rounds.push_back(rm);

        // ---- convergence trace ----
        double dp_round = 0.0, dp_full_swap = 0.0;
        if (mode.exchange) {
            dp_round = prototype_delta_frobenius(out.p, p_served);
            if (t >= 2) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double d = entries_delta_frobenius(
                        p_served.sets[static_cast<std::size_t>(j)].entries,
                        p_served_old.sets[static_cast<std::size_t>(j)].entries);
                    acc += d * d;
                }
                dp_full_swap = std::sqrt(acc);
            }
        }
        for (int i = 0; i < n; ++i) {
            const auto& w = work[static_cast<std::size_t>(i)];
            TraceRecord r;
            r.t = t;
            r.client_id = i;
            r.steps = w.stats.steps;
            r.n_classes_present =
                static_cast<int>(clients[static_cast<std::size_t>(i)].dataset.present_classes.size());
            r.lambda_t = w.stats.lambda_t;
            r.loss_start = w.stats.loss_start.total;
            r.loss_start_prev = w.loss_prev;
            r.g_sq_sum = w.stats.grad_sq_sum();
            r.g_sq_max = w.stats.grad_sq_max();
            r.v_sq_max = w.stats.vel_sq_max();
            r.param_delta = w.stats.param_delta_norm;
            if (mode.exchange) {
                r.dp_client = prototype_set_delta_frobenius(
                    out.p.sets[static_cast<std::size_t>(i)], p_served.sets[static_cast<std::size_t>(i)]);
                r.dp_round = dp_round;
                r.dp_full = dp_full_swap;
                if (t >= 2)
                    r.dq_full = entries_delta_frobenius(
                        q_served[static_cast<std::size_t>(i)].entries,
                        q_served_old[static_cast<std::size_t>(i)].entries);
            }
            r.agg_lipschitz = agg_lipschitz;
            result.trace.records.push_back(r);
        }

        // ---- server log ----
        if (log_server) {
            nlohmann::json j;
            j["t"] = t;
            j["bytes_up"] = rc.up;
            j["bytes_down"] = rc.down;
            nlohmann::json padded = nlohmann::json::object();
            for (const auto& [cid, classes] : out.padded_classes)
                padded[std::to_string(cid)] = std::vector<int>(classes.begin(), classes.end());
            j["padded"] = padded;
            const bool log_weights =
                cfg.server_log == "full" ||
                (cfg.server_log == "sparse" && (t == 1 || t % 10 == 0 || t == cfg.rounds));
            if (log_weights) {
                nlohmann::json weights = nlohmann::json::object();
                for (const auto& [c, rows] : out.weights.rows) {
                    nlohmann::json by_client = nlohmann::json::object();
                    for (const auto& [i, row] : rows) {
                        nlohmann::json arr = nlohmann::json::array();
                        for (const auto& [jid, alpha] : row)
                            arr.push_back({jid, alpha});
                        by_client[std::to_string(i)] = arr;
                    }
                    weights[std::to_string(c)] = by_client;
                }
                j["weights"] = weights;
            }
            server_log << j.dump() << '\n';
        }

        if (mode.exchange) {
            p_served_old = std::move(p_served);
            q_served_old = std::move(q_served);
            p_served = server.p_prev;
            q_served = server.q_prev;
        }
    }

    result.summary = detail::summarize(result.rounds);

    if (write_artifacts) {
        // metrics.csv — fixed column order, 17-significant-digit values
        {
            std::ofstream os(cfg.out + "/metrics.csv");
            if (!os) throw IoError("cannot open " + cfg.out + "/metrics.csv");
            os << "t,client,accuracy,macro_f1,mae,loss_total,loss_ce,loss_lg,loss_lc,"
                  "lambda,grad_sq_sum,bytes_up,bytes_down\n";
            for (const auto& rm : result.rounds)
                for (const auto& c : rm.clients)
                    os << rm.t << ',' << c.client_id << ',' << detail::csv_num(c.accuracy)
                       << ',' << detail::csv_num(c.macro_f1) << ',' << detail::csv_num(c.mae)
                       << ',' << detail::csv_num(c.loss.total) << ','
                       << detail::csv_num(c.loss.ce) << ',' << detail::csv_num(c.loss.lg)
                       << ',' << detail::csv_num(c.loss.lc) << ','
                       << detail::csv_num(rm.lambda_t) << ','
                       << detail::csv_num(c.grad_sq_sum) << ',' << c.bytes_up << ','
                       << c.bytes_down << '\n';
            if (!os) throw IoError("write failed for " + cfg.out + "/metrics.csv");
        }
        write_trace_jsonl(result.trace, cfg.out + "/trace.jsonl");

        const std::int64_t ref_bytes =
            model_sharing_round_bytes(cost_model, kModelSharingReferenceParams);
        {
            nlohmann::json j;
            j["model"] = {{"bytes_per_param", cost_model.bytes_per_param},
                          {"kilobyte", cost_model.kilobyte},
                          {"d_feat", cost_model.d_feat},
                          {"classes", cost_model.n_classes},
                          {"clients", cost_model.n_clients}};
            j["per_round"] = {{"total_shared_downlink", result.round_cost.total_shared_downlink},
                              {"total_up_down", result.round_cost.total_up_down},
                              {"up_per_client", result.round_cost.up},
                              {"down_per_client", result.round_cost.down}};
            j["cumulative"] = {
                {"rounds", cfg.rounds},
                {"total_shared_downlink",
                 result.round_cost.total_shared_downlink * cfg.rounds},
                {"total_up_down", result.round_cost.total_up_down * cfg.rounds}};
            j["model_sharing_reference"] = {{"params", kModelSharingReferenceParams},
                                            {"round_bytes", ref_bytes}};
            j["reduction_percent"] =
                reduction_percent(result.round_cost.total_shared_downlink, ref_bytes);
            std::ofstream os(cfg.out + "/cost.json");
            if (!os) throw IoError("cannot open " + cfg.out + "/cost.json");
            os << j.dump(2) << '\n';
        }
        {
            nlohmann::json j;
            j["mode"] = cfg.mode;
            j["seed"] = cfg.seed;
            j["rounds"] = cfg.rounds;
            j["clients"] = n;
            j["classes"] = n_classes;
            j["averaged_rounds"] = result.summary.averaged_rounds;
            nlohmann::json pc = nlohmann::json::array();
            for (int i = 0; i < n; ++i)
                pc.push_back({{"client", i},
                              {"accuracy", result.summary.client_accuracy[static_cast<std::size_t>(i)]},
                              {"macro_f1", result.summary.client_macro_f1[static_cast<std::size_t>(i)]},
                              {"mae", result.summary.client_mae[static_cast<std::size_t>(i)]}});
            j["per_client"] = pc;
            j["accuracy"] = result.summary.accuracy;
            j["macro_f1"] = result.summary.macro_f1;
            j["mae"] = result.summary.mae;
            j["round_bytes"] = result.round_cost.total_shared_downlink;
            j["round_kb"] = to_kb(result.round_cost.total_shared_downlink, cost_model);
            std::ofstream os(cfg.out + "/summary.json");
            if (!os) throw IoError("cannot open " + cfg.out + "/summary.json");
            os << j.dump(2) << '\n';
        }
        {
            nlohmann::json j;
            j["version"] = kVersion;
            j["config_text"] = serialize_config(cfg);
            std::ofstream os(cfg.out + "/manifest.json");
            if (!os) throw IoError("cannot open " + cfg.out + "/manifest.json");
            os << j.dump(2) << '\n';
        }
    }
    return result;
}

// ---- summary table over run artifacts ----

struct ModeSummary {
    std::string mode;
    double accuracy = 0.0, macro_f1 = 0.0, mae = 0.0;
    double round_kb = 0.0;
};

inline ModeSummary load_summary(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    ModeSummary s;
    s.mode = j.at("mode").get<std::string>();
    s.accuracy = j.at("accuracy").get<double>();
    s.macro_f1 = j.at("macro_f1").get<double>();
    s.mae = j.at("mae").get<double>();
    s.round_kb = j.at("round_kb").get<double>();
    return s;
}

inline std::string format_summary_table(const std::vector<ModeSummary>& rows) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %10s %10s %8s %10s\n", "mode", "accuracy",
                  "macro_f1", "mae", "KB/round");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-22s %10.4f %10.4f %8.3f %10.2f\n",
                      r.mode.c_str(), r.accuracy, r.macro_f1, r.mae, r.round_kb);
        os << line;
    }
    return os.str();
}

}  // namespace fedapa
