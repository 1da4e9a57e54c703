#include "grease/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "grease/baselines.hpp"
#include "grease/rng.hpp"

namespace grease {

std::vector<std::pair<std::int64_t, std::int64_t>> load_interactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_interactions: cannot open " + path);
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto tab1 = line.find('\t');
        if (tab1 == std::string::npos) {
            throw std::runtime_error("load_interactions: missing tab at line " +
                                     std::to_string(line_no));
        }
        auto tab2 = line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) tab2 = line.size();
        std::int64_t user = 0, item = 0;
        const char* base = line.data();
        auto r1 = std::from_chars(base, base + tab1, user);
        auto r2 = std::from_chars(base + tab1 + 1, base + tab2, item);
        if (r1.ec != std::errc{} || r1.ptr != base + tab1 || r2.ec != std::errc{} ||
            r2.ptr != base + tab2) {
            throw std::runtime_error("load_interactions: non-integer id at line " +
                                     std::to_string(line_no));
        }
        out.emplace_back(user, item);
    }
    return out;
}

void save_interactions(const std::vector<std::pair<std::int64_t, std::int64_t>>& interactions,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_interactions: cannot open " + path);
    for (const auto& [u, i] : interactions) {
        out << u << '\t' << i << '\n';
    }
    if (!out) throw std::runtime_error("save_interactions: write failed for " + path);
}

Dataset split_train_test(const std::vector<std::pair<std::int64_t, std::int64_t>>& interactions,
                         double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("split_train_test: ratio must lie in (0,1)");
    }
    const BipartiteGraph full = build_graph(interactions);

    Rng rng(mix_seed(seed, 0x5b17));
    std::vector<std::pair<int, int>> train_edges;
    std::vector<std::pair<int, int>> test_edges;
    for (int u = 0; u < full.num_users; ++u) {
        std::vector<int> items = full.user_items[u];
        const int h = static_cast<int>(items.size());
        if (h < 2) {
            for (int i : items) train_edges.emplace_back(u, i);
            continue;
        }
        rng.shuffle(items);
        const int n_train =
            std::max(1, static_cast<int>(std::floor(ratio * static_cast<double>(h))));
        for (int t = 0; t < h; ++t) {
            if (t < n_train) {
                train_edges.emplace_back(u, items[t]);
            } else {
                test_edges.emplace_back(u, items[t]);
            }
        }
    }

    Dataset ds;
    ds.graph = make_graph(full.num_users, full.num_items, std::move(train_edges));
    // Preserve the external id maps of the full interaction set.
    ds.graph.user_ids = full.user_ids;
    ds.graph.item_ids = full.item_ids;
    ds.graph.user_index = full.user_index;
    ds.graph.item_index = full.item_index;
    std::sort(test_edges.begin(), test_edges.end());
    ds.test = std::move(test_edges);
    return ds;
}

std::vector<std::pair<std::int64_t, std::int64_t>> synthetic_interactions(
    const SyntheticConfig& cfg) {
    if (cfg.blocks < 2) throw std::invalid_argument("gen_synthetic: blocks must be >= 2");
    if (cfg.num_users < cfg.blocks || cfg.num_items < cfg.blocks) {
        throw std::invalid_argument("gen_synthetic: need at least one user and item per block");
    }
    if (!(cfg.intra_prob >= 0.0 && cfg.intra_prob <= 1.0) ||
        !(cfg.noise_prob >= 0.0 && cfg.noise_prob <= 1.0)) {
        throw std::invalid_argument("gen_synthetic: probabilities must lie in [0,1]");
    }
    Rng rng(mix_seed(cfg.seed, 0x9e4));
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (int u = 0; u < cfg.num_users; ++u) {
        const int ub = static_cast<int>((static_cast<long long>(u) * cfg.blocks) / cfg.num_users);
        for (int i = 0; i < cfg.num_items; ++i) {
            const int ib =
                static_cast<int>((static_cast<long long>(i) * cfg.blocks) / cfg.num_items);
            const double p = ub == ib ? cfg.intra_prob : cfg.noise_prob;
            if (rng.uniform() < p) out.emplace_back(u, i);
        }
    }
    if (out.empty()) {
        throw std::invalid_argument("gen_synthetic: parameters produced no interactions");
    }
    return out;
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
    Dataset ds = split_train_test(synthetic_interactions(cfg), cfg.split_ratio, cfg.seed);
    ds.name = "synthetic";
    return ds;
}

std::string record_to_json(const ExplanationRecord& r) {
    nlohmann::json j;
    j["repeat"] = r.repeat;
    j["user"] = r.user;
    j["item"] = r.item;
    j["method"] = r.method;
    j["mode"] = to_string(r.mode);
    j["valid_surrogate"] = r.valid_surrogate;
    j["valid_blackbox"] = r.valid_blackbox;
    if (r.ec >= 0) {
        j["ec"] = r.ec;
    } else {
        j["ec"] = nullptr;
    }
    j["rank_before"] = r.rank_before;
    if (r.rank_after >= 0) {
        j["rank_after"] = r.rank_after;
    } else {
        j["rank_after"] = nullptr;
    }
    j["iterations"] = r.iterations;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [u, i] : r.edges) edges.push_back({u, i});
    j["edges"] = edges;
    j["note"] = r.note;
    return j.dump();
}

std::string serialize_records(const std::vector<ExplanationRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += record_to_json(r);
        out += '\n';
    }
    return out;
}

namespace {

Aggregate aggregate(const std::vector<double>& per_repeat) {
    Aggregate a;
    a.n_repeats = static_cast<int>(per_repeat.size());
    if (per_repeat.empty()) return a;
    double sum = 0.0;
    for (double v : per_repeat) sum += v;
    a.mean = sum / per_repeat.size();
    if (per_repeat.size() > 1) {
        double ss = 0.0;
        for (double v : per_repeat) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / (per_repeat.size() - 1));
    }
    return a;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<ExplanationRecord>& records) {
    MetricsReport report;

    struct RepeatBucket {
        long long attempts = 0, valid = 0;
        std::vector<double> ec_valid;
    };
    // method -> repeat -> bucket, per mode.
    std::map<std::string, std::map<int, RepeatBucket>> fa, cf;
    std::set<std::pair<int, std::pair<std::int64_t, std::int64_t>>> pairs;
    std::set<std::pair<int, std::pair<std::int64_t, std::int64_t>>> rejected;

    for (const auto& r : records) {
        pairs.insert({r.repeat, {r.user, r.item}});
        if (r.note == "surrogate_rejected") rejected.insert({r.repeat, {r.user, r.item}});
        auto& bucket =
            (r.mode == ExplainMode::FA ? fa : cf)[r.method][r.repeat];
        bucket.attempts += 1;
        if (r.valid_blackbox) {
            bucket.valid += 1;
            bucket.ec_valid.push_back(static_cast<double>(r.ec));
        }
    }

    report.pairs_total = static_cast<long long>(pairs.size());
    report.surrogate_rejected = static_cast<long long>(rejected.size());
    report.surrogate_accepted = report.pairs_total - report.surrogate_rejected;

    auto fill = [](const std::map<int, RepeatBucket>& buckets, Aggregate& rate, Aggregate& ec,
                   long long& attempts, long long& valid) {
        std::vector<double> rates, ecs;
        for (const auto& [rep, b] : buckets) {
            attempts += b.attempts;
            valid += b.valid;
            if (b.attempts > 0) {
                rates.push_back(static_cast<double>(b.valid) / static_cast<double>(b.attempts));
            }
            if (!b.ec_valid.empty()) {
                double s = 0.0;
                for (double v : b.ec_valid) s += v;
                ecs.push_back(s / b.ec_valid.size());
            }
        }
        rate = aggregate(rates);
        ec = aggregate(ecs);
    };

    std::set<std::string> methods;
    for (const auto& [m, _] : fa) methods.insert(m);
    for (const auto& [m, _] : cf) methods.insert(m);
    for (const auto& m : methods) {
        MethodMetrics mm;
        if (auto it = fa.find(m); it != fa.end()) {
            fill(it->second, mm.ps, mm.ec_fa, mm.fa_attempts, mm.fa_valid);
        }
        if (auto it = cf.find(m); it != cf.end()) {
            fill(it->second, mm.pn, mm.ec_cf, mm.cf_attempts, mm.cf_valid);
        }
        report.methods[m] = mm;
    }
    return report;
}

namespace {

std::string cell(const Aggregate& rate, const Aggregate& ec) {
    if (!rate.present()) return "-";
    char buf[96];
    if (ec.present()) {
        std::snprintf(buf, sizeof(buf), "%.2f (+-%.2f)/%.2f (+-%.2f)", rate.mean, rate.stddev,
                      ec.mean, ec.stddev);
    } else {
        std::snprintf(buf, sizeof(buf), "%.2f (+-%.2f)/-", rate.mean, rate.stddev);
    }
    return buf;
}

}  // namespace

std::string format_table(const MetricsReport& report) {
    std::ostringstream out;
    out << "Method          PN(^)/EC(v)                    PS(^)/EC(v)\n";
    for (const auto& [name, mm] : report.methods) {
        char line[192];
        std::snprintf(line, sizeof(line), "%-15s %-30s %-30s\n", name.c_str(),
                      cell(mm.pn, mm.ec_cf).c_str(), cell(mm.ps, mm.ec_fa).c_str());
        out << line;
    }
    out << "pairs: " << report.pairs_total << "  surrogates accepted: " << report.surrogate_accepted
        << "  rejected: " << report.surrogate_rejected << "\n";
    return out.str();
}

int blackbox_rank_under(const LightGCNModel& model, const BipartiteGraph& g, int user, int item,
                        const std::vector<std::pair<int, int>>& explanation_edges,
                        ExplainMode mode) {
    std::set<std::pair<int, int>> edges(g.edges.begin(), g.edges.end());
    if (mode == ExplainMode::CF) {
        for (const auto& e : explanation_edges) edges.erase(e);
    } else {
        // The FA hypothesis graph: anchor-incident edges removed, then the
        // explanation's edges restored.
        for (auto it = edges.begin(); it != edges.end();) {
            if (it->first == user || it->second == item) {
                it = edges.erase(it);
            } else {
                ++it;
            }
        }
        for (const auto& e : explanation_edges) edges.insert(e);
    }
    const std::vector<std::pair<int, int>> edge_list(edges.begin(), edges.end());
    const Eigen::SparseMatrix<double> adj =
        normalized_adjacency(g.num_users, g.num_items, edge_list);
    const Eigen::MatrixXd h = propagate(model, adj);
    return rank_of_from(h, g, user, item, true);
}

namespace {

struct PairTask {
    int repeat;
    int user;  // internal indices
    int item;
    int rank_before;
    std::uint64_t seed;
};

std::vector<ExplanationRecord> run_pair(const ExperimentConfig& cfg, const Dataset& data,
                                        const LightGCNModel& model,
                                        const Eigen::MatrixXd& final_emb, const PairTask& task) {
    const BipartiteGraph& g = data.graph;
    const std::int64_t user_ext = g.user_ids[task.user];
    const std::int64_t item_ext = g.item_ids[task.item];

    auto blank = [&](const std::string& method, ExplainMode mode, const std::string& note) {
        ExplanationRecord r;
        r.repeat = task.repeat;
        r.user = user_ext;
        r.item = item_ext;
        r.method = method;
        r.mode = mode;
        r.rank_before = task.rank_before;
        r.note = note;
        return r;
    };

    std::vector<ExplanationRecord> records;
    const Subgraph sub = l_hop_subgraph(g, task.user, task.item, cfg.subgraph_hops);

    SurrogateConfig scfg;
    scfg.hidden_dim = cfg.surrogate_hidden;
    scfg.epochs = cfg.surrogate_epochs;
    scfg.learning_rate = cfg.surrogate_lr;
    scfg.seed = mix_seed(task.seed, 1);
    scfg.fidelity_threshold = cfg.fidelity_threshold;
    scfg.overlap_threshold = cfg.overlap_threshold;
    scfg.k = cfg.k;

    SurrogateTrainResult surrogate;
    try {
        surrogate = train_surrogate(model.base_embeddings, final_emb, g, sub, scfg);
    } catch (const SurrogateRejected&) {
        for (const auto& method : cfg.methods) {
            records.push_back(blank(method, ExplainMode::FA, "surrogate_rejected"));
            records.push_back(blank(method, ExplainMode::CF, "surrogate_rejected"));
        }
        return records;
    }

    const ScoreContext ctx =
        make_score_context(surrogate.model, g, model.base_embeddings, final_emb, cfg.k);

    // CF needs the item inside the surrogate's unperturbed top-k; checked
    // once so all methods share the outcome.
    const PerturbationState cf_start = init_perturbation(sub, ExplainMode::CF);
    const bool cf_ok = check_hard_mask(ctx, cf_start.start_mask, ExplainMode::CF).rank <= cfg.k;

    for (const auto& method : cfg.methods) {
        for (const ExplainMode mode : {ExplainMode::FA, ExplainMode::CF}) {
            if (mode == ExplainMode::CF && !cf_ok) {
                records.push_back(blank(method, mode, "cf_not_in_topk"));
                continue;
            }
            const int budget = mode == ExplainMode::FA ? cfg.budget_fa : cfg.budget_cf;
            std::optional<ExplanationResult> result;
            try {
                if (method == "grease") {
                    GreaseConfig gcfg;
                    gcfg.iterations = cfg.grease_iterations;
                    gcfg.learning_rate = cfg.grease_lr;
                    gcfg.beta = cfg.beta;
                    gcfg.epsilon = cfg.epsilon;
                    gcfg.k = cfg.k;
                    gcfg.mode = mode;
                    gcfg.budget = budget;
                    result = grease_explain(ctx, gcfg);
                } else if (method == "personalrank") {
                    result = personalrank_explain(ctx, mode, budget, cfg.pr_alpha, cfg.pr_iters);
                } else if (method == "random") {
                    result = random_explain(ctx, mode, budget,
                                            mix_seed(task.seed, mode == ExplainMode::FA ? 2 : 3));
                } else {
                    throw std::invalid_argument("unknown method " + method);
                }
            } catch (const std::exception& e) {
                records.push_back(blank(method, mode, std::string("error:") + e.what()));
                continue;
            }

            ExplanationRecord rec = blank(method, mode, "");
            if (result) {
                rec.valid_surrogate = true;
                rec.ec = result->ec;
                rec.iterations = result->iterations;
                for (const auto& [u, i] : result->edges) {
                    rec.edges.emplace_back(g.user_ids[u], g.item_ids[i]);
                }
                rec.rank_after =
                    blackbox_rank_under(model, g, task.user, task.item, result->edges, mode);
                rec.valid_blackbox = mode == ExplainMode::FA ? rec.rank_after <= cfg.k
                                                             : rec.rank_after > cfg.k;
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const Dataset& data,
                                const LightGCNModel& model) {
    if (!(cfg.user_fraction > 0.0 && cfg.user_fraction <= 1.0)) {
        throw std::invalid_argument("run_experiment: user fraction must lie in (0,1]");
    }
    if (cfg.repeats < 1) throw std::invalid_argument("run_experiment: repeats must be >= 1");
    const BipartiteGraph& g = data.graph;
    if (model.num_users != g.num_users || model.num_items != g.num_items) {
        throw std::invalid_argument("run_experiment: model/dataset node counts differ");
    }

    const Eigen::SparseMatrix<double> adj = normalized_adjacency(g);
    const Eigen::MatrixXd final_emb = propagate(model, adj);

    // Task list is fixed up front so the record stream is independent of
    // worker scheduling.
    std::vector<PairTask> tasks;
    for (int rep = 0; rep < cfg.repeats; ++rep) {
        const std::uint64_t rep_seed = mix_seed(cfg.seed, 0x7e9e + rep);
        std::vector<int> users(g.num_users);
        for (int u = 0; u < g.num_users; ++u) users[u] = u;
        Rng rng(mix_seed(rep_seed, 0xa11));
        rng.shuffle(users);
        const int n_sample = std::max(
            1, static_cast<int>(std::floor(cfg.user_fraction * g.num_users + 0.5)));
        users.resize(std::min<std::size_t>(users.size(), n_sample));
        for (int u : users) {
            const TopKList list = top_k_from(final_emb, g, u, cfg.k, true);
            for (std::size_t pos = 0; pos < list.items.size(); ++pos) {
                PairTask t;
                t.repeat = rep;
                t.user = u;
                t.item = list.items[pos].first;
                t.rank_before = static_cast<int>(pos) + 1;
                t.seed = mix_seed(rep_seed, (static_cast<std::uint64_t>(u) << 20) ^
                                                static_cast<std::uint64_t>(t.item));
                tasks.push_back(t);
            }
        }
    }

    std::vector<std::vector<ExplanationRecord>> slots(tasks.size());
    const int workers = cfg.workers > 0
                            ? cfg.workers
                            : std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= tasks.size()) return;
            slots[t] = run_pair(cfg, data, model, final_emb, tasks[t]);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    ExperimentOutput out;
    for (auto& slot : slots) {
        for (auto& r : slot) out.records.push_back(std::move(r));
    }
    out.report = compute_metrics(out.records);
    return out;
}

}  // namespace grease
