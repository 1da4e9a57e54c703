#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "grease/explainer.hpp"
#include "grease/graph.hpp"
#include "grease/lightgcn.hpp"
#include "grease/surrogate.hpp"

namespace grease {

// TSV interaction log: `user_id<TAB>item_id[<TAB>ignored...]`, `#` comments
// skipped. Order preserved; malformed lines reported with their number.
std::vector<std::pair<std::int64_t, std::int64_t>> load_interactions(const std::string& path);
void save_interactions(const std::vector<std::pair<std::int64_t, std::int64_t>>& interactions,
                       const std::string& path);

struct Dataset {
    BipartiteGraph graph;                    // train edges over the full node space
    std::vector<std::pair<int, int>> test;   // held-out (user, item) index pairs
    std::string name;
};

// Seeded per-user split; users keep at least one train item and histories
// shorter than two interactions stay entirely in train.
Dataset split_train_test(const std::vector<std::pair<std::int64_t, std::int64_t>>& interactions,
                         double ratio, std::uint64_t seed);

struct SyntheticConfig {
    int num_users = 200;
    int num_items = 300;
    int blocks = 2;
    double intra_prob = 0.2;   // edge probability inside a (user,item) block pair
    double noise_prob = 0.01;  // edge probability across blocks
    std::uint64_t seed = 0;
    double split_ratio = 0.8;
};

// Planted block structure; users and items are partitioned into contiguous
// blocks and matched by block index.
std::vector<std::pair<std::int64_t, std::int64_t>> synthetic_interactions(
    const SyntheticConfig& cfg);
Dataset gen_synthetic(const SyntheticConfig& cfg);

struct ExperimentConfig {
    int k = 10;
    double user_fraction = 0.10;
    int repeats = 5;
    std::uint64_t seed = 0;
    int subgraph_hops = 2;
    // Surrogate settings (per-pair seeds are derived internally).
    int surrogate_hidden = 32;
    int surrogate_epochs = 500;
    double surrogate_lr = 0.01;
    double fidelity_threshold = 5e-3;
    double overlap_threshold = 0.8;
    // GREASE settings.
    int grease_iterations = 200;
    double grease_lr = 0.01;
    double beta = 1.0 / 200.0;
    double epsilon = 0.05;
    int budget_fa = 6;
    int budget_cf = 10;
    // PersonalRank baseline settings.
    double pr_alpha = 0.15;
    int pr_iters = 100;
    std::vector<std::string> methods = {"grease", "personalrank", "random"};
    int workers = 0;  // 0 = hardware concurrency
};

struct ExplanationRecord {
    int repeat = 0;
    std::int64_t user = 0;  // external ids
    std::int64_t item = 0;
    std::string method;
    ExplainMode mode = ExplainMode::CF;
    bool valid_surrogate = false;  // an explanation was returned (success vs the surrogate)
    bool valid_blackbox = false;   // re-validated through the black box's own propagation
    int ec = -1;                   // -1 when no explanation was returned
    int rank_before = 0;           // black-box rank under the original adjacency
    int rank_after = -1;           // black-box rank under the perturbed adjacency
    int iterations = 0;
    std::vector<std::pair<std::int64_t, std::int64_t>> edges;  // external ids
    std::string note;  // "", "surrogate_rejected", "cf_not_in_topk", "error:..."
};

std::string record_to_json(const ExplanationRecord& r);
std::string serialize_records(const std::vector<ExplanationRecord>& records);  // JSON lines

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample std over repeats
    int n_repeats = 0;
    bool present() const { return n_repeats > 0; }
};

struct MethodMetrics {
    Aggregate ps, pn;        // black-box validity rates over attempts
    Aggregate ec_fa, ec_cf;  // edge cost over black-box-valid explanations
    long long fa_attempts = 0, fa_valid = 0;
    long long cf_attempts = 0, cf_valid = 0;
};

struct MetricsReport {
    std::map<std::string, MethodMetrics> methods;
    long long pairs_total = 0;
    long long surrogate_accepted = 0;
    long long surrogate_rejected = 0;
};

// PS/PN/EC aggregation: per-repeat value first, then mean +- sample std
// across repeats. Cells with zero attempts stay absent rather than zero.
MetricsReport compute_metrics(const std::vector<ExplanationRecord>& records);

std::string format_table(const MetricsReport& report);

struct ExperimentOutput {
    MetricsReport report;
    std::vector<ExplanationRecord> records;
};

// Full protocol: per repeat, sample users, explain every item in their
// top-k with all enabled methods in both modes, validate each returned
// explanation against the black box. Per-pair failures are recorded, never
// fatal. Output is a pure function of (dataset, model, config).
ExperimentOutput run_experiment(const ExperimentConfig& cfg, const Dataset& data,
                                const LightGCNModel& model);

// Black-box revalidation: rebuilds the full-graph adjacency with the
// explanation applied (CF: edges deleted; FA: all anchor-incident edges
// dropped except the re-added set) and re-ranks through the model's own
// propagation.
int blackbox_rank_under(const LightGCNModel& model, const BipartiteGraph& g, int user, int item,
                        const std::vector<std::pair<int, int>>& explanation_edges,
                        ExplainMode mode);

}  // namespace grease
