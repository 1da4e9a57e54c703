#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "grease/graph.hpp"
#include "grease/surrogate.hpp"

namespace grease {

enum class ExplainMode { FA, CF };

const char* to_string(ExplainMode mode);

struct GreaseConfig {
    int iterations = 200;       // M
    double learning_rate = 0.01;  // eta
    double beta = 1.0 / 200.0;  // explanation vs distance trade-off
    double epsilon = 0.05;      // indicator relaxation tolerance
    int k = 10;
    ExplainMode mode = ExplainMode::CF;
    int budget = 10;  // max edge cost: 6 for FA, 10 for CF

    static GreaseConfig defaults(ExplainMode mode, int k);
};

// Scoring surface shared by GREASE and the baselines: the anchor user's
// candidate items with frozen black-box base scores; items inside the
// subgraph are re-scored through the surrogate under the active mask, so
// every method is judged by the same scorer.
struct ScoreContext {
    const RGCNSurrogate* surrogate = nullptr;
    const BipartiteGraph* graph = nullptr;
    Eigen::MatrixXd features;       // surrogate inputs, subgraph-local rows
    std::vector<int> candidates;    // ascending global item indices
    std::vector<double> base_scores;
    std::vector<int> candidate_local;  // local item row, or -1 if outside the subgraph
    int anchor_user_local = -1;
    int target_item = -1;  // global
    int target_pos = -1;   // position within candidates
    int k = 10;

    const Subgraph& sub() const { return surrogate->sub; }
};

ScoreContext make_score_context(const RGCNSurrogate& surrogate, const BipartiteGraph& g,
                                const Eigen::MatrixXd& base_embeddings,
                                const Eigen::MatrixXd& final_embeddings, int k);

// One continuous parameter per subgraph edge. CF perturbs every edge
// (deletions from an all-ones start); FA perturbs only anchor-incident
// edges (re-additions from a masked-off start) and freezes the rest at 1.
// No edge absent from the original graph ever exists in any mask.
struct PerturbationState {
    ExplainMode mode = ExplainMode::CF;
    Eigen::VectorXd p_hat;              // meaningful on perturbable entries
    std::vector<std::uint8_t> perturbable;
    Eigen::VectorXd start_mask;         // the mode's starting adjacency mask
    int iteration = 0;

    Eigen::VectorXd continuous_mask() const;  // sigmoid on perturbable entries
    Eigen::VectorXd hard_mask() const;        // 0/1, threshold at p_hat >= 0
};

PerturbationState init_perturbation(const Subgraph& sub, ExplainMode mode);

// max(0, target - min(topk) + eps); the differentiable stand-in for
// "target is in the top-k".
double relaxed_indicator(double target_score, const std::vector<double>& topk_scores, double eps);

// Explanation losses over a full candidate score vector; the top-k set is
// taken from these scores (ties by ascending position, which matches
// ascending item index for context-built candidate lists).
double cf_loss(const std::vector<double>& scores, int target_pos, int k, double eps);
double fa_loss(const std::vector<double>& scores, int target_pos, int k, double eps);

// L1 distance between a mask and the mode's starting mask; equals the edge
// cost when both are binary.
double dist_loss(const Eigen::VectorXd& mask, const Eigen::VectorXd& start_mask);

// Hard thresholding of the continuous parameters: 1 iff sigmoid(p) >= 0.5.
Eigen::VectorXd binarize(const Eigen::VectorXd& p_hat);

// Candidate scores under an explicit mask.
std::vector<double> context_scores(const ScoreContext& ctx, const Eigen::VectorXd& mask);

// 1-based rank of the target among the candidates, ties by ascending
// candidate position.
int rank_of_target(const ScoreContext& ctx, const std::vector<double>& scores);

struct MaskCheck {
    int rank = 0;
    double target_score = 0.0;
    bool success = false;  // FA: rank <= k; CF: rank > k
};

// The one success test every explainer (GREASE and baselines) goes through.
MaskCheck check_hard_mask(const ScoreContext& ctx, const Eigen::VectorXd& hard_mask,
                          ExplainMode mode);

// Continuous GREASE loss L_exp(sigma(p_hat)) + beta * L_dist(sigma(p_hat))
// and its gradient w.r.t. p_hat on perturbable entries (zero elsewhere).
std::pair<double, Eigen::VectorXd> grease_loss_and_gradient(const ScoreContext& ctx,
                                                            const PerturbationState& state,
                                                            const GreaseConfig& cfg);

struct ExplanationResult {
    ExplainMode mode = ExplainMode::CF;
    std::vector<std::pair<int, int>> edges;  // FA: re-added; CF: deleted (global user,item)
    int ec = 0;
    int final_rank = 0;      // surrogate rank of the target under the best mask
    double final_score = 0.0;
    bool valid = false;
    int iterations = 0;      // loop iterations executed
    std::vector<double> loss_trace;
};

// Alg.-1 loop: binarize, rank-check, track the minimal-cost success within
// budget, then one gradient step on the relaxed loss. Returns the best
// explanation found or nullopt. Deterministic given inputs.
std::optional<ExplanationResult> grease_explain(const ScoreContext& ctx, const GreaseConfig& cfg);

}  // namespace grease
