#include "grease/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace grease {

const char* to_string(ExplainMode mode) { return mode == ExplainMode::FA ? "FA" : "CF"; }

GreaseConfig GreaseConfig::defaults(ExplainMode mode, int k) {
    GreaseConfig cfg;
    cfg.mode = mode;
    cfg.k = k;
    cfg.budget = mode == ExplainMode::FA ? 6 : 10;
    return cfg;
}

ScoreContext make_score_context(const RGCNSurrogate& surrogate, const BipartiteGraph& g,
                                const Eigen::MatrixXd& base_embeddings,
                                const Eigen::MatrixXd& final_embeddings, int k) {
    const Subgraph& sub = surrogate.sub;
    ScoreContext ctx;
    ctx.surrogate = &surrogate;
    ctx.graph = &g;
    ctx.features = subgraph_features(base_embeddings, g, sub);
    ctx.candidates = candidate_items(g, sub.anchor_user, true, sub.anchor_item);
    ctx.base_scores.resize(ctx.candidates.size());
    ctx.candidate_local.resize(ctx.candidates.size());
    for (std::size_t c = 0; c < ctx.candidates.size(); ++c) {
        const int item = ctx.candidates[c];
        ctx.base_scores[c] = final_embeddings.row(sub.anchor_user)
                                 .dot(final_embeddings.row(g.item_node(item)));
        ctx.candidate_local[c] = sub.contains_item(item) ? sub.local_item_row(item) : -1;
        if (item == sub.anchor_item) ctx.target_pos = static_cast<int>(c);
    }
    ctx.anchor_user_local = sub.local_user_row(sub.anchor_user);
    ctx.target_item = sub.anchor_item;
    ctx.k = k;
    return ctx;
}

Eigen::VectorXd PerturbationState::continuous_mask() const {
    Eigen::VectorXd mask = start_mask;
    for (Eigen::Index e = 0; e < p_hat.size(); ++e) {
        if (perturbable[e]) mask[e] = 1.0 / (1.0 + std::exp(-p_hat[e]));
    }
    return mask;
}

Eigen::VectorXd PerturbationState::hard_mask() const {
    Eigen::VectorXd mask = start_mask;
    for (Eigen::Index e = 0; e < p_hat.size(); ++e) {
        if (perturbable[e]) mask[e] = p_hat[e] >= 0.0 ? 1.0 : 0.0;
    }
    return mask;
}

// Continuous parameters start just off the threshold, so the binarized mask
// at iteration 1 is exactly the mode's starting adjacency. The margin must
// stay within reach of eta*M total gradient: per-edge loss gradients measure
// ~0.002-0.02 on trained instances, so only entries under sustained pressure
// cross 0.05 within the loop; anything larger freezes every entry.
constexpr double kInitLogit = 0.05;

PerturbationState init_perturbation(const Subgraph& sub, ExplainMode mode) {
    const int n_edges = static_cast<int>(sub.edges.size());
    PerturbationState st;
    st.mode = mode;
    st.p_hat.resize(n_edges);
    st.perturbable.assign(n_edges, 0);
    st.start_mask.resize(n_edges);
    for (int e = 0; e < n_edges; ++e) {
        const auto& [u, i] = sub.edges[e];
        if (mode == ExplainMode::CF) {
            st.perturbable[e] = 1;
            st.start_mask[e] = 1.0;
            st.p_hat[e] = kInitLogit;
        } else {
            const bool anchor_edge = (u == sub.anchor_user || i == sub.anchor_item);
            st.perturbable[e] = anchor_edge ? 1 : 0;
            st.start_mask[e] = anchor_edge ? 0.0 : 1.0;
            st.p_hat[e] = anchor_edge ? -kInitLogit : kInitLogit;
        }
    }
    return st;
}

double relaxed_indicator(double target_score, const std::vector<double>& topk_scores, double eps) {
    if (topk_scores.empty()) {
        throw std::invalid_argument("relaxed_indicator: empty top-k score list");
    }
    const double m = *std::min_element(topk_scores.begin(), topk_scores.end());
    return std::max(0.0, target_score - m + eps);
}

namespace {

// Position (within `scores`) of the worst member of the top-k set, i.e. the
// entry whose score is the min over the top-k, with ties broken by ascending
// position throughout.
int topk_min_position(const std::vector<double>& scores, int k) {
    const int n = static_cast<int>(scores.size());
    const int kk = std::min(k, n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + (kk - 1), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return order[kk - 1];
}

struct ExpLoss {
    double value = 0.0;
    // Sparse gradient over candidate scores: (position, coefficient).
    std::vector<std::pair<int, double>> dscore;
};

ExpLoss exp_loss_with_grad(ExplainMode mode, const std::vector<double>& scores, int target_pos,
                           int k, double eps) {
    if (scores.empty()) throw std::invalid_argument("exp loss: empty score vector");
    const int min_pos = topk_min_position(scores, k);
    const double target = scores[target_pos];
    const double ind = std::max(0.0, target - scores[min_pos] + eps);

    ExpLoss out;
    if (mode == ExplainMode::CF) {
        out.value = target * ind;
        out.dscore.emplace_back(target_pos, ind);
        if (ind > 0.0) {
            out.dscore.emplace_back(target_pos, target);
            out.dscore.emplace_back(min_pos, -target);
        }
    } else {
        if (ind > 0.0) {
            out.value = -target * ind;
            out.dscore.emplace_back(target_pos, -(ind + target));
            out.dscore.emplace_back(min_pos, target);
        } else {
            // Gradient floor: outside the top-k region the loss reduces to
            // plain score maximization, otherwise FA could never move.
            out.value = -target;
            out.dscore.emplace_back(target_pos, -1.0);
        }
    }
    return out;
}

}  // namespace

double cf_loss(const std::vector<double>& scores, int target_pos, int k, double eps) {
    return exp_loss_with_grad(ExplainMode::CF, scores, target_pos, k, eps).value;
}

double fa_loss(const std::vector<double>& scores, int target_pos, int k, double eps) {
    return exp_loss_with_grad(ExplainMode::FA, scores, target_pos, k, eps).value;
}

double dist_loss(const Eigen::VectorXd& mask, const Eigen::VectorXd& start_mask) {
    if (mask.size() != start_mask.size()) {
        throw std::invalid_argument("dist_loss: mask shape mismatch");
    }
    return (mask - start_mask).cwiseAbs().sum();
}

Eigen::VectorXd binarize(const Eigen::VectorXd& p_hat) {
    Eigen::VectorXd out(p_hat.size());
    for (Eigen::Index e = 0; e < p_hat.size(); ++e) {
        if (!std::isfinite(p_hat[e])) {
            throw std::invalid_argument("binarize: non-finite mask parameter");
        }
        out[e] = p_hat[e] >= 0.0 ? 1.0 : 0.0;
    }
    return out;
}

std::vector<double> context_scores(const ScoreContext& ctx, const Eigen::VectorXd& mask) {
    return surrogate_item_scores(*ctx.surrogate, mask, ctx.features, ctx.candidates,
                                 ctx.base_scores);
}

int rank_of_target(const ScoreContext& ctx, const std::vector<double>& scores) {
    const double target = scores[ctx.target_pos];
    int rank = 1;
    for (int c = 0; c < static_cast<int>(scores.size()); ++c) {
        if (c == ctx.target_pos) continue;
        if (scores[c] > target || (scores[c] == target && c < ctx.target_pos)) ++rank;
    }
    return rank;
}

MaskCheck check_hard_mask(const ScoreContext& ctx, const Eigen::VectorXd& hard_mask,
                          ExplainMode mode) {
    const std::vector<double> scores = context_scores(ctx, hard_mask);
    MaskCheck out;
    out.rank = rank_of_target(ctx, scores);
    out.target_score = scores[ctx.target_pos];
    out.success = mode == ExplainMode::FA ? out.rank <= ctx.k : out.rank > ctx.k;
    return out;
}

std::pair<double, Eigen::VectorXd> grease_loss_and_gradient(const ScoreContext& ctx,
                                                            const PerturbationState& state,
                                                            const GreaseConfig& cfg) {
    const Eigen::VectorXd mask = state.continuous_mask();
    const ForwardTrace trace = rgcn_forward_trace(*ctx.surrogate, mask, ctx.features);

    std::vector<double> scores(ctx.base_scores);
    for (std::size_t c = 0; c < ctx.candidates.size(); ++c) {
        const int row = ctx.candidate_local[c];
        if (row >= 0) {
            scores[c] = trace.out.row(ctx.anchor_user_local).dot(trace.out.row(row));
        }
    }

    const ExpLoss exp = exp_loss_with_grad(cfg.mode, scores, ctx.target_pos, cfg.k, cfg.epsilon);

    // Score gradients flow only through in-subgraph candidates; frozen base
    // scores are constants.
    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(trace.out.rows(), trace.out.cols());
    for (const auto& [pos, coeff] : exp.dscore) {
        const int row = ctx.candidate_local[pos];
        if (row < 0) continue;
        d_out.row(ctx.anchor_user_local) += coeff * trace.out.row(row);
        d_out.row(row) += coeff * trace.out.row(ctx.anchor_user_local);
    }
    const Eigen::VectorXd d_mask =
        rgcn_backward(*ctx.surrogate, mask, ctx.features, trace, d_out).mask;

    double dist = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(state.p_hat.size());
    for (Eigen::Index e = 0; e < state.p_hat.size(); ++e) {
        if (!state.perturbable[e]) continue;
        const double sig = mask[e];
        dist += std::abs(sig - state.start_mask[e]);
        const double d_dist = state.start_mask[e] > 0.5 ? -1.0 : 1.0;
        grad[e] = (d_mask[e] + cfg.beta * d_dist) * sig * (1.0 - sig);
    }
    return {exp.value + cfg.beta * dist, grad};
}

namespace {

void validate(const GreaseConfig& cfg) {
    if (cfg.iterations < 1) throw std::invalid_argument("grease: iterations must be >= 1");
    if (cfg.learning_rate <= 0) throw std::invalid_argument("grease: learning rate must be > 0");
    if (cfg.beta < 0) throw std::invalid_argument("grease: beta must be >= 0");
    if (cfg.epsilon <= 0) throw std::invalid_argument("grease: epsilon must be > 0");
    if (cfg.budget < 1) throw std::invalid_argument("grease: budget must be >= 1");
    if (cfg.k < 1) throw std::invalid_argument("grease: k must be >= 1");
}

int edit_count(const Eigen::VectorXd& hard_mask, const Eigen::VectorXd& start_mask) {
    int ec = 0;
    for (Eigen::Index e = 0; e < hard_mask.size(); ++e) {
        if (hard_mask[e] != start_mask[e]) ++ec;
    }
    return ec;
}

}  // namespace

std::optional<ExplanationResult> grease_explain(const ScoreContext& ctx, const GreaseConfig& cfg) {
    validate(cfg);
    const Subgraph& sub = ctx.sub();
    PerturbationState state = init_perturbation(sub, cfg.mode);

    if (cfg.mode == ExplainMode::CF) {
        const MaskCheck initial = check_hard_mask(ctx, state.start_mask, cfg.mode);
        if (initial.rank > cfg.k) {
            throw std::invalid_argument(
                "grease_explain: CF requires the item inside the unperturbed top-k (rank " +
                std::to_string(initial.rank) + ")");
        }
    }

    int best_ec = std::numeric_limits<int>::max();
    Eigen::VectorXd best_mask;
    MaskCheck best_check;
    int iterations = 0;
    std::vector<double> loss_trace;

    for (int j = 1; j <= cfg.iterations; ++j) {
        iterations = j;
        state.iteration = j;
        const Eigen::VectorXd hard = state.hard_mask();
        const MaskCheck check = check_hard_mask(ctx, hard, cfg.mode);
        const int ec = edit_count(hard, state.start_mask);
        if (check.success && ec <= cfg.budget && ec < best_ec) {
            best_ec = ec;
            best_mask = hard;
            best_check = check;
            if (ec == 0) break;  // cannot improve further
        }
        auto [loss, grad] = grease_loss_and_gradient(ctx, state, cfg);
        loss_trace.push_back(loss);
        state.p_hat -= cfg.learning_rate * grad;
    }

    if (best_ec == std::numeric_limits<int>::max()) return std::nullopt;

    ExplanationResult res;
    res.mode = cfg.mode;
    res.ec = best_ec;
    res.final_rank = best_check.rank;
    res.final_score = best_check.target_score;
    res.valid = true;
    res.iterations = iterations;
    res.loss_trace = std::move(loss_trace);
    for (int e = 0; e < static_cast<int>(sub.edges.size()); ++e) {
        if (best_mask[e] != state.start_mask[e]) res.edges.push_back(sub.edges[e]);
    }
    return res;
}

}  // namespace grease
