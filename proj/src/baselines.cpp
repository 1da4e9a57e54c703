#include "grease/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "grease/rng.hpp"

namespace grease {

PersonalRankScores personal_rank(const std::vector<std::vector<int>>& neighbors, int anchor,
                                 double alpha, int max_iters) {
    const int n = static_cast<int>(neighbors.size());
    if (anchor < 0 || anchor >= n) {
        throw std::out_of_range("personal_rank: anchor not in graph");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("personal_rank: alpha must lie in (0,1)");
    }

    PersonalRankScores out;
    out.alpha = alpha;
    out.anchor = anchor;
    out.scores.assign(n, 0.0);
    out.scores[anchor] = 1.0;

    std::vector<double> next(n, 0.0);
    for (int it = 0; it < max_iters; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        double dangling = 0.0;
        for (int v = 0; v < n; ++v) {
            const double s = out.scores[v];
            if (s == 0.0) continue;
            if (neighbors[v].empty()) {
                dangling += s;
                continue;
            }
            const double share = s / static_cast<double>(neighbors[v].size());
            for (int w : neighbors[v]) next[w] += share;
        }
        for (int v = 0; v < n; ++v) next[v] *= 1.0 - alpha;
        next[anchor] += (1.0 - alpha) * dangling + alpha;

        double change = 0.0;
        for (int v = 0; v < n; ++v) change += std::abs(next[v] - out.scores[v]);
        out.scores.swap(next);
        out.iterations = it + 1;
        if (change < 1e-8) break;
    }
    return out;
}

std::vector<std::vector<int>> subgraph_adjacency(const Subgraph& s) {
    const int nu = s.num_local_users();
    std::vector<std::vector<int>> adj(s.num_local_nodes());
    for (const auto& [u, i] : s.edges) {
        const int ul = s.user_local.at(u);
        const int il = nu + s.item_local.at(i);
        adj[ul].push_back(il);
        adj[il].push_back(ul);
    }
    return adj;
}

namespace {

void check_mode_precondition(const ScoreContext& ctx, ExplainMode mode) {
    if (mode == ExplainMode::CF) {
        const PerturbationState st = init_perturbation(ctx.sub(), ExplainMode::CF);
        const MaskCheck initial = check_hard_mask(ctx, st.start_mask, mode);
        if (initial.rank > ctx.k) {
            throw std::invalid_argument(
                "baseline: CF requires the item inside the unperturbed top-k");
        }
    }
}

// Shared flip loop: walk the given perturbable-edge order, toggling one edge
// per step against the mode's starting mask, re-checking success after each.
std::optional<ExplanationResult> flip_until_success(const ScoreContext& ctx, ExplainMode mode,
                                                    int budget,
                                                    const std::vector<int>& edge_order) {
    check_mode_precondition(ctx, mode);
    if (budget <= 0) return std::nullopt;

    const Subgraph& sub = ctx.sub();
    PerturbationState state = init_perturbation(sub, mode);
    Eigen::VectorXd mask = state.start_mask;
    const double flipped_value = mode == ExplainMode::CF ? 0.0 : 1.0;

    std::vector<std::pair<int, int>> flipped;
    int steps = 0;
    for (int e : edge_order) {
        if (steps >= budget) break;
        mask[e] = flipped_value;
        flipped.push_back(sub.edges[e]);
        ++steps;
        const MaskCheck check = check_hard_mask(ctx, mask, mode);
        if (check.success) {
            ExplanationResult res;
            res.mode = mode;
            res.edges = flipped;
            res.ec = steps;
            res.final_rank = check.rank;
            res.final_score = check.target_score;
            res.valid = true;
            res.iterations = steps;
            return res;
        }
    }
    return std::nullopt;
}

std::vector<int> perturbable_edges(const Subgraph& sub, ExplainMode mode) {
    const PerturbationState st = init_perturbation(sub, mode);
    std::vector<int> out;
    for (int e = 0; e < static_cast<int>(sub.edges.size()); ++e) {
        if (st.perturbable[e]) out.push_back(e);
    }
    return out;
}

}  // namespace

std::optional<ExplanationResult> personalrank_explain(const ScoreContext& ctx, ExplainMode mode,
                                                      int budget, double alpha, int max_iters) {
    const Subgraph& sub = ctx.sub();
    const auto adj = subgraph_adjacency(sub);
    const int anchor = sub.local_user_row(sub.anchor_user);
    const PersonalRankScores pr = personal_rank(adj, anchor, alpha, max_iters);

    // BFS distance from the anchor user picks each edge's priority endpoint:
    // the farther one. Endpoints of an edge always differ in distance parity,
    // so ties only occur when both are unreachable (item endpoint then).
    std::vector<int> dist(adj.size(), std::numeric_limits<int>::max());
    std::deque<int> queue;
    dist[anchor] = 0;
    queue.push_back(anchor);
    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        for (int w : adj[v]) {
            if (dist[w] == std::numeric_limits<int>::max()) {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }

    const int nu = sub.num_local_users();
    std::vector<int> order = perturbable_edges(sub, mode);
    std::vector<int> priority(sub.edges.size(), 0);
    for (int e : order) {
        const auto& [u, i] = sub.edges[e];
        const int ul = sub.user_local.at(u);
        const int il = nu + sub.item_local.at(i);
        priority[e] = dist[il] >= dist[ul] ? il : ul;
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = pr.scores[priority[a]], sb = pr.scores[priority[b]];
        if (sa != sb) return sa > sb;
        if (priority[a] != priority[b]) return priority[a] < priority[b];
        return sub.edges[a] < sub.edges[b];
    });
    return flip_until_success(ctx, mode, budget, order);
}

std::optional<ExplanationResult> random_explain(const ScoreContext& ctx, ExplainMode mode,
                                                int budget, std::uint64_t seed) {
    std::vector<int> order = perturbable_edges(ctx.sub(), mode);
    Rng rng(mix_seed(seed, 0xba5e));
    rng.shuffle(order);
    return flip_until_success(ctx, mode, budget, order);
}

}  // namespace grease
