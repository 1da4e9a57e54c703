#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "grease/explainer.hpp"
#include "grease/graph.hpp"

namespace grease {

struct PersonalRankScores {
    std::vector<double> scores;  // non-negative, sums to 1
    double alpha = 0.15;
    int iterations = 0;  // power-iteration steps actually run
    int anchor = -1;
};

// Power iteration of s <- (1-alpha) * W s + alpha * e_anchor with W the
// column-normalized adjacency; mass on dangling nodes is redistributed to
// the anchor. Stops after max_iters steps or when the L1 change drops
// below 1e-8.
PersonalRankScores personal_rank(const std::vector<std::vector<int>>& neighbors, int anchor,
                                 double alpha, int max_iters);

// Local-space adjacency lists of a subgraph (users then items).
std::vector<std::vector<int>> subgraph_adjacency(const Subgraph& s);

// Flips perturbable edges one at a time in descending PersonalRank order of
// the edge endpoint farther from the anchor user, checking the rank
// condition after each flip; first success wins.
std::optional<ExplanationResult> personalrank_explain(const ScoreContext& ctx, ExplainMode mode,
                                                      int budget, double alpha = 0.15,
                                                      int max_iters = 100);

// Same flip loop over a uniformly shuffled edge order.
std::optional<ExplanationResult> random_explain(const ScoreContext& ctx, ExplainMode mode,
                                                int budget, std::uint64_t seed);

}  // namespace grease
