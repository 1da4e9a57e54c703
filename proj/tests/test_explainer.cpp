#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "grease/explainer.hpp"
#include "grease/graph.hpp"
#include "grease/rng.hpp"
#include "grease/surrogate.hpp"

using namespace grease;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng, double scale) {
    Eigen::MatrixXd x(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) x(r, c) = rng.uniform(-scale, scale);
    }
    return x;
}

// Self-contained random explanation instance: tiny graph, random-weight
// surrogate, random black-box embedding tables. The context points into the
// owning struct, so instances live behind unique_ptr.
struct ExplainInstance {
    BipartiteGraph g;
    Subgraph sub;
    RGCNSurrogate model;
    Eigen::MatrixXd base_emb;
    Eigen::MatrixXd final_emb;
    ScoreContext ctx;
};

std::unique_ptr<ExplainInstance> random_explain_instance(Rng& rng, int k) {
    auto inst = std::make_unique<ExplainInstance>();
    const int m = 2 + static_cast<int>(rng.uniform_int(3));
    const int n = 3 + static_cast<int>(rng.uniform_int(2));
    std::vector<std::pair<int, int>> edges;
    edges.emplace_back(0, 0);
    for (int u = 0; u < m; ++u) {
        for (int i = 0; i < n; ++i) {
            if (static_cast<int>(edges.size()) >= 12) break;
            if ((u != 0 || i != 0) && rng.uniform() < 0.5) edges.emplace_back(u, i);
        }
    }
    inst->g = make_graph(m, n, edges);
    inst->sub = l_hop_subgraph(inst->g, 0, 0, 4);

    const int d = 2 + static_cast<int>(rng.uniform_int(2));
    const int dh = 2 + static_cast<int>(rng.uniform_int(2));
    inst->model.dim_in = d;
    inst->model.dim_hidden = dh;
    inst->model.dim_out = d;
    inst->model.sub = inst->sub;
    inst->model.rel = symmetrize(inst->sub);
    inst->model.w1_item_user = random_matrix(d, dh, rng, 0.8);
    inst->model.w1_user_item = random_matrix(d, dh, rng, 0.8);
    inst->model.w1_self = random_matrix(d, dh, rng, 0.8);
    inst->model.w2_item_user = random_matrix(dh, d, rng, 0.8);
    inst->model.w2_user_item = random_matrix(dh, d, rng, 0.8);
    inst->model.w2_self = random_matrix(dh, d, rng, 0.8);

    inst->base_emb = random_matrix(inst->g.num_nodes(), d, rng, 1.0);
    inst->final_emb = random_matrix(inst->g.num_nodes(), d, rng, 1.0);
    inst->ctx = make_score_context(inst->model, inst->g, inst->base_emb, inst->final_emb, k);
    return inst;
}

Eigen::VectorXd mask_from_edges(const Subgraph& sub, const Eigen::VectorXd& start,
                                const std::vector<std::pair<int, int>>& flipped,
                                ExplainMode mode) {
    Eigen::VectorXd mask = start;
    const double value = mode == ExplainMode::CF ? 0.0 : 1.0;
    for (const auto& edge : flipped) {
        for (int e = 0; e < static_cast<int>(sub.edges.size()); ++e) {
            if (sub.edges[e] == edge) mask[e] = value;
        }
    }
    return mask;
}

// Exhaustive search over deletion subsets of size <= budget; returns the
// smallest success size, or -1.
int exhaustive_min_cf(const ScoreContext& ctx, int budget) {
    const Subgraph& sub = ctx.sub();
    const int n_edges = static_cast<int>(sub.edges.size());
    const PerturbationState st = init_perturbation(sub, ExplainMode::CF);
    for (int size = 1; size <= budget; ++size) {
        std::vector<int> pick(size);
        std::function<bool(int, int)> rec = [&](int start, int depth) -> bool {
            if (depth == size) {
                Eigen::VectorXd mask = st.start_mask;
                for (int p : pick) mask[p] = 0.0;
                return check_hard_mask(ctx, mask, ExplainMode::CF).success;
            }
            for (int e = start; e < n_edges; ++e) {
                pick[depth] = e;
                if (rec(e + 1, depth + 1)) return true;
            }
            return false;
        };
        if (rec(0, 0)) return size;
    }
    return -1;
}

}  // namespace

TEST_CASE("relaxed indicator formula") {
    CHECK(relaxed_indicator(0.9, {0.5, 0.7}, 0.05) == doctest::Approx(0.45));
    CHECK(relaxed_indicator(0.3, {0.6, 0.9}, 0.05) == 0.0);
    CHECK(relaxed_indicator(0.55, {0.6}, 0.05) == doctest::Approx(0.0));  // target = min - eps
    CHECK_THROWS_AS(relaxed_indicator(0.5, {}, 0.05), std::invalid_argument);
}

TEST_CASE("cf_loss evaluates the relaxed product") {
    SUBCASE("inside the top-k") {
        const std::vector<double> scores{0.8, 0.6, 0.3};
        CHECK(cf_loss(scores, 0, 2, 0.05) == doctest::Approx(0.8 * 0.25));
    }
    SUBCASE("already evicted by more than eps") {
        const std::vector<double> scores{0.3, 0.9, 0.8};
        CHECK(cf_loss(scores, 0, 2, 0.05) == 0.0);
    }
    SUBCASE("hand-built four-item instance") {
        // target 0.5 at position 1, k=2: top-2 = {0.7, 0.5}, min = 0.5,
        // indicator = 0.05, loss = 0.5 * 0.05.
        const std::vector<double> scores{0.7, 0.5, 0.45, 0.2};
        CHECK(cf_loss(scores, 1, 2, 0.05) == doctest::Approx(0.5 * 0.05));
    }
}

TEST_CASE("fa_loss with the gradient floor") {
    SUBCASE("outside the top-k the loss is plain score maximization") {
        const std::vector<double> scores{0.2, 0.9, 0.7};
        CHECK(fa_loss(scores, 0, 2, 0.05) == doctest::Approx(-0.2));
    }
    SUBCASE("inside the top-k the paper product applies") {
        const std::vector<double> scores{0.9, 0.5, 0.3};
        CHECK(fa_loss(scores, 0, 2, 0.05) == doctest::Approx(-0.405));
    }
    SUBCASE("raising the target score never increases the loss within a branch") {
        // Scores live in [0,1] (the scorer's codomain). The floor makes the
        // loss jump at the indicator boundary, so monotonicity is asserted
        // for pairs that stay on one side of it.
        Rng rng(64);
        int compared = 0;
        for (int trial = 0; trial < 400; ++trial) {
            std::vector<double> scores;
            for (int c = 0; c < 5; ++c) scores.push_back(rng.uniform(0, 1));
            const int k = 1 + static_cast<int>(rng.uniform_int(4));
            auto indicator_positive = [&](const std::vector<double>& s) {
                std::vector<double> sorted = s;
                std::sort(sorted.begin(), sorted.end(), std::greater<>());
                return s[0] - sorted[std::min<std::size_t>(k, s.size()) - 1] + 0.05 > 0.0;
            };
            std::vector<double> raised = scores;
            raised[0] += rng.uniform(0.0, 0.5);
            if (indicator_positive(scores) != indicator_positive(raised)) continue;
            ++compared;
            CHECK(fa_loss(raised, 0, k, 0.05) <= fa_loss(scores, 0, k, 0.05) + 1e-12);
        }
        CHECK(compared >= 200);
    }
}

TEST_CASE("dist_loss counts deviations from the starting mask") {
    Eigen::VectorXd start(3), mask(3);
    start << 1, 1, 1;
    mask << 1, 1, 1;
    CHECK(dist_loss(mask, start) == 0.0);
    mask << 0, 1, 0;
    CHECK(dist_loss(mask, start) == 2.0);
    Eigen::VectorXd fa_start(4), fa_mask(4);
    fa_start << 0, 0, 0, 0;
    fa_mask << 0, 1, 0, 0;
    CHECK(dist_loss(fa_mask, fa_start) == 1.0);
    Eigen::VectorXd bad(2);
    CHECK_THROWS_AS(dist_loss(bad, start), std::invalid_argument);
}

TEST_CASE("binarize thresholds at zero") {
    Eigen::VectorXd p(3);
    p << 0.0, -1.0, 3.0;
    const Eigen::VectorXd b = binarize(p);
    CHECK(b[0] == 1.0);  // sigmoid(0) = 0.5, >= rule
    CHECK(b[1] == 0.0);
    CHECK(b[2] == 1.0);
    p[1] = std::nan("");
    CHECK_THROWS_AS(binarize(p), std::invalid_argument);
}

TEST_CASE("perturbation state init respects the mode") {
    const BipartiteGraph g = make_graph(3, 3, {{0, 0}, {0, 1}, {1, 1}, {2, 2}, {2, 0}, {1, 0}});
    const Subgraph sub = l_hop_subgraph(g, 0, 0, 4);
    SUBCASE("CF: everything perturbable from an all-ones start") {
        const PerturbationState st = init_perturbation(sub, ExplainMode::CF);
        for (int e = 0; e < static_cast<int>(sub.edges.size()); ++e) {
            CHECK(st.perturbable[e] == 1);
            CHECK(st.start_mask[e] == 1.0);
            CHECK(st.hard_mask()[e] == 1.0);
        }
    }
    SUBCASE("FA: only anchor-incident edges perturbable, masked off") {
        const PerturbationState st = init_perturbation(sub, ExplainMode::FA);
        for (int e = 0; e < static_cast<int>(sub.edges.size()); ++e) {
            const auto& [u, i] = sub.edges[e];
            const bool anchor = u == 0 || i == 0;
            CHECK(st.perturbable[e] == (anchor ? 1 : 0));
            CHECK(st.start_mask[e] == (anchor ? 0.0 : 1.0));
        }
        const Eigen::VectorXd cont = st.continuous_mask();
        for (int e = 0; e < cont.size(); ++e) {
            CHECK(cont[e] >= 0.0);
            CHECK(cont[e] <= 1.0);
        }
    }
}

TEST_CASE("full loss gradient matches central finite differences") {
    Rng rng(4242);
    const double h = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto inst = random_explain_instance(rng, 2);
        const ExplainMode mode = trial % 2 == 0 ? ExplainMode::CF : ExplainMode::FA;
        GreaseConfig cfg = GreaseConfig::defaults(mode, 2);
        PerturbationState st = init_perturbation(inst->sub, mode);
        bool any = false;
        for (Eigen::Index e = 0; e < st.p_hat.size(); ++e) {
            if (st.perturbable[e]) {
                st.p_hat[e] = rng.uniform(-2.0, 2.0);
                any = true;
            }
        }
        if (!any) continue;
        ++checked;
        const auto [loss, grad] = grease_loss_and_gradient(inst->ctx, st, cfg);
        CHECK(std::isfinite(loss));
        for (Eigen::Index e = 0; e < st.p_hat.size(); ++e) {
            PerturbationState up = st, down = st;
            up.p_hat[e] += h;
            down.p_hat[e] -= h;
            const double numeric = (grease_loss_and_gradient(inst->ctx, up, cfg).first -
                                    grease_loss_and_gradient(inst->ctx, down, cfg).first) /
                                   (2.0 * h);
            const double rel = std::abs(grad[e] - numeric) / (std::abs(grad[e]) + 1e-8);
            CHECK(rel < 1e-4);
        }
    }
    CHECK(checked >= 40);
}

TEST_CASE("grease FA returns an EC-0 result when the start already succeeds") {
    Rng rng(808);
    int found = 0;
    for (int trial = 0; trial < 80 && found < 3; ++trial) {
        auto inst = random_explain_instance(rng, 3);
        const PerturbationState st = init_perturbation(inst->sub, ExplainMode::FA);
        if (!check_hard_mask(inst->ctx, st.start_mask, ExplainMode::FA).success) continue;
        ++found;
        GreaseConfig cfg = GreaseConfig::defaults(ExplainMode::FA, 3);
        const auto res = grease_explain(inst->ctx, cfg);
        REQUIRE(res.has_value());
        CHECK(res->ec == 0);
        CHECK(res->edges.empty());
        CHECK(res->iterations == 1);
        CHECK(res->valid);
    }
    CHECK(found >= 3);
}

TEST_CASE("grease CF finds a single deletion whenever one exists (tiny instances)") {
    Rng rng(616);
    int qualifying = 0;
    for (int trial = 0; trial < 120 && qualifying < 8; ++trial) {
        auto inst = random_explain_instance(rng, 2);
        const PerturbationState st = init_perturbation(inst->sub, ExplainMode::CF);
        if (check_hard_mask(inst->ctx, st.start_mask, ExplainMode::CF).rank > 2) continue;
        if (exhaustive_min_cf(inst->ctx, 1) != 1) continue;
        ++qualifying;
        GreaseConfig cfg = GreaseConfig::defaults(ExplainMode::CF, 2);
        const auto res = grease_explain(inst->ctx, cfg);
        REQUIRE(res.has_value());
        CHECK(res->ec == 1);
        CHECK(res->valid);
    }
    CHECK(qualifying >= 8);
}

TEST_CASE("grease CF with budget 1 returns none when no single deletion works") {
    Rng rng(929);
    int qualifying = 0;
    for (int trial = 0; trial < 150 && qualifying < 5; ++trial) {
        auto inst = random_explain_instance(rng, 2);
        const PerturbationState st = init_perturbation(inst->sub, ExplainMode::CF);
        if (check_hard_mask(inst->ctx, st.start_mask, ExplainMode::CF).rank > 2) continue;
        if (exhaustive_min_cf(inst->ctx, 1) != -1) continue;
        ++qualifying;
        GreaseConfig cfg = GreaseConfig::defaults(ExplainMode::CF, 2);
        cfg.budget = 1;
        CHECK_FALSE(grease_explain(inst->ctx, cfg).has_value());
    }
    CHECK(qualifying >= 5);
}

TEST_CASE("grease CF rejects targets outside the unperturbed top-k") {
    Rng rng(747);
    for (int trial = 0; trial < 60; ++trial) {
        auto inst = random_explain_instance(rng, 1);
        const PerturbationState st = init_perturbation(inst->sub, ExplainMode::CF);
        if (check_hard_mask(inst->ctx, st.start_mask, ExplainMode::CF).rank <= 1) continue;
        GreaseConfig cfg = GreaseConfig::defaults(ExplainMode::CF, 1);
        CHECK_THROWS_AS(grease_explain(inst->ctx, cfg), std::invalid_argument);
        return;
    }
    FAIL("no qualifying instance");
}

TEST_CASE("returned explanations re-validate, respect budgets, and stay in bounds") {
    Rng rng(5150);
    int validated = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto inst = random_explain_instance(rng, 2);
        for (const ExplainMode mode : {ExplainMode::FA, ExplainMode::CF}) {
            const PerturbationState st = init_perturbation(inst->sub, mode);
            if (mode == ExplainMode::CF &&
                check_hard_mask(inst->ctx, st.start_mask, mode).rank > 2) {
                continue;
            }
            GreaseConfig cfg = GreaseConfig::defaults(mode, 2);
            cfg.iterations = 120;
            const auto res = grease_explain(inst->ctx, cfg);
            if (!res) continue;
            ++validated;
            CHECK(res->ec <= cfg.budget);
            CHECK(res->ec == static_cast<int>(res->edges.size()));

            // Replay through the shared success check.
            const Eigen::VectorXd mask =
                mask_from_edges(inst->sub, st.start_mask, res->edges, mode);
            const MaskCheck replay = check_hard_mask(inst->ctx, mask, mode);
            CHECK(replay.success);
            CHECK(replay.rank == res->final_rank);

            // Edge-set sanity: CF deletes original subgraph edges; FA only
            // re-adds anchor-incident original edges.
            for (const auto& [u, i] : res->edges) {
                CHECK(inst->g.has_edge(u, i));
                if (mode == ExplainMode::FA) {
                    CHECK((u == inst->sub.anchor_user || i == inst->sub.anchor_item));
                }
            }
        }
    }
    CHECK(validated >= 20);
}

TEST_CASE("grease tracks the minimal-EC success across iterations") {
    // Independent replay of the loop with the public pieces; the returned
    // EC must equal the replayed minimum over successful iterations.
    Rng rng(2718);
    int compared = 0;
    for (int trial = 0; trial < 40; ++trial) {
        auto inst = random_explain_instance(rng, 2);
        for (const ExplainMode mode : {ExplainMode::FA, ExplainMode::CF}) {
            PerturbationState st = init_perturbation(inst->sub, mode);
            if (mode == ExplainMode::CF &&
                check_hard_mask(inst->ctx, st.start_mask, mode).rank > 2) {
                continue;
            }
            GreaseConfig cfg = GreaseConfig::defaults(mode, 2);
            cfg.iterations = 60;

            int replay_best = -1;
            for (int j = 1; j <= cfg.iterations; ++j) {
                const Eigen::VectorXd hard = st.hard_mask();
                const MaskCheck check = check_hard_mask(inst->ctx, hard, mode);
                int ec = 0;
                for (Eigen::Index e = 0; e < hard.size(); ++e) {
                    if (hard[e] != st.start_mask[e]) ++ec;
                }
                if (check.success && ec <= cfg.budget && (replay_best < 0 || ec < replay_best)) {
                    replay_best = ec;
                    if (ec == 0) break;
                }
                const auto [loss, grad] = grease_loss_and_gradient(inst->ctx, st, cfg);
                (void)loss;
                st.p_hat -= cfg.learning_rate * grad;
            }

            const auto res = grease_explain(inst->ctx, cfg);
            if (replay_best < 0) {
                CHECK_FALSE(res.has_value());
            } else {
                REQUIRE(res.has_value());
                CHECK(res->ec == replay_best);
                ++compared;
            }
        }
    }
    CHECK(compared >= 10);
}

TEST_CASE("grease is deterministic") {
    Rng rng(111);
    for (int trial = 0; trial < 30; ++trial) {
        auto inst = random_explain_instance(rng, 2);
        const PerturbationState st = init_perturbation(inst->sub, ExplainMode::CF);
        if (check_hard_mask(inst->ctx, st.start_mask, ExplainMode::CF).rank > 2) continue;
        GreaseConfig cfg = GreaseConfig::defaults(ExplainMode::CF, 2);
        const auto a = grease_explain(inst->ctx, cfg);
        const auto b = grease_explain(inst->ctx, cfg);
        CHECK(a.has_value() == b.has_value());
        if (a && b) {
            CHECK(a->edges == b->edges);
            CHECK(a->ec == b->ec);
            CHECK(a->loss_trace == b->loss_trace);
        }
        return;
    }
    FAIL("no qualifying instance");
}

TEST_CASE("grease validates its config") {
    Rng rng(222);
    auto inst = random_explain_instance(rng, 2);
    GreaseConfig cfg = GreaseConfig::defaults(ExplainMode::FA, 2);
    cfg.iterations = 0;
    CHECK_THROWS_AS(grease_explain(inst->ctx, cfg), std::invalid_argument);
    cfg = GreaseConfig::defaults(ExplainMode::FA, 2);
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(grease_explain(inst->ctx, cfg), std::invalid_argument);
    cfg = GreaseConfig::defaults(ExplainMode::FA, 2);
    cfg.budget = 0;
    CHECK_THROWS_AS(grease_explain(inst->ctx, cfg), std::invalid_argument);
}
