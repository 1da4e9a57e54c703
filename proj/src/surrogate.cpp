#include "grease/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "grease/rng.hpp"

namespace grease {

namespace {

void check_mask(const RGCNSurrogate& m, const Eigen::VectorXd& mask) {
    if (mask.size() != m.rel.num_undirected_edges) {
        throw std::invalid_argument("rgcn: mask length does not match subgraph edge count");
    }
    for (Eigen::Index e = 0; e < mask.size(); ++e) {
        if (!(mask[e] >= 0.0 && mask[e] <= 1.0)) {
            throw std::invalid_argument("rgcn: mask entry outside [0,1]");
        }
    }
}

void check_features(const RGCNSurrogate& m, const Eigen::MatrixXd& x) {
    if (x.rows() != m.rel.num_users + m.rel.num_items || x.cols() != m.dim_in) {
        throw std::invalid_argument("rgcn: feature matrix shape mismatch");
    }
}

// Masked mean aggregation for one layer. Fills per-block aggregate rows;
// normalizers are the unperturbed in-neighbor counts.
void aggregate(const RelationalGraph& rel, const Eigen::VectorXd& mask, const Eigen::MatrixXd& h,
               Eigen::MatrixXd& agg_user, Eigen::MatrixXd& agg_item) {
    const int nu = rel.num_users;
    agg_user.setZero(nu, h.cols());
    agg_item.setZero(rel.num_items, h.cols());
    for (int u = 0; u < nu; ++u) {
        if (rel.user_in_count[u] == 0) continue;
        for (const auto& [nbr, e] : rel.user_in[u]) {
            agg_user.row(u) += mask[e] * h.row(nbr);
        }
        agg_user.row(u) /= static_cast<double>(rel.user_in_count[u]);
    }
    for (int i = 0; i < rel.num_items; ++i) {
        if (rel.item_in_count[i] == 0) continue;
        for (const auto& [nbr, e] : rel.item_in[i]) {
            agg_item.row(i) += mask[e] * h.row(nbr);
        }
        agg_item.row(i) /= static_cast<double>(rel.item_in_count[i]);
    }
}

// Scatter the gradient of the aggregates back onto inputs and mask entries.
void aggregate_backward(const RelationalGraph& rel, const Eigen::VectorXd& mask,
                        const Eigen::MatrixXd& h, const Eigen::MatrixXd& d_agg_user,
                        const Eigen::MatrixXd& d_agg_item, Eigen::MatrixXd& d_h,
                        Eigen::VectorXd& d_mask) {
    const int nu = rel.num_users;
    for (int u = 0; u < nu; ++u) {
        if (rel.user_in_count[u] == 0) continue;
        const double inv = 1.0 / static_cast<double>(rel.user_in_count[u]);
        for (const auto& [nbr, e] : rel.user_in[u]) {
            d_mask[e] += inv * d_agg_user.row(u).dot(h.row(nbr));
            d_h.row(nbr) += (mask[e] * inv) * d_agg_user.row(u);
        }
    }
    for (int i = 0; i < rel.num_items; ++i) {
        if (rel.item_in_count[i] == 0) continue;
        const double inv = 1.0 / static_cast<double>(rel.item_in_count[i]);
        for (const auto& [nbr, e] : rel.item_in[i]) {
            d_mask[e] += inv * d_agg_item.row(i).dot(h.row(nbr));
            d_h.row(nbr) += (mask[e] * inv) * d_agg_item.row(i);
        }
    }
}

Eigen::MatrixXd glorot(Rng& rng, int rows, int cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) w(r, c) = rng.uniform(-limit, limit);
    }
    return w;
}

}  // namespace

ForwardTrace rgcn_forward_trace(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                                const Eigen::MatrixXd& features) {
    check_mask(m, mask);
    check_features(m, features);
    const int nu = m.rel.num_users;
    const int ni = m.rel.num_items;

    ForwardTrace t;
    aggregate(m.rel, mask, features, t.agg1_user, t.agg1_item);
    Eigen::MatrixXd pre1(nu + ni, m.dim_hidden);
    pre1.topRows(nu) = t.agg1_user * m.w1_item_user + features.topRows(nu) * m.w1_self;
    pre1.bottomRows(ni) = t.agg1_item * m.w1_user_item + features.bottomRows(ni) * m.w1_self;
    t.h1 = pre1.array().tanh();

    aggregate(m.rel, mask, t.h1, t.agg2_user, t.agg2_item);
    t.out.resize(nu + ni, m.dim_out);
    t.out.topRows(nu) = t.agg2_user * m.w2_item_user + t.h1.topRows(nu) * m.w2_self;
    t.out.bottomRows(ni) = t.agg2_item * m.w2_user_item + t.h1.bottomRows(ni) * m.w2_self;
    return t;
}

Eigen::MatrixXd rgcn_forward(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                             const Eigen::MatrixXd& features) {
    return rgcn_forward_trace(m, mask, features).out;
}

RgcnGradients rgcn_backward(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                            const Eigen::MatrixXd& features, const ForwardTrace& trace,
                            const Eigen::MatrixXd& downstream_grad) {
    check_mask(m, mask);
    check_features(m, features);
    if (downstream_grad.rows() != trace.out.rows() || downstream_grad.cols() != trace.out.cols()) {
        throw std::invalid_argument("rgcn_backward: downstream gradient shape mismatch");
    }
    const int nu = m.rel.num_users;
    const int ni = m.rel.num_items;

    RgcnGradients g;
    g.mask = Eigen::VectorXd::Zero(mask.size());

    // Layer 2 (linear).
    const auto d_pre2_user = downstream_grad.topRows(nu);
    const auto d_pre2_item = downstream_grad.bottomRows(ni);
    g.w2_item_user = trace.agg2_user.transpose() * d_pre2_user;
    g.w2_user_item = trace.agg2_item.transpose() * d_pre2_item;
    g.w2_self = trace.h1.transpose() * downstream_grad;

    Eigen::MatrixXd d_h1 = downstream_grad * m.w2_self.transpose();
    const Eigen::MatrixXd d_agg2_user = d_pre2_user * m.w2_item_user.transpose();
    const Eigen::MatrixXd d_agg2_item = d_pre2_item * m.w2_user_item.transpose();
    aggregate_backward(m.rel, mask, trace.h1, d_agg2_user, d_agg2_item, d_h1, g.mask);

    // Layer 1 (tanh).
    const Eigen::MatrixXd d_pre1 =
        (d_h1.array() * (1.0 - trace.h1.array().square())).matrix();
    const auto d_pre1_user = d_pre1.topRows(nu);
    const auto d_pre1_item = d_pre1.bottomRows(ni);
    g.w1_item_user = trace.agg1_user.transpose() * d_pre1_user;
    g.w1_user_item = trace.agg1_item.transpose() * d_pre1_item;
    g.w1_self = features.transpose() * d_pre1;

    Eigen::MatrixXd d_h0 = Eigen::MatrixXd::Zero(nu + ni, m.dim_in);  // sink
    const Eigen::MatrixXd d_agg1_user = d_pre1_user * m.w1_item_user.transpose();
    const Eigen::MatrixXd d_agg1_item = d_pre1_item * m.w1_user_item.transpose();
    aggregate_backward(m.rel, mask, features, d_agg1_user, d_agg1_item, d_h0, g.mask);

    return g;
}

Eigen::VectorXd mask_gradient(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                              const Eigen::MatrixXd& features,
                              const Eigen::MatrixXd& downstream_grad) {
    const ForwardTrace trace = rgcn_forward_trace(m, mask, features);
    return rgcn_backward(m, mask, features, trace, downstream_grad).mask;
}

Eigen::MatrixXd subgraph_features(const Eigen::MatrixXd& base_embeddings,
                                  const BipartiteGraph& g, const Subgraph& sub) {
    Eigen::MatrixXd x(sub.num_local_nodes(), base_embeddings.cols());
    int row = 0;
    for (int u : sub.users) x.row(row++) = base_embeddings.row(u);
    for (int i : sub.items) x.row(row++) = base_embeddings.row(g.item_node(i));
    return x;
}

std::vector<double> surrogate_item_scores(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                                          const Eigen::MatrixXd& features,
                                          const std::vector<int>& candidate_items,
                                          const std::vector<double>& base_scores) {
    if (candidate_items.size() != base_scores.size()) {
        throw std::invalid_argument("surrogate_item_scores: candidate/base size mismatch");
    }
    const Eigen::MatrixXd out = rgcn_forward(m, mask, features);
    const int anchor_row = m.sub.local_user_row(m.sub.anchor_user);
    std::vector<double> scores(base_scores);
    for (std::size_t c = 0; c < candidate_items.size(); ++c) {
        const int item = candidate_items[c];
        if (m.sub.contains_item(item)) {
            scores[c] = out.row(anchor_row).dot(out.row(m.sub.local_item_row(item)));
        }
    }
    return scores;
}

SurrogateTrainResult train_surrogate(const Eigen::MatrixXd& base_embeddings,
                                     const Eigen::MatrixXd& final_embeddings,
                                     const BipartiteGraph& g, const Subgraph& sub,
                                     const SurrogateConfig& cfg) {
    if (sub.num_local_nodes() == 0) {
        throw std::invalid_argument("train_surrogate: empty subgraph");
    }
    if (cfg.fidelity_threshold <= 0) {
        throw std::invalid_argument("train_surrogate: fidelity threshold must be > 0");
    }
    if (base_embeddings.rows() != g.num_nodes() || final_embeddings.rows() != g.num_nodes()) {
        throw std::invalid_argument("train_surrogate: embedding row count mismatch");
    }

    const int d = static_cast<int>(base_embeddings.cols());
    RGCNSurrogate m;
    m.dim_in = d;
    m.dim_hidden = cfg.hidden_dim;
    m.dim_out = static_cast<int>(final_embeddings.cols());
    m.sub = sub;
    m.rel = symmetrize(sub);

    Rng rng(mix_seed(cfg.seed, 0x5bc1));
    m.w1_item_user = glorot(rng, d, cfg.hidden_dim);
    m.w1_user_item = glorot(rng, d, cfg.hidden_dim);
    m.w1_self = glorot(rng, d, cfg.hidden_dim);
    m.w2_item_user = glorot(rng, cfg.hidden_dim, m.dim_out);
    m.w2_user_item = glorot(rng, cfg.hidden_dim, m.dim_out);
    m.w2_self = glorot(rng, cfg.hidden_dim, m.dim_out);

    const Eigen::MatrixXd x = subgraph_features(base_embeddings, g, sub);
    Eigen::MatrixXd targets(sub.num_local_nodes(), m.dim_out);
    {
        int row = 0;
        for (int u : sub.users) targets.row(row++) = final_embeddings.row(u);
        for (int i : sub.items) targets.row(row++) = final_embeddings.row(g.item_node(i));
    }

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.rel.num_undirected_edges);
    const double n_nodes = static_cast<double>(sub.num_local_nodes());

    SurrogateTrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const ForwardTrace trace = rgcn_forward_trace(m, ones, x);
        const Eigen::MatrixXd diff = trace.out - targets;
        result.loss_trace.push_back(diff.squaredNorm() / (n_nodes * m.dim_out));

        // Gradient of the node-mean MSE; keeps the step size comparable
        // across subgraph sizes.
        const Eigen::MatrixXd d_out = (2.0 / n_nodes) * diff;
        const RgcnGradients grads = rgcn_backward(m, ones, x, trace, d_out);
        m.w1_item_user -= cfg.learning_rate * grads.w1_item_user;
        m.w1_user_item -= cfg.learning_rate * grads.w1_user_item;
        m.w1_self -= cfg.learning_rate * grads.w1_self;
        m.w2_item_user -= cfg.learning_rate * grads.w2_item_user;
        m.w2_user_item -= cfg.learning_rate * grads.w2_user_item;
        m.w2_self -= cfg.learning_rate * grads.w2_self;
    }

    FidelityReport report;
    const Eigen::MatrixXd out = rgcn_forward(m, ones, x);
    for (int v = 0; v < sub.num_local_nodes(); ++v) {
        const double mse = (out.row(v) - targets.row(v)).squaredNorm() / m.dim_out;
        report.mean_node_mse += mse;
        report.max_node_mse = std::max(report.max_node_mse, mse);
    }
    report.mean_node_mse /= n_nodes;

    // Top-k agreement on the anchor user, candidates under the standard
    // exclusion policy with the anchor item always retained.
    {
        const int u = sub.anchor_user;
        const std::vector<int> cands = candidate_items(g, u, true, sub.anchor_item);
        std::vector<double> base(cands.size());
        for (std::size_t c = 0; c < cands.size(); ++c) {
            base[c] = final_embeddings.row(u).dot(final_embeddings.row(g.item_node(cands[c])));
        }
        const std::vector<double> mixed = surrogate_item_scores(m, ones, x, cands, base);
        const int kk = std::min<int>(cfg.k, static_cast<int>(cands.size()));
        auto top_set = [&](const std::vector<double>& s) {
            std::vector<int> order(cands.size());
            for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (s[a] != s[b]) return s[a] > s[b];
                return cands[a] < cands[b];
            });
            return std::set<int>(order.begin(), order.begin() + kk);
        };
        const std::set<int> bb = top_set(base);
        const std::set<int> sg = top_set(mixed);
        int common = 0;
        for (int c : bb) common += sg.count(c);
        report.topk_overlap = kk > 0 ? static_cast<double>(common) / kk : 1.0;
    }

    result.report = report;
    if (report.mean_node_mse > cfg.fidelity_threshold ||
        report.topk_overlap < cfg.overlap_threshold) {
        throw SurrogateRejected(report);
    }
    result.model = std::move(m);
    return result;
}

}  // namespace grease
