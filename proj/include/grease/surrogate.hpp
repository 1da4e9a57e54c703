#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "grease/graph.hpp"

namespace grease {

struct SurrogateConfig {
    int hidden_dim = 32;
    int epochs = 500;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    // Acceptance gates, both measured on the unperturbed subgraph.
    double fidelity_threshold = 5e-3;  // max acceptable mean per-node MSE
    double overlap_threshold = 0.8;    // min top-k overlap with the black box
    int k = 10;
};

// Two-layer relation-typed graph convolution fitted to one (u,i)
// neighborhood. Layer 1 uses tanh, the output layer is linear. Aggregation
// normalizers come from the unperturbed subgraph and stay constant under
// any mask.
struct RGCNSurrogate {
    int dim_in = 0;
    int dim_hidden = 0;
    int dim_out = 0;
    Eigen::MatrixXd w1_item_user;  // d_in x d_h
    Eigen::MatrixXd w1_user_item;
    Eigen::MatrixXd w1_self;
    Eigen::MatrixXd w2_item_user;  // d_h x d_out
    Eigen::MatrixXd w2_user_item;
    Eigen::MatrixXd w2_self;
    RelationalGraph rel;
    Subgraph sub;  // carries the global<->local index maps
};

struct FidelityReport {
    double mean_node_mse = 0.0;  // squared error averaged over dims, mean over nodes
    double max_node_mse = 0.0;
    double topk_overlap = 0.0;  // anchor-user top-k agreement with the black box
};

struct SurrogateRejected : std::runtime_error {
    explicit SurrogateRejected(FidelityReport r)
        : std::runtime_error("surrogate rejected: fidelity gates not met"), report(r) {}
    FidelityReport report;
};

struct SurrogateTrainResult {
    RGCNSurrogate model;
    FidelityReport report;
    std::vector<double> loss_trace;  // mean per-node MSE per epoch
};

// Fits the surrogate to the black box's final embeddings on the subgraph by
// full-batch gradient descent on the MSE; inputs are the black box's base
// embeddings restricted to subgraph nodes. Throws SurrogateRejected (with
// the measured report) when either fidelity gate fails.
SurrogateTrainResult train_surrogate(const Eigen::MatrixXd& base_embeddings,
                                     const Eigen::MatrixXd& final_embeddings,
                                     const BipartiteGraph& g, const Subgraph& sub,
                                     const SurrogateConfig& cfg);

// Features for the surrogate's rows: base embeddings in subgraph-local order.
Eigen::MatrixXd subgraph_features(const Eigen::MatrixXd& base_embeddings,
                                  const BipartiteGraph& g, const Subgraph& sub);

struct ForwardTrace {
    Eigen::MatrixXd h1;   // post-tanh layer 1 output
    Eigen::MatrixXd out;  // linear layer 2 output
    Eigen::MatrixXd agg1_user, agg1_item;  // masked mean aggregates feeding layer 1
    Eigen::MatrixXd agg2_user, agg2_item;  // same for layer 2
};

// mask holds one entry in [0,1] per undirected subgraph edge; both directed
// copies of an edge share the entry.
ForwardTrace rgcn_forward_trace(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                                const Eigen::MatrixXd& features);
Eigen::MatrixXd rgcn_forward(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                             const Eigen::MatrixXd& features);

struct RgcnGradients {
    Eigen::VectorXd mask;  // d loss / d mask entry
    Eigen::MatrixXd w1_item_user, w1_user_item, w1_self;
    Eigen::MatrixXd w2_item_user, w2_user_item, w2_self;
};

// Analytic backward pass through both layers and the fixed-normalizer
// aggregations. downstream_grad is d(loss)/d(output embedding), same shape
// as the forward output.
RgcnGradients rgcn_backward(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                            const Eigen::MatrixXd& features, const ForwardTrace& trace,
                            const Eigen::MatrixXd& downstream_grad);

Eigen::VectorXd mask_gradient(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                              const Eigen::MatrixXd& features,
                              const Eigen::MatrixXd& downstream_grad);

// Anchor-user scores against candidate items under a given mask: items inside
// the subgraph are re-scored through the surrogate, all others keep their
// frozen base score.
std::vector<double> surrogate_item_scores(const RGCNSurrogate& m, const Eigen::VectorXd& mask,
                                          const Eigen::MatrixXd& features,
                                          const std::vector<int>& candidate_items,
                                          const std::vector<double>& base_scores);

}  // namespace grease
