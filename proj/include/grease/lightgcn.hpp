#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "grease/graph.hpp"

namespace grease {

struct TrainConfig {
    int epochs = 200;
    double learning_rate = 0.001;
    int negatives_per_positive = 1;
    int dim = 32;
    int layers = 3;
    std::uint64_t seed = 0;
};

// Black-box recommender: per-node learnable embeddings propagated through a
// fixed normalized adjacency, scored by dot product. Rows of
// base_embeddings follow the unified node space (users then items).
struct LightGCNModel {
    int num_users = 0;
    int num_items = 0;
    int dim = 0;
    int layers = 0;
    Eigen::MatrixXd base_embeddings;  // (m+n) x d
    // Propagation operator of the training graph; not serialized.
    std::shared_ptr<const Eigen::SparseMatrix<double>> adjacency;

    int item_node(int item) const { return num_users + item; }
};

struct TrainStats {
    std::vector<double> epoch_loss;  // mean BCE per epoch
};

LightGCNModel train_lightgcn(const BipartiteGraph& g, const TrainConfig& cfg,
                             TrainStats* stats = nullptr);

// Layer-mean forward pass: (1/(L+1)) * sum_{l=0..L} adj^l * E0. Pure in
// (base embeddings, adjacency).
Eigen::MatrixXd propagate(const LightGCNModel& model, const Eigen::SparseMatrix<double>& adj);

double score(const LightGCNModel& model, int user, int item,
             const Eigen::SparseMatrix<double>& adj);
double score_from(const Eigen::MatrixXd& embeddings, int num_users, int user, int item);

struct TopKList {
    int user = -1;
    int k = 0;
    std::vector<std::pair<int, double>> items;  // (item index, score), score non-increasing
    bool excluded_train = true;
};

// Ties broken by ascending item index everywhere ranks are computed. When
// exclude_train is set candidates omit the user's training items.
TopKList top_k(const LightGCNModel& model, const BipartiteGraph& g, int user, int k,
               const Eigen::SparseMatrix<double>& adj, bool exclude_train);
TopKList top_k_from(const Eigen::MatrixXd& embeddings, const BipartiteGraph& g, int user, int k,
                    bool exclude_train);

// 1-based position of `item` in the full descending ordering over the
// candidate set. The queried item always counts as a candidate.
int rank_of(const LightGCNModel& model, const BipartiteGraph& g, int user, int item,
            const Eigen::SparseMatrix<double>& adj, bool exclude_train);
int rank_of_from(const Eigen::MatrixXd& embeddings, const BipartiteGraph& g, int user, int item,
                 bool exclude_train);

// Checkpoint layout: magic "GRSE", then u32 little-endian version, m, n, d, L,
// then E0 row-major as little-endian float32.
void save_checkpoint(const LightGCNModel& model, const std::string& path);
LightGCNModel load_checkpoint(const std::string& path);

}  // namespace grease
