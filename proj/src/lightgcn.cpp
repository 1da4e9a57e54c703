#include "grease/lightgcn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "grease/rng.hpp"

namespace grease {

namespace {

Eigen::MatrixXd layer_mean(const Eigen::MatrixXd& base, const Eigen::SparseMatrix<double>& adj,
                           int layers) {
    Eigen::MatrixXd acc = base;
    Eigen::MatrixXd cur = base;
    for (int l = 0; l < layers; ++l) {
        cur = adj * cur;
        acc += cur;
    }
    return acc / static_cast<double>(layers + 1);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_user(const LightGCNModel& m, int user) {
    if (user < 0 || user >= m.num_users) {
        throw std::out_of_range("lightgcn: unknown user " + std::to_string(user));
    }
}

void check_item(const LightGCNModel& m, int item) {
    if (item < 0 || item >= m.num_items) {
        throw std::out_of_range("lightgcn: unknown item " + std::to_string(item));
    }
}

}  // namespace

Eigen::MatrixXd propagate(const LightGCNModel& model, const Eigen::SparseMatrix<double>& adj) {
    if (adj.rows() != model.base_embeddings.rows() || adj.cols() != adj.rows()) {
        throw std::invalid_argument("propagate: adjacency dimensions do not match node count");
    }
    return layer_mean(model.base_embeddings, adj, model.layers);
}

LightGCNModel train_lightgcn(const BipartiteGraph& g, const TrainConfig& cfg, TrainStats* stats) {
    if (g.edges.empty()) throw std::invalid_argument("train_lightgcn: empty graph");
    if (cfg.epochs < 1) throw std::invalid_argument("train_lightgcn: epochs must be >= 1");
    if (cfg.learning_rate <= 0) throw std::invalid_argument("train_lightgcn: learning rate must be > 0");
    if (cfg.dim < 1) throw std::invalid_argument("train_lightgcn: dim must be >= 1");
    if (cfg.layers < 1) throw std::invalid_argument("train_lightgcn: layers must be >= 1");

    LightGCNModel model;
    model.num_users = g.num_users;
    model.num_items = g.num_items;
    model.dim = cfg.dim;
    model.layers = cfg.layers;
    model.adjacency = std::make_shared<Eigen::SparseMatrix<double>>(normalized_adjacency(g));

    const int n_nodes = g.num_nodes();
    Rng rng(mix_seed(cfg.seed, 0x11f0));
    model.base_embeddings.resize(n_nodes, cfg.dim);
    for (int v = 0; v < n_nodes; ++v) {
        for (int c = 0; c < cfg.dim; ++c) {
            model.base_embeddings(v, c) = rng.uniform(-0.1, 0.1);
        }
    }

    // Adam state over the base embeddings.
    Eigen::MatrixXd adam_m = Eigen::MatrixXd::Zero(n_nodes, cfg.dim);
    Eigen::MatrixXd adam_v = Eigen::MatrixXd::Zero(n_nodes, cfg.dim);
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    const auto& adj = *model.adjacency;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const Eigen::MatrixXd h = layer_mean(model.base_embeddings, adj, cfg.layers);
        Eigen::MatrixXd grad_h = Eigen::MatrixXd::Zero(n_nodes, cfg.dim);
        double loss = 0.0;
        long long terms = 0;

        for (const auto& [u, i] : g.edges) {
            const int pos = g.num_users + i;
            const double s = h.row(u).dot(h.row(pos));
            loss += softplus(-s);
            const double gs = sigmoid(s) - 1.0;
            grad_h.row(u) += gs * h.row(pos);
            grad_h.row(pos) += gs * h.row(u);
            ++terms;

            for (int t = 0; t < cfg.negatives_per_positive; ++t) {
                // Uniform over items the user has not interacted with.
                int neg = -1;
                for (int tries = 0; tries < 1000; ++tries) {
                    const int cand = static_cast<int>(rng.uniform_int(g.num_items));
                    if (!g.has_edge(u, cand)) {
                        neg = cand;
                        break;
                    }
                }
                if (neg < 0) continue;  // user interacted with every item
                const int row = g.num_users + neg;
                const double sn = h.row(u).dot(h.row(row));
                loss += softplus(sn);
                const double gn = sigmoid(sn);
                grad_h.row(u) += gn * h.row(row);
                grad_h.row(row) += gn * h.row(u);
                ++terms;
            }
        }

        loss /= static_cast<double>(terms);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("train_lightgcn: non-finite loss at epoch " +
                                     std::to_string(epoch));
        }
        if (stats) stats->epoch_loss.push_back(loss);

        // The forward map is linear and its operator symmetric, so the
        // adjoint is the same layer-mean propagation.
        Eigen::MatrixXd grad = layer_mean(grad_h, adj, cfg.layers) / static_cast<double>(terms);

        const double t = static_cast<double>(epoch + 1);
        const double corr1 = 1.0 - std::pow(beta1, t);
        const double corr2 = 1.0 - std::pow(beta2, t);
        adam_m = beta1 * adam_m + (1.0 - beta1) * grad;
        adam_v = beta2 * adam_v + (1.0 - beta2) * grad.array().square().matrix();
        model.base_embeddings.array() -=
            cfg.learning_rate * (adam_m.array() / corr1) /
            ((adam_v.array() / corr2).sqrt() + adam_eps);
    }
    return model;
}

double score_from(const Eigen::MatrixXd& embeddings, int num_users, int user, int item) {
    return embeddings.row(user).dot(embeddings.row(num_users + item));
}

double score(const LightGCNModel& model, int user, int item,
             const Eigen::SparseMatrix<double>& adj) {
    check_user(model, user);
    check_item(model, item);
    const Eigen::MatrixXd h = propagate(model, adj);
    return score_from(h, model.num_users, user, item);
}

TopKList top_k_from(const Eigen::MatrixXd& embeddings, const BipartiteGraph& g, int user, int k,
                    bool exclude_train) {
    if (user < 0 || user >= g.num_users) {
        throw std::out_of_range("top_k: unknown user " + std::to_string(user));
    }
    if (k < 1) throw std::invalid_argument("top_k: k must be >= 1");

    std::vector<std::pair<int, double>> scored;
    scored.reserve(g.num_items);
    for (int i = 0; i < g.num_items; ++i) {
        if (exclude_train && g.has_edge(user, i)) continue;
        scored.emplace_back(i, score_from(embeddings, g.num_users, user, i));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int>(scored.size()) > k) scored.resize(k);

    TopKList out;
    out.user = user;
    out.k = k;
    out.items = std::move(scored);
    out.excluded_train = exclude_train;
    return out;
}

TopKList top_k(const LightGCNModel& model, const BipartiteGraph& g, int user, int k,
               const Eigen::SparseMatrix<double>& adj, bool exclude_train) {
    return top_k_from(propagate(model, adj), g, user, k, exclude_train);
}

int rank_of_from(const Eigen::MatrixXd& embeddings, const BipartiteGraph& g, int user, int item,
                 bool exclude_train) {
    if (user < 0 || user >= g.num_users) {
        throw std::out_of_range("rank_of: unknown user " + std::to_string(user));
    }
    if (item < 0 || item >= g.num_items) {
        throw std::out_of_range("rank_of: unknown item " + std::to_string(item));
    }
    const double target = score_from(embeddings, g.num_users, user, item);
    int rank = 1;
    for (int i = 0; i < g.num_items; ++i) {
        if (i == item) continue;
        if (exclude_train && g.has_edge(user, i)) continue;
        const double s = score_from(embeddings, g.num_users, user, i);
        if (s > target || (s == target && i < item)) ++rank;
    }
    return rank;
}

int rank_of(const LightGCNModel& model, const BipartiteGraph& g, int user, int item,
            const Eigen::SparseMatrix<double>& adj, bool exclude_train) {
    return rank_of_from(propagate(model, adj), g, user, item, exclude_train);
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr char kMagic[4] = {'G', 'R', 'S', 'E'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const LightGCNModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(model.num_users));
    put_u32(out, static_cast<std::uint32_t>(model.num_items));
    put_u32(out, static_cast<std::uint32_t>(model.dim));
    put_u32(out, static_cast<std::uint32_t>(model.layers));
    for (int v = 0; v < model.base_embeddings.rows(); ++v) {
        for (int c = 0; c < model.dim; ++c) {
            const float f = static_cast<float>(model.base_embeddings(v, c));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                                  static_cast<unsigned char>((bits >> 8) & 0xff),
                                  static_cast<unsigned char>((bits >> 16) & 0xff),
                                  static_cast<unsigned char>((bits >> 24) & 0xff)};
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

LightGCNModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    LightGCNModel model;
    model.num_users = static_cast<int>(get_u32(in));
    model.num_items = static_cast<int>(get_u32(in));
    model.dim = static_cast<int>(get_u32(in));
    model.layers = static_cast<int>(get_u32(in));
    const long long rows = static_cast<long long>(model.num_users) + model.num_items;
    model.base_embeddings.resize(rows, model.dim);
    for (long long v = 0; v < rows; ++v) {
        for (int c = 0; c < model.dim; ++c) {
            unsigned char b[4];
            in.read(reinterpret_cast<char*>(b), 4);
            if (!in) throw std::runtime_error("checkpoint: truncated embedding data");
            const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                       (static_cast<std::uint32_t>(b[1]) << 8) |
                                       (static_cast<std::uint32_t>(b[2]) << 16) |
                                       (static_cast<std::uint32_t>(b[3]) << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            model.base_embeddings(v, c) = static_cast<double>(f);
        }
    }
    return model;
}

}  // namespace grease
