#pragma once

#include <Eigen/SparseCore>
#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

namespace grease {

// Unified node space convention used by every matrix over nodes:
// users occupy [0, m), items occupy [m, m+n).

// Immutable user-item interaction graph. External ids are mapped to
// contiguous indices in first-seen order; duplicates collapse.
struct BipartiteGraph {
    int num_users = 0;
    int num_items = 0;
    std::vector<std::pair<int, int>> edges;    // (user, item) index pairs, sorted, unique
    std::vector<std::vector<int>> user_items;  // per user, ascending item indices
    std::vector<std::vector<int>> item_users;  // per item, ascending user indices
    std::vector<int> user_degrees;
    std::vector<int> item_degrees;
    std::vector<std::int64_t> user_ids;  // index -> external id
    std::vector<std::int64_t> item_ids;
    std::unordered_map<std::int64_t, int> user_index;  // external id -> index
    std::unordered_map<std::int64_t, int> item_index;

    int num_nodes() const { return num_users + num_items; }
    int item_node(int item) const { return num_users + item; }
    long long num_edges() const { return static_cast<long long>(edges.size()); }
    bool has_edge(int user, int item) const;
};

BipartiteGraph build_graph(const std::vector<std::pair<std::int64_t, std::int64_t>>& interactions);

// Index-space constructor: node counts given up front, ids equal indices.
// Lets callers keep nodes that have no edges (e.g. the train split of a
// dataset whose test half references extra items).
BipartiteGraph make_graph(int num_users, int num_items, std::vector<std::pair<int, int>> edge_list);

// Node-induced subgraph on the union of the l-hop balls around a user and
// an item anchor. Local node layout: users first then items, each ascending
// by global index.
struct Subgraph {
    std::vector<int> users;  // global user indices, ascending
    std::vector<int> items;  // global item indices, ascending
    std::vector<std::pair<int, int>> edges;  // induced, global (user, item), sorted
    std::unordered_map<int, int> user_local;  // global user -> local row
    std::unordered_map<int, int> item_local;  // global item -> local row (within item block)
    int anchor_user = -1;  // global
    int anchor_item = -1;
    int hops = 0;

    int num_local_users() const { return static_cast<int>(users.size()); }
    int num_local_items() const { return static_cast<int>(items.size()); }
    int num_local_nodes() const { return num_local_users() + num_local_items(); }
    // Local rows: users [0, nu), items [nu, nu+ni).
    int local_user_row(int global_user) const { return user_local.at(global_user); }
    int local_item_row(int global_item) const {
        return num_local_users() + item_local.at(global_item);
    }
    bool contains_user(int global_user) const { return user_local.count(global_user) > 0; }
    bool contains_item(int global_item) const { return item_local.count(global_item) > 0; }
};

Subgraph l_hop_subgraph(const BipartiteGraph& g, int user, int item, int hops);

// Relation-typed directed view of a Subgraph: every undirected edge appears
// once per relation (item->user and user->item). Directed edges carry the
// index of their undirected source edge so both copies share a mask slot.
struct RelationalGraph {
    struct InEdge {
        int neighbor;  // local row of the source node
        int edge;      // index into the source Subgraph's edge list
    };
    int num_users = 0;  // local counts
    int num_items = 0;
    int num_undirected_edges = 0;
    std::vector<std::vector<InEdge>> user_in;  // per local user: item->user in-edges
    std::vector<std::vector<InEdge>> item_in;  // per local item: user->item in-edges
    std::vector<int> user_in_count;  // |N(u)| in the unperturbed subgraph
    std::vector<int> item_in_count;

    int num_directed_edges() const { return 2 * num_undirected_edges; }
};

RelationalGraph symmetrize(const Subgraph& s);

// Ranking candidate set for a user: every item, minus the user's training
// interactions when exclude_train is set. keep_item (when >= 0) is always
// retained so a pair under explanation stays rankable.
std::vector<int> candidate_items(const BipartiteGraph& g, int user, bool exclude_train,
                                 int keep_item = -1);

// Symmetric (m+n)x(m+n) propagation operator: entry (v,w) = 1/sqrt(deg(v)deg(w))
// for every interaction edge. Isolated nodes get zero rows (1/sqrt(0) := 0).
Eigen::SparseMatrix<double> normalized_adjacency(const BipartiteGraph& g);

// Same operator for an arbitrary edge subset of g's node space; degrees are
// recomputed from the given edges.
Eigen::SparseMatrix<double> normalized_adjacency(int num_users, int num_items,
                                                 const std::vector<std::pair<int, int>>& edge_list);

}  // namespace grease
