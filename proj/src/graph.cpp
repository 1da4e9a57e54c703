#include "grease/graph.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <stdexcept>
#include <string>

namespace grease {

bool BipartiteGraph::has_edge(int user, int item) const {
    if (user < 0 || user >= num_users) return false;
    const auto& items = user_items[user];
    return std::binary_search(items.begin(), items.end(), item);
}

namespace {

void finalize_adjacency(BipartiteGraph& g) {
    g.user_items.assign(g.num_users, {});
    g.item_users.assign(g.num_items, {});
    for (const auto& [u, i] : g.edges) {
        g.user_items[u].push_back(i);
        g.item_users[i].push_back(u);
    }
    g.user_degrees.resize(g.num_users);
    g.item_degrees.resize(g.num_items);
    for (int u = 0; u < g.num_users; ++u) {
        std::sort(g.user_items[u].begin(), g.user_items[u].end());
        g.user_degrees[u] = static_cast<int>(g.user_items[u].size());
    }
    for (int i = 0; i < g.num_items; ++i) {
        std::sort(g.item_users[i].begin(), g.item_users[i].end());
        g.item_degrees[i] = static_cast<int>(g.item_users[i].size());
    }
}

}  // namespace

BipartiteGraph build_graph(const std::vector<std::pair<std::int64_t, std::int64_t>>& interactions) {
    if (interactions.empty()) {
        throw std::invalid_argument("build_graph: empty interaction list");
    }
    BipartiteGraph g;
    std::set<std::pair<int, int>> seen;
    for (const auto& [user_id, item_id] : interactions) {
        if (user_id < 0 || item_id < 0) {
            throw std::invalid_argument("build_graph: negative id (" + std::to_string(user_id) +
                                        ", " + std::to_string(item_id) + ")");
        }
        auto [uit, u_new] = g.user_index.try_emplace(user_id, g.num_users);
        if (u_new) {
            g.user_ids.push_back(user_id);
            ++g.num_users;
        }
        auto [iit, i_new] = g.item_index.try_emplace(item_id, g.num_items);
        if (i_new) {
            g.item_ids.push_back(item_id);
            ++g.num_items;
        }
        seen.emplace(uit->second, iit->second);
    }
    g.edges.assign(seen.begin(), seen.end());
    finalize_adjacency(g);
    return g;
}

BipartiteGraph make_graph(int num_users, int num_items, std::vector<std::pair<int, int>> edge_list) {
    if (num_users <= 0 || num_items <= 0) {
        throw std::invalid_argument("make_graph: node counts must be positive");
    }
    BipartiteGraph g;
    g.num_users = num_users;
    g.num_items = num_items;
    g.user_ids.resize(num_users);
    g.item_ids.resize(num_items);
    for (int u = 0; u < num_users; ++u) {
        g.user_ids[u] = u;
        g.user_index.emplace(u, u);
    }
    for (int i = 0; i < num_items; ++i) {
        g.item_ids[i] = i;
        g.item_index.emplace(i, i);
    }
    for (const auto& [u, i] : edge_list) {
        if (u < 0 || u >= num_users || i < 0 || i >= num_items) {
            throw std::invalid_argument("make_graph: edge endpoint out of range");
        }
    }
    std::sort(edge_list.begin(), edge_list.end());
    edge_list.erase(std::unique(edge_list.begin(), edge_list.end()), edge_list.end());
    g.edges = std::move(edge_list);
    finalize_adjacency(g);
    return g;
}

Subgraph l_hop_subgraph(const BipartiteGraph& g, int user, int item, int hops) {
    if (user < 0 || user >= g.num_users) {
        throw std::out_of_range("l_hop_subgraph: unknown user " + std::to_string(user));
    }
    if (item < 0 || item >= g.num_items) {
        throw std::out_of_range("l_hop_subgraph: unknown item " + std::to_string(item));
    }
    if (hops < 1) {
        throw std::invalid_argument("l_hop_subgraph: hop count must be >= 1");
    }

    // BFS over the unified node space from both anchors at once; a node is
    // kept when it is within `hops` of either anchor, which equals the union
    // of the two balls.
    const int n_nodes = g.num_nodes();
    std::vector<int> dist(n_nodes, -1);
    std::deque<int> queue;
    const int item_node = g.item_node(item);
    dist[user] = 0;
    queue.push_back(user);
    if (dist[item_node] < 0) {
        dist[item_node] = 0;
        queue.push_back(item_node);
    }
    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        if (dist[v] == hops) continue;
        if (v < g.num_users) {
            for (int i : g.user_items[v]) {
                const int w = g.item_node(i);
                if (dist[w] < 0) {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        } else {
            for (int u : g.item_users[v - g.num_users]) {
                if (dist[u] < 0) {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
    }

    Subgraph s;
    s.anchor_user = user;
    s.anchor_item = item;
    s.hops = hops;
    for (int u = 0; u < g.num_users; ++u) {
        if (dist[u] >= 0) {
            s.user_local.emplace(u, static_cast<int>(s.users.size()));
            s.users.push_back(u);
        }
    }
    for (int i = 0; i < g.num_items; ++i) {
        if (dist[g.item_node(i)] >= 0) {
            s.item_local.emplace(i, static_cast<int>(s.items.size()));
            s.items.push_back(i);
        }
    }
    // Node-induced edge set.
    for (int u : s.users) {
        for (int i : g.user_items[u]) {
            if (s.item_local.count(i)) s.edges.emplace_back(u, i);
        }
    }
    std::sort(s.edges.begin(), s.edges.end());
    return s;
}

RelationalGraph symmetrize(const Subgraph& s) {
    RelationalGraph r;
    r.num_users = s.num_local_users();
    r.num_items = s.num_local_items();
    r.num_undirected_edges = static_cast<int>(s.edges.size());
    r.user_in.assign(r.num_users, {});
    r.item_in.assign(r.num_items, {});
    for (int e = 0; e < r.num_undirected_edges; ++e) {
        const auto& [u, i] = s.edges[e];
        const int ul = s.user_local.at(u);
        const int il = s.item_local.at(i);
        r.user_in[ul].push_back({s.num_local_users() + il, e});  // item -> user
        r.item_in[il].push_back({ul, e});                        // user -> item
    }
    r.user_in_count.resize(r.num_users);
    r.item_in_count.resize(r.num_items);
    for (int u = 0; u < r.num_users; ++u) r.user_in_count[u] = static_cast<int>(r.user_in[u].size());
    for (int i = 0; i < r.num_items; ++i) r.item_in_count[i] = static_cast<int>(r.item_in[i].size());
    return r;
}

std::vector<int> candidate_items(const BipartiteGraph& g, int user, bool exclude_train,
                                 int keep_item) {
    if (user < 0 || user >= g.num_users) {
        throw std::out_of_range("candidate_items: unknown user " + std::to_string(user));
    }
    std::vector<int> out;
    out.reserve(g.num_items);
    for (int i = 0; i < g.num_items; ++i) {
        if (exclude_train && i != keep_item && g.has_edge(user, i)) continue;
        out.push_back(i);
    }
    return out;
}

Eigen::SparseMatrix<double> normalized_adjacency(int num_users, int num_items,
                                                 const std::vector<std::pair<int, int>>& edge_list) {
    const int n = num_users + num_items;
    std::vector<int> user_deg(num_users, 0), item_deg(num_items, 0);
    for (const auto& [u, i] : edge_list) {
        ++user_deg[u];
        ++item_deg[i];
    }
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(2 * edge_list.size());
    for (const auto& [u, i] : edge_list) {
        const double w = 1.0 / std::sqrt(static_cast<double>(user_deg[u]) *
                                         static_cast<double>(item_deg[i]));
        triplets.emplace_back(u, num_users + i, w);
        triplets.emplace_back(num_users + i, u, w);
    }
    Eigen::SparseMatrix<double> adj(n, n);
    adj.setFromTriplets(triplets.begin(), triplets.end());
    return adj;
}

Eigen::SparseMatrix<double> normalized_adjacency(const BipartiteGraph& g) {
    if (g.num_nodes() == 0) {
        throw std::invalid_argument("normalized_adjacency: empty graph");
    }
    return normalized_adjacency(g.num_users, g.num_items, g.edges);
}

}  // namespace grease
