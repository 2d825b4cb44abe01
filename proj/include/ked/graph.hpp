// Weighted undirected graphs and Louvain community detection with a
// resolution parameter. Node visit order is seeded, gain ties break toward
// the lowest community id, and moves are accepted only above a strict gain
// threshold, so runs are reproducible and guaranteed to terminate.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace ked {

struct WeightedGraph {
  struct Edge {
    std::size_t u, v;
    double weight;
  };

  std::size_t node_count = 0;
  std::vector<Edge> edges;  // u < v, weight > 0, each pair at most once

  void validate() const {
    if (node_count == 0) throw std::invalid_argument("graph: needs at least one node");
    std::vector<std::vector<std::size_t>> seen(node_count);
    for (const Edge& e : edges) {
      if (e.u >= e.v) throw std::invalid_argument("graph: edges must satisfy u < v (no self-loops)");
      if (e.v >= node_count) throw std::invalid_argument("graph: edge endpoint out of range");
      if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
        throw std::invalid_argument("graph: edge weights must be finite and positive");
      }
      auto& row = seen[e.u];
      if (std::find(row.begin(), row.end(), e.v) != row.end()) {
        throw std::invalid_argument("graph: duplicate edge");
      }
      row.push_back(e.v);
    }
  }

  // Keeps strictly positive entries of a symmetric dense matrix (upper
  // triangle); exact zeros carry no edge.
  static WeightedGraph from_dense(const std::vector<double>& w, std::size_t dim) {
    if (w.size() != dim * dim) throw std::invalid_argument("graph: dense matrix size mismatch");
    WeightedGraph g;
    g.node_count = dim;
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = i + 1; j < dim; ++j) {
        if (w[i * dim + j] > 0.0) g.edges.push_back({i, j, w[i * dim + j]});
      }
    }
    return g;
  }
};

struct Partition {
  std::vector<std::size_t> community_of;

  std::size_t community_count() const {
    std::size_t mx = 0;
    for (std::size_t c : community_of) mx = std::max(mx, c + 1);
    return mx;
  }

  std::vector<std::vector<std::size_t>> groups() const {
    std::vector<std::vector<std::size_t>> out(community_count());
    for (std::size_t i = 0; i < community_of.size(); ++i) out[community_of[i]].push_back(i);
    return out;
  }

  // Relabels ids contiguously in order of first appearance.
  void normalize() {
    std::size_t mx = 0;
    for (std::size_t c : community_of) mx = std::max(mx, c);
    std::vector<std::size_t> remap(mx + 1, SIZE_MAX);
    std::size_t next = 0;
    for (std::size_t& c : community_of) {
      if (remap[c] == SIZE_MAX) remap[c] = next++;
      c = remap[c];
    }
  }
};

inline Partition singleton_partition(const WeightedGraph& g) {
  Partition p;
  p.community_of.resize(g.node_count);
  std::iota(p.community_of.begin(), p.community_of.end(), 0);
  return p;
}

// Q = sum_c [ S_in(c)/(2m) - gamma (S_tot(c)/(2m))^2 ], defined as zero for
// edgeless graphs. S_in counts intra-community weight twice; S_tot sums the
// weighted degrees of the community's nodes.
inline double modularity(const WeightedGraph& g, const Partition& p, double resolution) {
  if (p.community_of.size() != g.node_count) {
    throw std::invalid_argument("modularity: partition does not cover the graph");
  }
  if (resolution <= 0.0) throw std::invalid_argument("modularity: resolution must be positive");
  const std::size_t n_comms = p.community_count();
  std::vector<double> s_in(n_comms, 0.0), s_tot(n_comms, 0.0);
  double two_m = 0.0;
  for (const auto& e : g.edges) {
    two_m += 2.0 * e.weight;
    s_tot[p.community_of[e.u]] += e.weight;
    s_tot[p.community_of[e.v]] += e.weight;
    if (p.community_of[e.u] == p.community_of[e.v]) s_in[p.community_of[e.u]] += 2.0 * e.weight;
  }
  if (two_m == 0.0) return 0.0;
  double q = 0.0;
  for (std::size_t c = 0; c < n_comms; ++c) {
    const double frac = s_tot[c] / two_m;
    q += s_in[c] / two_m - resolution * frac * frac;
  }
  return q;
}

struct LouvainTrace {
  std::vector<double> phase_modularity;  // on the original graph, after each phase
};

namespace detail {

constexpr double kGainThreshold = 1e-12;

// Aggregated working graph; self-loops appear once communities collapse.
struct WorkGraph {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;  // no self entries
  std::vector<double> self_loop;
  std::vector<double> degree;  // sum of incident weights + 2 * self_loop
  double two_m = 0.0;

  static WorkGraph build(const WeightedGraph& g) {
    WorkGraph w;
    w.n = g.node_count;
    w.adj.resize(w.n);
    w.self_loop.assign(w.n, 0.0);
    w.degree.assign(w.n, 0.0);
    for (const auto& e : g.edges) {
      w.adj[e.u].emplace_back(e.v, e.weight);
      w.adj[e.v].emplace_back(e.u, e.weight);
      w.degree[e.u] += e.weight;
      w.degree[e.v] += e.weight;
    }
    for (double d : w.degree) w.two_m += d;
    return w;
  }
};

// Greedy local moves; returns true when at least one node changed community.
// Gains are the modularity delta scaled by m, which preserves ordering.
inline bool louvain_local_phase(const WorkGraph& g, double resolution,
                                std::vector<std::size_t>& node_comm, std::mt19937_64& rng) {
  std::vector<double> comm_tot(g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) comm_tot[node_comm[i]] += g.degree[i];

  std::vector<std::size_t> order(g.n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> neigh_weight(g.n, -1.0);
  std::vector<std::size_t> touched;
  const double inv_two_m = g.two_m > 0.0 ? 1.0 / g.two_m : 0.0;

  bool any_move = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::size_t u : order) {
      const std::size_t old_comm = node_comm[u];
      for (std::size_t c : touched) neigh_weight[c] = -1.0;
      touched.clear();
      neigh_weight[old_comm] = 0.0;
      touched.push_back(old_comm);
      for (const auto& [v, w] : g.adj[u]) {
        const std::size_t c = node_comm[v];
        if (neigh_weight[c] < 0.0) {
          neigh_weight[c] = 0.0;
          touched.push_back(c);
        }
        neigh_weight[c] += w;
      }
      comm_tot[old_comm] -= g.degree[u];
      std::sort(touched.begin(), touched.end());

      auto gain_of = [&](std::size_t c) {
        return neigh_weight[c] - resolution * g.degree[u] * comm_tot[c] * inv_two_m;
      };
      const double stay_gain = gain_of(old_comm);
      double best_gain = stay_gain;
      std::size_t best_comm = old_comm;
      for (std::size_t c : touched) {
        const double gain = gain_of(c);
        if (gain > best_gain + kGainThreshold) {
          best_gain = gain;
          best_comm = c;
        }
        // Ties keep the earlier (lower, since touched is sorted) community.
      }
      comm_tot[best_comm] += g.degree[u];
      if (best_comm != old_comm) {
        node_comm[u] = best_comm;
        moved = true;
        any_move = true;
      }
    }
  }
  return any_move;
}

}  // namespace detail

// Two-phase Louvain: seeded greedy local moves, then community aggregation,
// repeated until a full phase makes no move. The output is at least as good
// as the all-singletons start.
inline Partition louvain(const WeightedGraph& graph, double resolution, std::uint64_t seed,
                         LouvainTrace* trace = nullptr) {
  graph.validate();
  if (resolution <= 0.0) throw std::invalid_argument("louvain: resolution must be positive");
  std::mt19937_64 rng(seed);

  Partition result = singleton_partition(graph);
  if (trace) trace->phase_modularity.clear();

  detail::WorkGraph work = detail::WorkGraph::build(graph);
  if (work.two_m == 0.0) return result;  // edgeless: everything stays singleton

  // node_of_original[i]: which work-graph node original node i currently is.
  std::vector<std::size_t> node_of_original(graph.node_count);
  std::iota(node_of_original.begin(), node_of_original.end(), 0);

  while (true) {
    std::vector<std::size_t> node_comm(work.n);
    std::iota(node_comm.begin(), node_comm.end(), 0);
    const bool improved = detail::louvain_local_phase(work, resolution, node_comm, rng);
    if (!improved) break;

    // Relabel communities contiguously.
    std::vector<std::size_t> remap(work.n, SIZE_MAX);
    std::size_t next = 0;
    for (std::size_t c : node_comm) {
      if (remap[c] == SIZE_MAX) remap[c] = next++;
    }
    for (std::size_t i = 0; i < graph.node_count; ++i) {
      node_of_original[i] = remap[node_comm[node_of_original[i]]];
      result.community_of[i] = node_of_original[i];
    }
    if (trace) trace->phase_modularity.push_back(modularity(graph, result, resolution));

    // Aggregate: communities become nodes, intra weight becomes self-loops.
    detail::WorkGraph agg;
    agg.n = next;
    agg.adj.resize(next);
    agg.self_loop.assign(next, 0.0);
    agg.degree.assign(next, 0.0);
    std::vector<std::vector<double>> dense(next);  // lazily sized rows
    for (std::size_t u = 0; u < work.n; ++u) {
      const std::size_t cu = remap[node_comm[u]];
      agg.self_loop[cu] += work.self_loop[u];
      for (const auto& [v, w] : work.adj[u]) {
        if (v < u) continue;  // each undirected edge once
        const std::size_t cv = remap[node_comm[v]];
        if (cu == cv) {
          agg.self_loop[cu] += w;
        } else {
          auto& row = dense[std::min(cu, cv)];
          if (row.empty()) row.assign(next, 0.0);
          row[std::max(cu, cv)] += w;
        }
      }
    }
    for (std::size_t u = 0; u < next; ++u) {
      if (dense[u].empty()) continue;
      for (std::size_t v = u + 1; v < next; ++v) {
        if (dense[u][v] > 0.0) {
          agg.adj[u].emplace_back(v, dense[u][v]);
          agg.adj[v].emplace_back(u, dense[u][v]);
          agg.degree[u] += dense[u][v];
          agg.degree[v] += dense[u][v];
        }
      }
    }
    for (std::size_t u = 0; u < next; ++u) agg.degree[u] += 2.0 * agg.self_loop[u];
    agg.two_m = 0.0;
    for (double d : agg.degree) agg.two_m += d;

    if (agg.n == work.n) break;  // no shrink; a further pass cannot move either
    work = std::move(agg);
  }
  result.normalize();
  return result;
}

}  // namespace ked
