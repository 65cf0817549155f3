#pragma once

// Three-community weighted social network and the peer-unemployment signal.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pension/csv.hpp"
#include "pension/errors.hpp"
#include "pension/random.hpp"

namespace pension {

enum class Community : std::uint8_t { low = 0, mid = 1, high = 2 };

struct Edge {
  int to = 0;
  double weight = 0.0;
};

struct GraphSpec {
  double p_intra = 0.05;
  double p_inter = 0.005;
  double w_intra = 1.0;
  double w_inter = 0.5;

  void validate() const {
    for (double p : {p_intra, p_inter})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("edge probabilities must lie in [0,1]");
    if (!(w_intra >= 0.0) || !(w_inter >= 0.0)) throw ConfigError("edge weights must be non-negative");
    if (p_intra == 0.0 && p_inter == 0.0)
      throw ConfigError("all edge probabilities are zero; the graph cannot be connected");
  }
};

/// Undirected weighted graph stored as adjacency lists.
class SocialGraph {
 public:
  SocialGraph() = default;
  explicit SocialGraph(std::vector<Community> labels)
      : labels_(std::move(labels)), adjacency_(labels_.size()) {}

  std::size_t size() const { return labels_.size(); }
  Community community(int node) const { return labels_[node]; }
  const std::vector<Community>& communities() const { return labels_; }
  std::span<const Edge> neighbours(int node) const { return adjacency_[node]; }

  double weight(int a, int b) const {
    for (const Edge& e : adjacency_[a])
      if (e.to == b) return e.weight;
    return 0.0;
  }

  /// Adds the edge in both directions. Self-loops and duplicates are rejected.
  void add_edge(int a, int b, double w) {
    if (a == b) throw InvariantViolation("self-loop on node " + std::to_string(a));
    adjacency_[a].push_back({b, w});
    adjacency_[b].push_back({a, w});
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& list : adjacency_) n += list.size();
    return n / 2;
  }

  /// Each undirected edge once, as (src < dst, weight), sorted.
  std::vector<std::tuple<int, int, double>> edges() const {
    std::vector<std::tuple<int, int, double>> out;
    for (std::size_t a = 0; a < adjacency_.size(); ++a)
      for (const Edge& e : adjacency_[a])
        if (static_cast<int>(a) < e.to) out.emplace_back(static_cast<int>(a), e.to, e.weight);
    std::sort(out.begin(), out.end());
    return out;
  }

  void sort_adjacency() {
    for (auto& list : adjacency_)
      std::sort(list.begin(), list.end(), [](const Edge& x, const Edge& y) { return x.to < y.to; });
  }

  bool connected() const {
    if (labels_.empty()) return true;
    std::vector<char> seen(size(), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    std::size_t reached = 1;
    while (!stack.empty()) {
      const int a = stack.back();
      stack.pop_back();
      for (const Edge& e : adjacency_[a])
        if (!seen[e.to]) {
          seen[e.to] = 1;
          ++reached;
          stack.push_back(e.to);
        }
    }
    return reached == size();
  }

 private:
  std::vector<Community> labels_;
  std::vector<std::vector<Edge>> adjacency_;
};

namespace detail {

// Calls visit(k) for each index k in [0, count) kept independently with
// probability p, skipping geometrically between hits.
template <typename Visit>
void bernoulli_indices(std::uint64_t count, double p, Rng& rng, Visit&& visit) {
  if (p <= 0.0 || count == 0) return;
  if (p >= 1.0) {
    for (std::uint64_t k = 0; k < count; ++k) visit(k);
    return;
  }
  const double log_q = std::log1p(-p);
  std::uint64_t k = 0;
  while (true) {
    const double skip = std::floor(std::log(1.0 - rng.uniform()) / log_q);
    if (skip >= static_cast<double>(count - k)) return;
    k += static_cast<std::uint64_t>(skip);
    visit(k);
    ++k;
    if (k >= count) return;
  }
}

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

/// Stochastic block graph over labelled nodes: each pair is joined with
/// p_intra inside a community and p_inter across. Disconnected pieces are then
/// patched together with one random edge each, so every node has a neighbour.
inline SocialGraph build_community_graph(std::vector<Community> labels, const GraphSpec& spec, Rng& rng) {
  spec.validate();
  SocialGraph graph(std::move(labels));
  const std::size_t n = graph.size();
  if (n == 0) return graph;

  std::array<std::vector<int>, 3> members;
  for (std::size_t i = 0; i < n; ++i) members[static_cast<int>(graph.community(static_cast<int>(i)))].push_back(static_cast<int>(i));

  for (int c = 0; c < 3; ++c) {
    const auto& m = members[c];
    const std::uint64_t s = m.size();
    // Pair index k enumerates (i, j), i < j, row by row.
    std::uint64_t row = 0, row_start = 0;
    detail::bernoulli_indices(s * (s - (s > 0 ? 1 : 0)) / 2, spec.p_intra, rng, [&](std::uint64_t k) {
      while (k >= row_start + (s - 1 - row)) {
        row_start += s - 1 - row;
        ++row;
      }
      const std::uint64_t col = row + 1 + (k - row_start);
      graph.add_edge(m[row], m[col], spec.w_intra);
    });
  }
  for (int c1 = 0; c1 < 3; ++c1)
    for (int c2 = c1 + 1; c2 < 3; ++c2) {
      const auto& a = members[c1];
      const auto& b = members[c2];
      detail::bernoulli_indices(static_cast<std::uint64_t>(a.size()) * b.size(), spec.p_inter, rng,
                                [&](std::uint64_t k) { graph.add_edge(a[k / b.size()], b[k % b.size()], spec.w_inter); });
    }

  // Patch: join each component to the union of the ones before it.
  detail::DisjointSets sets(n);
  for (std::size_t a = 0; a < n; ++a)
    for (const Edge& e : graph.neighbours(static_cast<int>(a))) sets.unite(static_cast<int>(a), e.to);
  std::vector<std::vector<int>> components;
  std::vector<int> component_of_root(n, -1);
  for (std::size_t a = 0; a < n; ++a) {
    const int r = sets.find(static_cast<int>(a));
    if (component_of_root[r] < 0) {
      component_of_root[r] = static_cast<int>(components.size());
      components.emplace_back();
    }
    components[component_of_root[r]].push_back(static_cast<int>(a));
  }
  std::vector<int> joined = components.front();
  for (std::size_t k = 1; k < components.size(); ++k) {
    const int x = components[k][rng.below(components[k].size())];
    const int y = joined[rng.below(joined.size())];
    const bool same = graph.community(x) == graph.community(y);
    double w = same ? spec.w_intra : spec.w_inter;
    if (w == 0.0) w = std::max(spec.w_intra, spec.w_inter);
    graph.add_edge(x, y, w);
    joined.insert(joined.end(), components[k].begin(), components[k].end());
  }
  graph.sort_adjacency();
  return graph;
}

/// Nodes [0, sizes[0]) are low income, then mid, then high.
inline SocialGraph build_three_community_graph(std::array<int, 3> sizes, const GraphSpec& spec, Rng& rng) {
  std::vector<Community> labels;
  for (int c = 0; c < 3; ++c) {
    if (sizes[c] < 1) throw ConfigError("each community needs at least one node");
    labels.insert(labels.end(), sizes[c], static_cast<Community>(c));
  }
  return build_community_graph(std::move(labels), spec, rng);
}

/// Income terciles: the lowest third of incomes is `low`, and so on. Ties are
/// broken by index.
inline std::vector<Community> income_terciles(std::span<const double> incomes) {
  const std::size_t n = incomes.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return incomes[a] < incomes[b]; });
  std::vector<Community> labels(n);
  for (std::size_t r = 0; r < n; ++r)
    labels[order[r]] = static_cast<Community>(std::min<std::size_t>(2, (3 * r) / std::max<std::size_t>(n, 1)));
  return labels;
}

/// Peer unemployment signal for every node: the weighted count of unemployed
/// neighbours plus, for every neighbour b, b's own weighted count of
/// unemployed neighbours. Paths are not deduplicated and the 2-hop term
/// includes paths that return to the node itself.
inline std::vector<double> network_observation(const SocialGraph& graph, std::span<const std::uint8_t> employed) {
  if (employed.size() != graph.size())
    throw DimensionError("employment vector has " + std::to_string(employed.size()) + " entries, graph has " +
                         std::to_string(graph.size()) + " nodes");
  const std::size_t n = graph.size();
  std::vector<double> first(n, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (const Edge& e : graph.neighbours(static_cast<int>(b)))
      if (employed[e.to] == 0) first[b] += e.weight;
  std::vector<double> signal(first);
  for (std::size_t a = 0; a < n; ++a)
    for (const Edge& e : graph.neighbours(static_cast<int>(a))) signal[a] += first[e.to];
  return signal;
}

inline void write_edge_list(const SocialGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFault("cannot write '" + path + "'");
  out << "src,dst,weight\n";
  for (const auto& [a, b, w] : graph.edges()) out << a << ',' << b << ',' << csv::format_double(w) << '\n';
}

}  // namespace pension
