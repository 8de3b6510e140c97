// Dependency graphs, adjacency construction, and hard tree pruning.
//
// Token indices are 1-based throughout this module; heads[i] is the 1-based
// head of token i+1 and 0 marks a sentence root. Matrices produced here are
// 0-based (row 0 is token 1).
#pragma once

#include <algorithm>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "aggcn/common.hpp"
#include "aggcn/tensor.hpp"

namespace aggcn {

// FULL (no pruning) when empty; otherwise keep tokens within distance k of
// the entity path union.
using PruneK = std::optional<int>;

struct DependencyGraph {
  std::vector<std::string> tokens;
  std::vector<int> heads;                       // 1-based, 0 = root
  std::vector<std::string> deprels;             // empty or size n
  std::vector<Span> sentence_bounds;            // partition of 1..n
  std::vector<std::pair<int, int>> root_links;  // added by link_sentence_roots

  int size() const { return static_cast<int>(tokens.size()); }

  bool operator==(const DependencyGraph& o) const {
    return tokens == o.tokens && heads == o.heads && deprels == o.deprels &&
           sentence_bounds == o.sentence_bounds && root_links == o.root_links;
  }

  // Undirected neighbor lists over dependency edges plus root links.
  std::vector<std::vector<int>> adjacency_lists() const {
    const int n = size();
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n) + 1);
    for (int i = 1; i <= n; ++i) {
      const int h = heads[static_cast<std::size_t>(i) - 1];
      if (h != 0) {
        adj[static_cast<std::size_t>(i)].push_back(h);
        adj[static_cast<std::size_t>(h)].push_back(i);
      }
    }
    for (const auto& [a, b] : root_links) {
      adj[static_cast<std::size_t>(a)].push_back(b);
      adj[static_cast<std::size_t>(b)].push_back(a);
    }
    return adj;
  }

  // Structural invariants: consistent sizes, bounds partition 1..n, heads in
  // range and within their sentence, exactly one root per sentence, acyclic.
  void validate() const {
    const int n = size();
    if (n < 1) throw structure_error("graph has no tokens");
    if (static_cast<int>(heads.size()) != n) {
      throw structure_error("heads length " + std::to_string(heads.size()) +
                            " != token count " + std::to_string(n));
    }
    if (!deprels.empty() && static_cast<int>(deprels.size()) != n) {
      throw structure_error("deprels length " + std::to_string(deprels.size()) +
                            " != token count " + std::to_string(n));
    }
    if (sentence_bounds.empty()) {
      throw structure_error("no sentence bounds");
    }
    int expect = 1;
    for (const Span& s : sentence_bounds) {
      if (s.start != expect || s.end < s.start || s.end > n) {
        throw structure_error("sentence bounds do not partition 1.." +
                              std::to_string(n));
      }
      expect = s.end + 1;
    }
    if (expect != n + 1) {
      throw structure_error("sentence bounds do not cover 1.." +
                            std::to_string(n));
    }
    for (const Span& s : sentence_bounds) {
      int roots = 0;
      for (int i = s.start; i <= s.end; ++i) {
        const int h = heads[static_cast<std::size_t>(i) - 1];
        if (h < 0 || h > n) {
          throw structure_error("token " + std::to_string(i) + ": head " +
                                std::to_string(h) + " out of range 0.." +
                                std::to_string(n));
        }
        if (h == 0) {
          ++roots;
        } else if (!s.contains(h)) {
          throw structure_error("token " + std::to_string(i) +
                                ": head crosses sentence boundary");
        }
      }
      if (roots != 1) {
        throw structure_error("sentence " + std::to_string(s.start) + ".." +
                              std::to_string(s.end) + " has " +
                              std::to_string(roots) + " roots, expected 1");
      }
      // Cycle check: every token must reach the root by following heads.
      for (int i = s.start; i <= s.end; ++i) {
        int cur = i;
        int steps = 0;
        while (cur != 0) {
          cur = heads[static_cast<std::size_t>(cur) - 1];
          if (++steps > n) {
            throw structure_error("token " + std::to_string(i) +
                                  ": cyclic head chain");
          }
        }
      }
    }
  }
};

// Binary adjacency of a dependency graph: symmetric, unit diagonal.
struct AdjMatrix {
  int n = 0;
  std::vector<double> entries;  // n*n row-major

  double at(int i, int j) const {
    return entries[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                   static_cast<std::size_t>(j)];
  }
  double& at(int i, int j) {
    return entries[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                   static_cast<std::size_t>(j)];
  }

  Tensor to_tensor() const {
    return Tensor::from(static_cast<std::size_t>(n),
                        static_cast<std::size_t>(n), entries, false);
  }
};

namespace detail {

// Parent/depth arrays after rooting the (linked) graph at the first
// sentence's root. Requires the graph to be connected.
struct RootedView {
  std::vector<int> parent;  // 0 for the global root
  std::vector<int> depth;
};

inline RootedView root_graph(const DependencyGraph& g) {
  const int n = g.size();
  const auto adj = g.adjacency_lists();
  int root = 0;
  for (int i = 1; i <= n; ++i) {
    if (g.heads[static_cast<std::size_t>(i) - 1] == 0) {
      root = i;
      break;
    }
  }
  if (root == 0) throw structure_error("graph has no root token");

  RootedView view;
  view.parent.assign(static_cast<std::size_t>(n) + 1, -1);
  view.depth.assign(static_cast<std::size_t>(n) + 1, -1);
  std::queue<int> q;
  q.push(root);
  view.parent[static_cast<std::size_t>(root)] = 0;
  view.depth[static_cast<std::size_t>(root)] = 0;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (view.depth[static_cast<std::size_t>(v)] == -1) {
        view.depth[static_cast<std::size_t>(v)] =
            view.depth[static_cast<std::size_t>(u)] + 1;
        view.parent[static_cast<std::size_t>(v)] = u;
        q.push(v);
      }
    }
  }
  for (int i = 1; i <= n; ++i) {
    if (view.depth[static_cast<std::size_t>(i)] == -1) {
      throw structure_error(
          "graph is not connected; link sentence roots first");
    }
  }
  return view;
}

inline int pairwise_lca(const RootedView& v, int a, int b) {
  while (v.depth[static_cast<std::size_t>(a)] >
         v.depth[static_cast<std::size_t>(b)])
    a = v.parent[static_cast<std::size_t>(a)];
  while (v.depth[static_cast<std::size_t>(b)] >
         v.depth[static_cast<std::size_t>(a)])
    b = v.parent[static_cast<std::size_t>(b)];
  while (a != b) {
    a = v.parent[static_cast<std::size_t>(a)];
    b = v.parent[static_cast<std::size_t>(b)];
  }
  return a;
}

}  // namespace detail

// Joins the trees of consecutive sentences with an undirected edge between
// their roots, yielding one connected tree. Single-sentence graphs are
// returned unchanged.
inline DependencyGraph link_sentence_roots(const DependencyGraph& g) {
  if (g.sentence_bounds.size() <= 1) return g;
  DependencyGraph linked = g;
  linked.root_links.clear();
  std::vector<int> roots;
  for (const Span& s : g.sentence_bounds) {
    int root = 0;
    int count = 0;
    for (int i = s.start; i <= s.end; ++i) {
      if (g.heads[static_cast<std::size_t>(i) - 1] == 0) {
        root = i;
        ++count;
      }
    }
    if (count != 1) {
      throw structure_error("sentence " + std::to_string(s.start) + ".." +
                            std::to_string(s.end) + " has " +
                            std::to_string(count) + " roots, expected 1");
    }
    roots.push_back(root);
  }
  for (std::size_t s = 0; s + 1 < roots.size(); ++s) {
    linked.root_links.emplace_back(roots[s], roots[s + 1]);
  }
  return linked;
}

// A_ij = A_ji = 1 for every edge, diagonal 1, all else 0.
inline AdjMatrix build_adjacency(const DependencyGraph& g) {
  const int n = g.size();
  if (g.sentence_bounds.size() > 1 && g.root_links.empty()) {
    throw structure_error(
        "multi-sentence graph without root links; link sentence roots first");
  }
  AdjMatrix m;
  m.n = n;
  m.entries.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n),
                   0.0);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  const auto adj = g.adjacency_lists();
  for (int i = 1; i <= n; ++i) {
    for (int j : adj[static_cast<std::size_t>(i)]) {
      m.at(i - 1, j - 1) = 1.0;
      m.at(j - 1, i - 1) = 1.0;
    }
  }
  return m;
}

// Lowest common ancestor of a node set, folded pairwise.
inline int lca(const DependencyGraph& g, const std::vector<int>& nodes) {
  if (nodes.empty()) {
    throw contract_error("lca: empty node set");
  }
  for (int x : nodes) {
    if (x < 1 || x > g.size()) {
      throw contract_error("lca: node " + std::to_string(x) + " outside 1.." +
                           std::to_string(g.size()));
    }
  }
  const auto view = detail::root_graph(g);
  int acc = nodes[0];
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    acc = detail::pairwise_lca(view, acc, nodes[i]);
  }
  return acc;
}

// The unique tree path a -> lca(a, b) -> b, endpoints inclusive.
inline std::vector<int> dependency_path(const DependencyGraph& g, int a,
                                        int b) {
  if (a < 1 || a > g.size() || b < 1 || b > g.size()) {
    throw contract_error("dependency_path: endpoint outside 1.." +
                         std::to_string(g.size()));
  }
  const auto view = detail::root_graph(g);
  const int meet = detail::pairwise_lca(view, a, b);
  std::vector<int> path;
  for (int cur = a; cur != meet; cur = view.parent[static_cast<std::size_t>(cur)]) {
    path.push_back(cur);
  }
  path.push_back(meet);
  std::vector<int> tail;
  for (int cur = b; cur != meet; cur = view.parent[static_cast<std::size_t>(cur)]) {
    tail.push_back(cur);
  }
  path.insert(path.end(), tail.rbegin(), tail.rend());
  return path;
}

// The syntactic head token of a span: leftmost token whose head lies outside
// the span.
inline int span_head_token(const DependencyGraph& g, const Span& span) {
  if (span.start < 1 || span.end > g.size() || span.start > span.end) {
    throw contract_error("span [" + std::to_string(span.start) + "," +
                         std::to_string(span.end) + "] outside 1.." +
                         std::to_string(g.size()));
  }
  for (int i = span.start; i <= span.end; ++i) {
    const int h = g.heads[static_cast<std::size_t>(i) - 1];
    if (h == 0 || !span.contains(h)) return i;
  }
  // Unreachable for well-formed trees: some span token's head chain must
  // leave the span.
  throw structure_error("span [" + std::to_string(span.start) + "," +
                        std::to_string(span.end) +
                        "] has no head outside itself");
}

// Path-centric pruning: tokens within tree distance k of the union of
// pairwise dependency paths between entity head tokens. Entity span tokens
// are always kept. k empty = FULL = every node.
inline std::vector<int> prune_tree(const DependencyGraph& g,
                                   const std::vector<Span>& entities,
                                   PruneK k) {
  if (entities.empty()) {
    throw contract_error("prune_tree: empty entity list");
  }
  const int n = g.size();
  if (!k.has_value()) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) all[static_cast<std::size_t>(i) - 1] = i;
    return all;
  }
  if (*k < 0) {
    throw contract_error("prune_tree: k must be >= 0, got " +
                         std::to_string(*k));
  }

  std::vector<int> heads_of_spans;
  heads_of_spans.reserve(entities.size());
  for (const Span& s : entities) heads_of_spans.push_back(span_head_token(g, s));

  std::vector<char> in_base(static_cast<std::size_t>(n) + 1, 0);
  if (heads_of_spans.size() == 1) {
    in_base[static_cast<std::size_t>(heads_of_spans[0])] = 1;
  }
  for (std::size_t i = 0; i < heads_of_spans.size(); ++i) {
    for (std::size_t j = i + 1; j < heads_of_spans.size(); ++j) {
      for (int node : dependency_path(g, heads_of_spans[i], heads_of_spans[j])) {
        in_base[static_cast<std::size_t>(node)] = 1;
      }
    }
  }

  // Multi-source BFS out to distance k.
  const auto adj = g.adjacency_lists();
  std::vector<int> dist(static_cast<std::size_t>(n) + 1, -1);
  std::queue<int> q;
  for (int i = 1; i <= n; ++i) {
    if (in_base[static_cast<std::size_t>(i)]) {
      dist[static_cast<std::size_t>(i)] = 0;
      q.push(i);
    }
  }
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    if (dist[static_cast<std::size_t>(u)] == *k) continue;
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (dist[static_cast<std::size_t>(v)] == -1) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        q.push(v);
      }
    }
  }

  std::set<int> keep;
  for (int i = 1; i <= n; ++i) {
    if (dist[static_cast<std::size_t>(i)] != -1) keep.insert(i);
  }
  for (const Span& s : entities) {
    for (int i = s.start; i <= s.end; ++i) keep.insert(i);
  }
  return {keep.begin(), keep.end()};
}

struct RestrictedGraph {
  DependencyGraph graph;
  std::vector<int> old_to_new;  // size n+1; 0 where dropped
};

// Induced subgraph over a kept node set, renumbered 1..m in original order.
// Kept tokens whose head was dropped become sentence roots.
inline RestrictedGraph restrict_graph(const DependencyGraph& g,
                                      const std::vector<int>& keep) {
  if (keep.empty()) {
    throw contract_error("restrict_graph: empty keep set");
  }
  const int n = g.size();
  std::vector<int> sorted = keep;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.front() < 1 || sorted.back() > n) {
    throw contract_error("restrict_graph: keep set outside 1.." +
                         std::to_string(n));
  }

  RestrictedGraph out;
  out.old_to_new.assign(static_cast<std::size_t>(n) + 1, 0);
  int next = 1;
  for (int old : sorted) out.old_to_new[static_cast<std::size_t>(old)] = next++;

  DependencyGraph& r = out.graph;
  for (int old : sorted) {
    r.tokens.push_back(g.tokens[static_cast<std::size_t>(old) - 1]);
    const int h = g.heads[static_cast<std::size_t>(old) - 1];
    const int mapped = h == 0 ? 0 : out.old_to_new[static_cast<std::size_t>(h)];
    r.heads.push_back(mapped);  // dropped head -> new root
    if (!g.deprels.empty()) {
      r.deprels.push_back(g.deprels[static_cast<std::size_t>(old) - 1]);
    }
  }
  for (const Span& s : g.sentence_bounds) {
    int lo = 0, hi = 0;
    for (int i = s.start; i <= s.end; ++i) {
      const int m = out.old_to_new[static_cast<std::size_t>(i)];
      if (m != 0) {
        if (lo == 0) lo = m;
        hi = m;
      }
    }
    if (lo != 0) r.sentence_bounds.push_back({lo, hi});
  }
  for (const auto& [a, b] : g.root_links) {
    const int ma = out.old_to_new[static_cast<std::size_t>(a)];
    const int mb = out.old_to_new[static_cast<std::size_t>(b)];
    if (ma != 0 && mb != 0) r.root_links.emplace_back(ma, mb);
  }
  r.validate();
  return out;
}

}  // namespace aggcn
