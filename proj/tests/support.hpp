#pragma once

// Hand-rolled generators and brute-force helpers shared by the unit tests.

#include "diffalign/graph.hpp"
#include "diffalign/rng.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace testing {

using diffalign::Alphabet;
using diffalign::Graph;
using diffalign::NodeMapping;
using diffalign::Permutation;
using diffalign::Rng;

inline Permutation gen_permutation(int n, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::size_t>(i) + 1)]);
  return Permutation(order);
}

/// Random graph; blank nodes (label 0) only when allow_blank, and edges only
/// between non-blank nodes.
inline Graph gen_graph(int n, Alphabet a, double density, Rng& rng, bool allow_blank = true) {
  Graph g(n, a);
  for (int i = 0; i < n; ++i) {
    const int lo = allow_blank ? 0 : 1;
    g.set_node_label(i, lo + static_cast<int>(rng.below(static_cast<std::size_t>(a.node - lo))));
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (g.node_label(i) != 0 && g.node_label(j) != 0 && rng.uniform() < density)
        g.set_edge_label(i, j, 1 + static_cast<int>(rng.below(static_cast<std::size_t>(a.edge - 1))));
  return g;
}

/// Random partial injective mapping from cols input nodes into rows targets.
inline NodeMapping gen_mapping(int rows, int cols, Rng& rng, double keep = 0.8) {
  NodeMapping m(rows, cols);
  const Permutation targets = gen_permutation(rows, rng);
  for (int j = 0; j < cols && j < rows; ++j)
    if (rng.uniform() < keep) m.add_pair(targets(j), j);
  return m;
}

/// Runs `body` on `count` independent streams derived from `seed`.
inline void for_all(int count, std::uint64_t seed, const std::function<void(Rng&, int)>& body) {
  for (int k = 0; k < count; ++k) {
    Rng rng(seed, static_cast<std::uint64_t>(k));
    body(rng, k);
  }
}

/// Label-preserving isomorphism by trying every bijection.
inline bool brute_force_isomorphic(const Graph& a, const Graph& b) {
  if (a.size() != b.size()) return false;
  const int n = a.size();
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  do {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) ok = a.node_label(i) == b.node_label(p[static_cast<std::size_t>(i)]);
    for (int i = 0; i < n && ok; ++i)
      for (int j = i + 1; j < n && ok; ++j)
        ok = a.edge_label(i, j) == b.edge_label(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    if (ok) return true;
  } while (std::next_permutation(p.begin(), p.end()));
  return false;
}

}  // namespace testing
