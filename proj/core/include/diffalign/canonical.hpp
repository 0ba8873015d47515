#pragma once

#include "diffalign/graph.hpp"

#include <string>
#include <vector>

namespace diffalign {

/// Canonical node order: entry k is the original index of the node placed at
/// canonical position k. Isomorphic graphs (label preserving) relabeled by
/// their canonical orders are identical.
///
/// Individualization-refinement: equitable color refinement on node labels and
/// edge-labelled neighbourhoods, then backtracking over ties, pruned with the
/// automorphisms discovered at the leaves.
std::vector<int> canonical_order(const Graph& g);

/// Byte string that is equal for two graphs iff they are isomorphic.
std::string canonical_form(const Graph& g);

/// Graph relabeled into canonical order.
Graph canonical_graph(const Graph& g);

}  // namespace diffalign
