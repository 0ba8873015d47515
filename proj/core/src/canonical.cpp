#include "diffalign/canonical.hpp"

#include <algorithm>
#include <numeric>

namespace diffalign {
namespace {

using Coloring = std::vector<int>;

class CanonicalSearch {
 public:
  explicit CanonicalSearch(const Graph& g) : g_(g), n_(g.size()), adj_(static_cast<std::size_t>(g.size())) {
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        if (i != j && g.edge_label(i, j) != g.none_index()) adj_[static_cast<std::size_t>(i)].emplace_back(j, g.edge_label(i, j));
  }

  std::vector<int> run() {
    if (n_ == 0) return {};
    Coloring initial(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) initial[static_cast<std::size_t>(i)] = g_.node_label(i);
    std::vector<int> prefix;
    search(rank(initial, [&](int u) { return std::vector<long long>{initial[static_cast<std::size_t>(u)]}; }), prefix);
    return best_order_;
  }

 private:
  template <typename KeyFn>
  Coloring rank(const Coloring& base, KeyFn key) const {
    std::vector<std::vector<long long>> keys(static_cast<std::size_t>(n_));
    for (int u = 0; u < n_; ++u) keys[static_cast<std::size_t>(u)] = key(u);
    std::vector<int> idx(static_cast<std::size_t>(n_));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)]; });
    Coloring out(base.size());
    int color = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k > 0 && keys[static_cast<std::size_t>(idx[k])] != keys[static_cast<std::size_t>(idx[k - 1])]) ++color;
      out[static_cast<std::size_t>(idx[k])] = color;
    }
    return out;
  }

  static int count_colors(const Coloring& c) {
    return c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1;
  }

  Coloring refine(Coloring colors) const {
    int count = count_colors(colors);
    while (true) {
      Coloring next = rank(colors, [&](int u) {
        std::vector<long long> sig;
        sig.push_back(colors[static_cast<std::size_t>(u)]);
        std::vector<long long> nbr;
        for (const auto& [v, label] : adj_[static_cast<std::size_t>(u)])
          nbr.push_back(static_cast<long long>(label) * (n_ + 1) + colors[static_cast<std::size_t>(v)]);
        std::sort(nbr.begin(), nbr.end());
        sig.insert(sig.end(), nbr.begin(), nbr.end());
        return sig;
      });
      const int next_count = count_colors(next);
      colors = std::move(next);
      if (next_count == count) return colors;
      count = next_count;
    }
  }

  Coloring individualize(const Coloring& colors, int v) const {
    return rank(colors, [&](int u) {
      return std::vector<long long>{2LL * colors[static_cast<std::size_t>(u)] + (u == v ? 0 : 1)};
    });
  }

  std::string encode(const std::vector<int>& order) const {
    std::string s;
    s.reserve(static_cast<std::size_t>(n_) * (n_ + 1));
    auto put = [&s](int v) {
      s.push_back(static_cast<char>((v >> 8) & 0xff));
      s.push_back(static_cast<char>(v & 0xff));
    };
    for (int k = 0; k < n_; ++k) put(g_.node_label(order[static_cast<std::size_t>(k)]));
    for (int a = 0; a < n_; ++a)
      for (int b = a + 1; b < n_; ++b) put(g_.edge_label(order[static_cast<std::size_t>(a)], order[static_cast<std::size_t>(b)]));
    return s;
  }

  void record_automorphism(const std::vector<int>& from, const std::vector<int>& to) {
    std::vector<int> gamma(static_cast<std::size_t>(n_));
    for (int k = 0; k < n_; ++k) gamma[static_cast<std::size_t>(from[static_cast<std::size_t>(k)])] = to[static_cast<std::size_t>(k)];
    automorphisms_.push_back(std::move(gamma));
  }

  void leaf(const Coloring& colors) {
    std::vector<int> order(static_cast<std::size_t>(n_));
    for (int u = 0; u < n_; ++u) order[static_cast<std::size_t>(colors[static_cast<std::size_t>(u)])] = u;
    std::string enc = encode(order);
    if (first_.empty() && best_order_.empty()) {
      first_ = enc;
      first_order_ = order;
      best_ = std::move(enc);
      best_order_ = std::move(order);
      return;
    }
    if (enc == first_) {
      record_automorphism(first_order_, order);
    } else if (enc == best_) {
      record_automorphism(best_order_, order);
    } else if (enc < best_) {
      best_ = std::move(enc);
      best_order_ = std::move(order);
    }
  }

  // True if `v` lies in the orbit of an explored vertex under the stored
  // automorphisms that fix every vertex of `prefix`.
  bool pruned(int v, const std::vector<int>& explored, const std::vector<int>& prefix) const {
    if (explored.empty() || automorphisms_.empty()) return false;
    std::vector<int> parent(static_cast<std::size_t>(n_));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
      while (parent[static_cast<std::size_t>(x)] != x) {
        parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        x = parent[static_cast<std::size_t>(x)];
      }
      return x;
    };
    for (const auto& gamma : automorphisms_) {
      bool fixes = std::all_of(prefix.begin(), prefix.end(), [&](int p) { return gamma[static_cast<std::size_t>(p)] == p; });
      if (!fixes) continue;
      for (int u = 0; u < n_; ++u) parent[static_cast<std::size_t>(find(u))] = find(gamma[static_cast<std::size_t>(u)]);
    }
    const int root = find(v);
    return std::any_of(explored.begin(), explored.end(), [&](int e) { return find(e) == root; });
  }

  void search(const Coloring& start, std::vector<int>& prefix) {
    const Coloring colors = refine(start);
    const int count = count_colors(colors);
    if (count == n_) {
      leaf(colors);
      return;
    }
    // First non-singleton cell in color order.
    std::vector<int> cell_size(static_cast<std::size_t>(count), 0);
    for (int c : colors) ++cell_size[static_cast<std::size_t>(c)];
    int target = 0;
    while (cell_size[static_cast<std::size_t>(target)] < 2) ++target;
    std::vector<int> explored;
    for (int v = 0; v < n_; ++v) {
      if (colors[static_cast<std::size_t>(v)] != target) continue;
      if (pruned(v, explored, prefix)) continue;
      prefix.push_back(v);
      search(individualize(colors, v), prefix);
      prefix.pop_back();
      explored.push_back(v);
    }
  }

  const Graph& g_;
  int n_;
  std::vector<std::vector<std::pair<int, int>>> adj_;
  std::string first_;
  std::vector<int> first_order_;
  std::string best_;
  std::vector<int> best_order_;
  std::vector<std::vector<int>> automorphisms_;
};

}  // namespace

std::vector<int> canonical_order(const Graph& g) { return CanonicalSearch(g).run(); }

std::string canonical_form(const Graph& g) {
  const auto order = canonical_order(g);
  std::string s = "g" + std::to_string(g.size()) + ":" + std::to_string(g.alphabet().node) + ":" +
                  std::to_string(g.alphabet().edge) + ":";
  for (int k : order) s += std::to_string(g.node_label(k)) + ",";
  s += "|";
  for (std::size_t a = 0; a < order.size(); ++a)
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const int l = g.edge_label(order[a], order[b]);
      if (l != g.none_index()) s += std::to_string(a) + "-" + std::to_string(b) + ":" + std::to_string(l) + ";";
    }
  return s;
}

Graph canonical_graph(const Graph& g) {
  const auto order = canonical_order(g);
  std::vector<int> inv(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) inv[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
  return apply_permutation(Permutation(std::move(inv)), g);
}

}  // namespace diffalign
