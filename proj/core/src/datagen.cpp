#include "diffalign/datagen.hpp"

#include "diffalign/rng.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace diffalign {

namespace {

std::uint64_t split_code(const std::string& split) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : split) h = (h ^ c) * 1099511628211ULL;
  return h;
}

Rng record_rng(std::uint64_t seed, const std::string& split, int index) {
  return Rng(mix_seed(seed, split_code(split)), static_cast<std::uint64_t>(index));
}

Permutation shuffled(int n, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return Permutation(std::move(order));
}

PairedRecord permuted_pair(const Graph& target, const Graph& y, const Permutation& p, const std::string& split) {
  return PairedRecord{split, apply_permutation(p, target), y, NodeMapping::from_permutation(p)};
}

}  // namespace

std::vector<PairedRecord> PairedDataset::split(const std::string& name) const {
  std::vector<PairedRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const PairedRecord& r) { return r.split == name; });
  return out;
}

void PairedDataset::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const PairedRecord& r = records[i];
    const std::string where = "record " + std::to_string(i);
    if (r.x.alphabet() != alphabet || r.y.alphabet() != alphabet)
      throw InvariantError(where + ": alphabet differs from the dataset alphabet");
    if (r.mapping.rows() != r.x.size() || r.mapping.cols() != r.y.size())
      throw InvariantError(where + ": mapping shape does not match the graphs");
    r.x.validate();
    r.y.validate();
  }
}

void PairedDataset::append(const PairedDataset& other) {
  if (!records.empty() && !(other.alphabet == alphabet)) throw InvariantError("append: alphabet mismatch");
  if (records.empty()) alphabet = other.alphabet;
  records.insert(records.end(), other.records.begin(), other.records.end());
}

int grid_flip_count(int nodes, double flip_fraction) {
  return static_cast<int>(std::lround(flip_fraction * static_cast<double>(nodes) * nodes));
}

Graph grid_graph(int side) {
  if (side < 2) throw std::invalid_argument("grid: side must be at least 2");
  Graph g(side * side, Alphabet{2, 2});
  for (int i = 0; i < side * side; ++i) g.set_node_label(i, 1);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const int v = r * side + c;
      if (c + 1 < side) g.set_edge_label(v, v + 1, 1);
      if (r + 1 < side) g.set_edge_label(v, v + side, 1);
    }
  return g;
}

PairedDataset gen_grid_copy(int count, const GridCopyOptions& options, std::uint64_t seed, const std::string& split) {
  if (count < 0) throw std::invalid_argument("grid: negative count");
  const Graph clean = grid_graph(options.side);
  const int n = clean.size();
  const int pairs = n * (n - 1) / 2;
  const int flips = grid_flip_count(n, options.flip_fraction);
  if (flips < 0 || flips > pairs) throw std::invalid_argument("grid: flip fraction out of range");
  PairedDataset d;
  d.alphabet = clean.alphabet();
  d.generator = Json{{"name", "grid-copy"},
                     {"side", options.side},
                     {"flip_fraction", options.flip_fraction},
                     {"noisy_target", options.noisy_target},
                     {"seed", seed}};
  std::vector<std::pair<int, int>> all;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) all.emplace_back(i, j);
  for (int k = 0; k < count; ++k) {
    Rng rng = record_rng(seed, split, k);
    std::vector<std::pair<int, int>> pool = all;
    Graph y = clean;
    for (int f = 0; f < flips; ++f) {
      const std::size_t pick = static_cast<std::size_t>(f) + rng.below(pool.size() - static_cast<std::size_t>(f));
      std::swap(pool[static_cast<std::size_t>(f)], pool[pick]);
      const auto [i, j] = pool[static_cast<std::size_t>(f)];
      y.set_edge_label(i, j, 1 - y.edge_label(i, j));
    }
    const Permutation p = shuffled(n, rng);
    d.records.push_back(permuted_pair(options.noisy_target ? y : clean, y, p, split));
  }
  return d;
}

PairedDataset gen_identity(int count, const IdentityOptions& options, std::uint64_t seed, const std::string& split) {
  if (count < 0) throw std::invalid_argument("identity: negative count");
  if (options.nodes < 1 || options.alphabet.node < 2 || options.alphabet.edge < 1)
    throw std::invalid_argument("identity: need at least one node and one non-blank label");
  PairedDataset d;
  d.alphabet = options.alphabet;
  d.generator = Json{{"name", "identity"},
                     {"nodes", options.nodes},
                     {"alphabet", {{"node", options.alphabet.node}, {"edge", options.alphabet.edge}}},
                     {"edge_density", options.edge_density},
                     {"seed", seed}};
  for (int k = 0; k < count; ++k) {
    Rng rng = record_rng(seed, split, k);
    Graph y(options.nodes, options.alphabet);
    for (int i = 0; i < options.nodes; ++i)
      y.set_node_label(i, 1 + static_cast<int>(rng.below(static_cast<std::size_t>(options.alphabet.node - 1))));
    for (int i = 0; i < options.nodes; ++i)
      for (int j = i + 1; j < options.nodes; ++j)
        if (options.alphabet.edge > 1 && rng.uniform() < options.edge_density)
          y.set_edge_label(i, j, 1 + static_cast<int>(rng.below(static_cast<std::size_t>(options.alphabet.edge - 1))));
    const Permutation p = shuffled(options.nodes, rng);
    d.records.push_back(permuted_pair(y, y, p, split));
  }
  return d;
}

Graph apply_edit_rule(const Graph& y, int node_labels, std::optional<int> added_override) {
  const int n = y.size();
  int u = -1;
  int v = -1;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (y.edge_label(i, j) == kDoubleBond) {
        if (u >= 0) throw InvariantError("edit rule: more than one double edge");
        u = i;
        v = j;
      }
  if (u < 0) throw InvariantError("edit rule: no double edge");
  if (y.node_label(u) == y.node_label(v)) throw InvariantError("edit rule: double edge endpoints share a label");
  if (y.node_label(u) > y.node_label(v)) std::swap(u, v);
  const int lu = y.node_label(u);
  const int lv = y.node_label(v);
  const int added = added_override.value_or(1 + (lu + lv) % kEditMaxNewNodes);
  if (added < 1 || added > kEditMaxNewNodes) throw std::invalid_argument("edit rule: new-node count out of range");

  Graph x(n + kEditMaxNewNodes, y.alphabet(), y.blank_index(), y.none_index());
  for (int i = 0; i < n; ++i) x.set_node_label(i, y.node_label(i));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) x.set_edge_label(i, j, y.edge_label(i, j));
  x.set_edge_label(u, v, x.none_index());
  for (int k = 0; k < added; ++k) x.set_node_label(n + k, 1 + (lu + k) % node_labels);
  x.set_edge_label(n, u, kSingleBond);
  if (added > 1) x.set_edge_label(n + 1, v, kSingleBond);
  if (added > 2) x.set_edge_label(n + 2, n, kSingleBond);
  return x;
}

PairedDataset gen_edit_translation(int count, const EditOptions& options, std::uint64_t seed,
                                   const std::string& split) {
  if (count < 0) throw std::invalid_argument("edit: negative count");
  if (options.nodes < 4) throw std::invalid_argument("edit: need at least 4 condition nodes");
  if (options.node_labels < 2) throw std::invalid_argument("edit: need at least 2 node labels");
  const int n = options.nodes;
  const Alphabet alphabet{options.node_labels + 1, 3};
  PairedDataset d;
  d.alphabet = alphabet;
  d.generator = Json{{"name", "edit"},
                     {"nodes", n},
                     {"node_labels", options.node_labels},
                     {"extra_edge_density", options.extra_edge_density},
                     {"random_new_nodes", options.random_new_nodes},
                     {"seed", seed}};
  for (int k = 0; k < count; ++k) {
    Rng rng = record_rng(seed, split, k);
    Graph y;
    std::vector<std::pair<int, int>> candidates;
    do {
      y = Graph(n, alphabet);
      for (int i = 0; i < n; ++i)
        y.set_node_label(i, 1 + static_cast<int>(rng.below(static_cast<std::size_t>(options.node_labels))));
      for (int i = 1; i < n; ++i) y.set_edge_label(i, static_cast<int>(rng.below(static_cast<std::size_t>(i))), kSingleBond);
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (y.edge_label(i, j) == y.none_index() && rng.uniform() < options.extra_edge_density)
            y.set_edge_label(i, j, kSingleBond);
      candidates.clear();
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (y.edge_label(i, j) != y.none_index() && y.node_label(i) != y.node_label(j)) candidates.emplace_back(i, j);
    } while (candidates.empty());
    const auto [a, b] = candidates[rng.below(candidates.size())];
    y.set_edge_label(a, b, kDoubleBond);
    std::optional<int> added;
    if (options.random_new_nodes) added = 1 + static_cast<int>(rng.below(kEditMaxNewNodes));
    const Graph x = apply_edit_rule(y, options.node_labels, added);
    const Permutation p = shuffled(x.size(), rng);
    NodeMapping m(x.size(), n);
    for (int j = 0; j < n; ++j) m.add_pair(p(j), j);
    d.records.push_back(PairedRecord{split, apply_permutation(p, x), y, std::move(m)});
  }
  return d;
}

// ---------------------------------------------------------------- files

Json to_json(const PairedRecord& r) {
  return Json{{"split", r.split}, {"x", to_json(r.x)}, {"y", to_json(r.y)}, {"mapping", to_json(r.mapping)}};
}

PairedRecord record_from_json(const Json& j, Alphabet alphabet) {
  reject_unknown_keys(j, {"split", "x", "y", "mapping"}, "record");
  if (!j.contains("x") || !j.contains("y") || !j.contains("mapping")) throw FormatError("record: missing x, y or mapping");
  PairedRecord r;
  r.split = j.value("split", std::string("train"));
  r.x = graph_from_json(j.at("x"), alphabet);
  r.y = graph_from_json(j.at("y"), alphabet);
  r.mapping = mapping_from_json(j.at("mapping"), r.x.size(), r.y.size());
  return r;
}

namespace {
bool is_gzip(const std::filesystem::path& path) { return path.extension() == ".gz"; }
}  // namespace

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string current;
  char buffer[65536];
  for (;;) {
    char* got = gzgets(f, buffer, sizeof(buffer));
    if (!got) break;
    current += got;
    if (!current.empty() && current.back() == '\n') {
      current.pop_back();
      if (!current.empty() && current.back() == '\r') current.pop_back();
      lines.push_back(std::move(current));
      current.clear();
    }
  }
  int err = 0;
  const char* msg = gzerror(f, &err);
  const bool failed = err != Z_OK && err != Z_STREAM_END;
  const std::string what = failed ? std::string(msg) : std::string();
  gzclose(f);
  if (failed) throw FormatError("read error in " + path.string() + ": " + what);
  if (!current.empty()) lines.push_back(std::move(current));
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  if (is_gzip(path)) {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (const auto& line : lines) {
      if (gzwrite(f, line.data(), static_cast<unsigned>(line.size())) != static_cast<int>(line.size()) ||
          gzputc(f, '\n') != '\n') {
        gzclose(f);
        throw std::runtime_error("failed writing " + path.string());
      }
    }
    if (gzclose(f) != Z_OK) throw std::runtime_error("failed closing " + path.string());
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void save_dataset(const PairedDataset& d, const std::filesystem::path& path) {
  std::vector<std::string> lines;
  lines.reserve(d.records.size() + 1);
  lines.push_back(Json{{"format", "diffalign-dataset"},
                       {"version", 1},
                       {"alphabet", {{"node", d.alphabet.node}, {"edge", d.alphabet.edge}}},
                       {"generator", d.generator},
                       {"count", d.records.size()}}
                      .dump());
  for (const auto& r : d.records) lines.push_back(to_json(r).dump());
  write_lines(path, lines);
}

PairedDataset load_dataset(const std::filesystem::path& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw FormatError(path.string() + ": empty dataset file");
  PairedDataset d;
  std::size_t expected = 0;
  try {
    const Json header = Json::parse(lines[0]);
    reject_unknown_keys(header, {"format", "version", "alphabet", "generator", "count"}, "header");
    if (header.value("format", std::string()) != "diffalign-dataset") throw FormatError("not a dataset header");
    if (header.value("version", 0) != 1) throw FormatError("unsupported dataset version");
    d.alphabet = {header.at("alphabet").at("node").get<int>(), header.at("alphabet").at("edge").get<int>()};
    d.generator = header.value("generator", Json::object());
    expected = header.at("count").get<std::size_t>();
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ":1: " + e.what());
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      d.records.push_back(record_from_json(Json::parse(lines[i]), d.alphabet));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (d.records.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " records, found " +
                      std::to_string(d.records.size()) + " (truncated?)");
  }
  return d;
}

Graph target_in_condition_order(const PairedRecord& r) {
  const int n = r.x.size();
  std::vector<int> order(static_cast<std::size_t>(n), -1);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    const int j = r.mapping.input_of(i);
    if (j >= 0 && j < n) {
      order[static_cast<std::size_t>(i)] = j;
      used[static_cast<std::size_t>(j)] = true;
    }
  }
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (order[static_cast<std::size_t>(i)] >= 0) continue;
    while (used[static_cast<std::size_t>(next)]) ++next;
    order[static_cast<std::size_t>(i)] = next;
    used[static_cast<std::size_t>(next)] = true;
  }
  return apply_permutation(Permutation(std::move(order)), r.x);
}

}  // namespace diffalign
