#pragma once

#include "diffalign/graph.hpp"
#include "diffalign/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace diffalign {

/// One training pair: target X, condition Y and the mapping from Y into X.
struct PairedRecord {
  std::string split = "train";
  Graph x;
  Graph y;
  NodeMapping mapping;

  bool operator==(const PairedRecord&) const = default;
};

struct PairedDataset {
  Alphabet alphabet{};
  /// Generator name, parameters and seed.
  Json generator = Json::object();
  std::vector<PairedRecord> records;

  std::vector<PairedRecord> split(const std::string& name) const;
  /// Throws InvariantError when alphabets or mapping shapes are inconsistent.
  void validate() const;
  void append(const PairedDataset& other);
};

struct GridCopyOptions {
  int side = 5;
  double flip_fraction = 0.05;
  /// false: the target is the clean grid while only the condition is noised.
  bool noisy_target = true;
};

/// Number of mirrored pair flips applied to an n-node grid.
int grid_flip_count(int nodes, double flip_fraction);

/// side x side lattice with all node labels 1 and edge label 1.
Graph grid_graph(int side);

PairedDataset gen_grid_copy(int count, const GridCopyOptions& options, std::uint64_t seed,
                            const std::string& split = "train");

struct IdentityOptions {
  int nodes = 5;
  Alphabet alphabet{4, 2};
  double edge_density = 0.3;
};

PairedDataset gen_identity(int count, const IdentityOptions& options, std::uint64_t seed,
                           const std::string& split = "train");

struct EditOptions {
  /// Condition size N_Y (>= 4).
  int nodes = 6;
  /// Node labels 1..node_labels are real; 0 is blank.
  int node_labels = 4;
  double extra_edge_density = 0.2;
  /// Draw the new-node count uniformly from 1..kEditMaxNewNodes instead of
  /// deriving it from the endpoint labels.
  bool random_new_nodes = false;
};

inline constexpr int kEditMaxNewNodes = 3;
inline constexpr int kSingleBond = 1;
inline constexpr int kDoubleBond = 2;

/// Applies the edit rule to a condition graph with exactly one double edge;
/// returns the edited target in unpermuted order (condition nodes first,
/// then new nodes, then blank padding up to N_Y + kEditMaxNewNodes).
/// `added` overrides the label-derived new-node count.
Graph apply_edit_rule(const Graph& y, int node_labels, std::optional<int> added = std::nullopt);

PairedDataset gen_edit_translation(int count, const EditOptions& options, std::uint64_t seed,
                                   const std::string& split = "train");

/// The record's target relabeled into the frame the sampler uses with the
/// identity-prefix policy: the node mapped from condition node j sits at j,
/// unmapped target nodes fill the remaining positions in their original order.
Graph target_in_condition_order(const PairedRecord& r);

/// JSON lines: a header object, then one record per line. A ".gz" suffix
/// selects gzip compression.
void save_dataset(const PairedDataset& d, const std::filesystem::path& path);
/// Throws FormatError naming the line on malformed input.
PairedDataset load_dataset(const std::filesystem::path& path);

Json to_json(const PairedRecord& r);
PairedRecord record_from_json(const Json& j, Alphabet alphabet);

/// Reads every line of a plain or gzip-compressed text file.
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

}  // namespace diffalign
