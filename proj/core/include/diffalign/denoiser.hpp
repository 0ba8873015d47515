#pragma once

#include "diffalign/autodiff.hpp"
#include "diffalign/graph.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace diffalign {

enum class Variant { unaligned, pe, pe_skip, input_align };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct DenoiserConfig {
  int layers = 2;
  int hidden = 16;
  int heads = 4;
  int pe_dim = 20;
  Variant variant = Variant::pe_skip;
  int max_blank_nodes = 15;
  bool use_global_features = false;
  /// Laplacian eigenvectors of the largest eigenvalues (false: smallest).
  bool pe_largest = true;
  Alphabet alphabet{};

  /// Throws std::invalid_argument on non-positive widths or hidden % heads != 0.
  void validate() const;
  bool uses_union() const { return variant != Variant::input_align; }
  bool uses_pe() const { return variant == Variant::pe || variant == Variant::pe_skip; }
  int node_input_width() const;
  int edge_input_width() const;
};

/// Named dense tensors. Iteration order (and hence flatten()) is by name.
class DenoiserParams {
 public:
  std::map<std::string, Eigen::MatrixXd> tensors;

  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  std::size_t count() const;
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  bool all_finite() const;
  /// Same names and shapes, all zeros.
  DenoiserParams zeros_like() const;

  bool operator==(const DenoiserParams&) const = default;
};

/// Everything the denoiser sees besides X_t: the condition graph, the node
/// mapping from it onto the target, and the condition's positional encoding.
struct Condition {
  Graph y;
  NodeMapping mapping;
  /// N_Y x pe_dim; empty for variants that do not use it.
  Eigen::MatrixXd pe;
};

/// Eigenvalues of L = D - A for the binarized edge graph, ascending.
Eigen::VectorXd laplacian_spectrum(const Graph& y);

/// N_Y x pe_dim matrix of orthonormal Laplacian eigenvectors (zero-padded
/// when pe_dim > N_Y). Sign: first nonzero entry positive.
Eigen::MatrixXd laplacian_pe(const Graph& y, int pe_dim, bool largest = true);

Condition make_condition(const Graph& y, const NodeMapping& m, const DenoiserConfig& config);

/// Relabels target nodes by r and condition nodes by q; the PE rows follow q.
Condition permute_condition(const Condition& c, const Permutation& r, const Permutation& q);

/// Fan-in scaled initialization; skip_lambda starts at 1.
DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed);

/// Tape handles for every parameter tensor.
struct ParamVars {
  std::map<std::string, ad::Var> vars;
  ad::Var operator[](const std::string& name) const;
};

ParamVars bind_params(ad::Tape& tape, const DenoiserParams& params, bool requires_grad);

/// Logits over the target graph: nodes N_X x K_a, edges N_X^2 x K_b with
/// exactly symmetric edge rows.
struct LogitVars {
  ad::Var nodes;
  ad::Var edges;
};

/// Records the forward pass on `tape`. `x_nodes` (N_X x K_a) and `x_edges`
/// (N_X^2 x K_b) may be soft. Throws NumericError naming the layer when an
/// activation is non-finite.
LogitVars build_logits(ad::Tape& tape, const ParamVars& params, const DenoiserConfig& config, ad::Var x_nodes,
                       ad::Var x_edges, const Condition& cond, int t, int steps);

/// Row softmax of the logits; diagonal edge rows are set to the none one-hot.
SoftGraph probabilities(const Eigen::MatrixXd& node_logits, const Eigen::MatrixXd& edge_logits, int n,
                        int none_index);

SoftGraph forward(const DenoiserParams& params, const DenoiserConfig& config, const GraphTensor& x_t,
                  const Condition& cond, int t, int steps);
SoftGraph forward(const DenoiserParams& params, const DenoiserConfig& config, const Graph& x_t,
                  const Condition& cond, int t, int steps);

struct TrainingExample {
  Graph x0;
  Condition cond;
  int t = 1;
  Graph xt;
};

inline constexpr double kEdgeLossWeight = 5.0;

/// Node cross-entropy averaged over nodes plus kEdgeLossWeight times edge
/// cross-entropy averaged over unordered pairs, for one prediction.
double diffusion_cross_entropy(const SoftGraph& prediction, const Graph& x0, double edge_weight = kEdgeLossWeight);

struct LossResult {
  double loss = 0.0;
  DenoiserParams gradient;
};

/// Batch mean of the diffusion cross-entropy and its parameter gradient.
/// Per-example gradients may be computed on several threads but are summed
/// in batch order, so the result does not depend on the thread count.
LossResult loss_and_gradients(const DenoiserParams& params, const DenoiserConfig& config,
                              std::span<const TrainingExample> batch, int steps,
                              double edge_weight = kEdgeLossWeight, int threads = 1);

double batch_loss(const DenoiserParams& params, const DenoiserConfig& config, std::span<const TrainingExample> batch,
                  int steps, double edge_weight = kEdgeLossWeight);

struct ExplicitDenoiser {
  DenoiserConfig config;
  DenoiserParams params;
};

/// Single-layer pe-variant weights that copy the condition's node labels onto
/// mapped target nodes. Attention scores are alpha^2 <phi_i, phi_j>; output
/// logits are beta times the attended labels. Throws std::invalid_argument
/// when the rows of `pe` are not orthonormal.
ExplicitDenoiser construct_identity_transformer(const Graph& y, const Eigen::MatrixXd& pe, double alpha, double beta);

}  // namespace diffalign
