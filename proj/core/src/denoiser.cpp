#include "diffalign/denoiser.hpp"

#include "diffalign/parallel.hpp"
#include "diffalign/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace diffalign {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::unaligned: return "unaligned";
    case Variant::pe: return "pe";
    case Variant::pe_skip: return "pe_skip";
    case Variant::input_align: return "input_align";
  }
  return "unaligned";
}

Variant variant_from_string(const std::string& s) {
  if (s == "unaligned") return Variant::unaligned;
  if (s == "pe") return Variant::pe;
  if (s == "pe_skip") return Variant::pe_skip;
  if (s == "input_align") return Variant::input_align;
  throw std::invalid_argument("unknown denoiser variant: " + s);
}

void DenoiserConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("denoiser config: layers must be positive");
  if (hidden < 1) throw std::invalid_argument("denoiser config: hidden must be positive");
  if (heads < 1) throw std::invalid_argument("denoiser config: heads must be positive");
  if (hidden % heads != 0) throw std::invalid_argument("denoiser config: hidden must be divisible by heads");
  if (uses_pe() && pe_dim < 1) throw std::invalid_argument("denoiser config: pe_dim must be positive");
  if (max_blank_nodes < 0) throw std::invalid_argument("denoiser config: max_blank_nodes must be non-negative");
  if (alphabet.node < 1 || alphabet.edge < 1) throw std::invalid_argument("denoiser config: empty alphabet");
}

int DenoiserConfig::node_input_width() const {
  switch (variant) {
    case Variant::unaligned: return alphabet.node + 1;
    case Variant::pe:
    case Variant::pe_skip: return alphabet.node + 1 + pe_dim;
    case Variant::input_align: return 2 * alphabet.node;
  }
  return 0;
}

int DenoiserConfig::edge_input_width() const {
  return variant == Variant::input_align ? 2 * alphabet.edge : alphabet.edge;
}

// ---------------------------------------------------------------- params

Eigen::MatrixXd& DenoiserParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const Eigen::MatrixXd& DenoiserParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t DenoiserParams::count() const {
  std::size_t total = 0;
  for (const auto& [_, m] : tensors) total += static_cast<std::size_t>(m.size());
  return total;
}

Eigen::VectorXd DenoiserParams::flatten() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count()));
  Eigen::Index at = 0;
  for (const auto& [_, m] : tensors) {
    flat.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  }
  return flat;
}

void DenoiserParams::assign(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != count()) throw DimensionError("DenoiserParams::assign: size mismatch");
  Eigen::Index at = 0;
  for (auto& [_, m] : tensors) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(at, m.size());
    at += m.size();
  }
}

bool DenoiserParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const auto& kv) { return kv.second.allFinite(); });
}

DenoiserParams DenoiserParams::zeros_like() const {
  DenoiserParams z;
  for (const auto& [name, m] : tensors) z.tensors.emplace(name, Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  return z;
}

namespace {

struct Shape {
  std::string name;
  int rows;
  int cols;
  bool bias;
};

void add_mlp(std::vector<Shape>& out, const std::string& prefix, int in, int hidden, int outw) {
  out.push_back({prefix + ".W1", in, hidden, false});
  out.push_back({prefix + ".b1", 1, hidden, true});
  out.push_back({prefix + ".W2", hidden, outw, false});
  out.push_back({prefix + ".b2", 1, outw, true});
}

void add_linear(std::vector<Shape>& out, const std::string& prefix, int in, int outw) {
  out.push_back({prefix + ".W", in, outw, false});
  out.push_back({prefix + ".b", 1, outw, true});
}

std::string layer_name(int l, const char* part) { return "layer" + std::to_string(l) + "." + part; }

std::vector<Shape> parameter_shapes(const DenoiserConfig& c) {
  const int dh = c.hidden;
  std::vector<Shape> s;
  add_mlp(s, "in_node", c.node_input_width(), dh, dh);
  add_mlp(s, "in_edge", c.edge_input_width(), dh, dh);
  add_mlp(s, "in_time", 1, dh, dh);
  for (int l = 0; l < c.layers; ++l) {
    s.push_back({layer_name(l, "q.W"), dh, dh, false});
    s.push_back({layer_name(l, "k.W"), dh, dh, false});
    s.push_back({layer_name(l, "v.W"), dh, dh, false});
    add_linear(s, layer_name(l, "e_mul"), dh, c.heads);
    add_linear(s, layer_name(l, "e_add"), dh, c.heads);
    add_linear(s, layer_name(l, "t_mul_n"), dh, dh);
    add_linear(s, layer_name(l, "t_add_n"), dh, dh);
    add_linear(s, layer_name(l, "t_mul_e"), dh, c.heads);
    add_linear(s, layer_name(l, "t_add_e"), dh, c.heads);
    add_linear(s, layer_name(l, "e_out"), c.heads, dh);
    add_mlp(s, layer_name(l, "mlp_n"), dh, dh, dh);
    add_mlp(s, layer_name(l, "mlp_e"), dh, dh, dh);
    if (c.use_global_features) add_mlp(s, layer_name(l, "mlp_y"), 5 * dh, dh, dh);
  }
  add_mlp(s, "out_node", dh, dh, c.alphabet.node);
  add_mlp(s, "out_edge", dh, dh, c.alphabet.edge);
  return s;
}

}  // namespace

DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed) {
  config.validate();
  DenoiserParams p;
  Rng rng(seed, 0x1d1f);
  for (const Shape& s : parameter_shapes(config)) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(s.rows, s.cols);
    if (!s.bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
    }
    p.tensors.emplace(s.name, std::move(m));
  }
  if (config.variant == Variant::pe_skip) p.tensors.emplace("skip_lambda", Eigen::MatrixXd::Constant(1, 1, 1.0));
  return p;
}

ad::Var ParamVars::operator[](const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

ParamVars bind_params(ad::Tape& tape, const DenoiserParams& params, bool requires_grad) {
  ParamVars pv;
  for (const auto& [name, m] : params.tensors) pv.vars.emplace(name, tape.leaf(m, requires_grad));
  return pv;
}

// ---------------------------------------------------------------- PE

namespace {
Eigen::MatrixXd laplacian(const Graph& y) {
  const int n = y.size();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && y.edge_label(i, j) != y.none_index()) {
        lap(i, j) = -1.0;
        lap(i, i) += 1.0;
      }
  return lap;
}
}  // namespace

Eigen::VectorXd laplacian_spectrum(const Graph& y) {
  if (y.size() == 0) return Eigen::VectorXd();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian(y));
  return solver.eigenvalues();
}

Eigen::MatrixXd laplacian_pe(const Graph& y, int pe_dim, bool largest) {
  if (pe_dim < 0) throw std::invalid_argument("laplacian_pe: negative width");
  const int n = y.size();
  Eigen::MatrixXd pe = Eigen::MatrixXd::Zero(n, pe_dim);
  if (n == 0) return pe;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian(y));
  const Eigen::VectorXd& values = solver.eigenvalues();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  constexpr double kTie = 1e-9;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (std::abs(values(a) - values(b)) <= kTie) return false;
    return largest ? values(a) > values(b) : values(a) < values(b);
  });
  const int take = std::min(n, pe_dim);
  for (int c = 0; c < take; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(order[static_cast<std::size_t>(c)]);
    for (int i = 0; i < n; ++i) {
      if (std::abs(v(i)) > 1e-10) {
        if (v(i) < 0.0) v = -v;
        break;
      }
    }
    pe.col(c) = v;
  }
  return pe;
}

Condition make_condition(const Graph& y, const NodeMapping& m, const DenoiserConfig& config) {
  if (m.cols() != y.size()) throw DimensionError("make_condition: mapping columns must equal condition size");
  Condition c{y, m, Eigen::MatrixXd()};
  if (config.uses_pe()) c.pe = laplacian_pe(y, config.pe_dim, config.pe_largest);
  return c;
}

Condition permute_condition(const Condition& c, const Permutation& r, const Permutation& q) {
  Condition out{apply_permutation(q, c.y), permute_mapping(r, q, c.mapping), Eigen::MatrixXd()};
  if (c.pe.size() != 0) {
    out.pe.resize(c.pe.rows(), c.pe.cols());
    for (int j = 0; j < static_cast<int>(c.pe.rows()); ++j) out.pe.row(q(j)) = c.pe.row(j);
  }
  return out;
}

// ---------------------------------------------------------------- forward

namespace {

ad::Var mlp(ad::Tape& tape, const ParamVars& p, const std::string& prefix, ad::Var x) {
  ad::Var h = tape.relu(tape.add_row(tape.matmul(x, p[prefix + ".W1"]), p[prefix + ".b1"]));
  return tape.add_row(tape.matmul(h, p[prefix + ".W2"]), p[prefix + ".b2"]);
}

ad::Var linear(ad::Tape& tape, const ParamVars& p, const std::string& prefix, ad::Var x) {
  return tape.add_row(tape.matmul(x, p[prefix + ".W"]), p[prefix + ".b"]);
}

std::vector<int> transpose_index(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) idx[static_cast<std::size_t>(i) * n + j] = j * n + i;
  return idx;
}

ad::Var symmetrize(ad::Tape& tape, ad::Var e, int n) {
  return tape.scale(tape.add(e, tape.gather_rows(e, transpose_index(n))), 0.5);
}

void check_finite(const ad::Tape& tape, ad::Var v, const std::string& where) {
  if (!tape.value(v).allFinite()) throw NumericError("non-finite activation in " + where);
}

struct GraphInputs {
  ad::Var nodes;
  ad::Var edges;
  int n;
};

GraphInputs assemble_inputs(ad::Tape& tape, const DenoiserConfig& config, ad::Var x_nodes, ad::Var x_edges,
                            const Condition& cond) {
  const int nx = static_cast<int>(tape.value(x_nodes).rows());
  const int ka = config.alphabet.node;
  const int kb = config.alphabet.edge;
  if (tape.value(x_nodes).cols() != ka || tape.value(x_edges).cols() != kb ||
      tape.value(x_edges).rows() != static_cast<Eigen::Index>(nx) * nx) {
    throw DimensionError("denoiser: X_t shape does not match the alphabet");
  }
  if (cond.y.alphabet() != config.alphabet) throw DimensionError("denoiser: condition alphabet mismatch");

  if (config.variant == Variant::input_align) {
    if (cond.mapping.rows() != nx || cond.mapping.cols() != cond.y.size())
      throw DimensionError("denoiser: mapping shape mismatch");
    GraphTensor py = apply_mapping(cond.mapping, cond.y);
    return {tape.concat_cols({x_nodes, tape.constant(py.nodes)}), tape.concat_cols({x_edges, tape.constant(py.edges)}),
            nx};
  }

  const int ny = cond.y.size();
  const int n = nx + ny;
  const bool with_pe = config.uses_pe();
  const int pd = with_pe ? config.pe_dim : 0;

  Eigen::MatrixXd x_extra = Eigen::MatrixXd::Zero(nx, 1 + pd);
  Eigen::MatrixXd y_feat = Eigen::MatrixXd::Zero(ny, ka + 1 + pd);
  y_feat.leftCols(ka) = cond.y.node_one_hot();
  y_feat.col(ka).setOnes();
  if (with_pe) {
    if (cond.pe.rows() != ny || cond.pe.cols() != pd) throw DimensionError("denoiser: positional encoding shape mismatch");
    if (cond.mapping.rows() != nx || cond.mapping.cols() != ny) throw DimensionError("denoiser: mapping shape mismatch");
    x_extra.rightCols(pd) = apply_mapping_rows(cond.mapping, cond.pe);
    y_feat.rightCols(pd) = cond.pe;
  }
  ad::Var nodes = tape.concat_rows({tape.concat_cols({x_nodes, tape.constant(x_extra)}), tape.constant(y_feat)});

  std::vector<int> idx(static_cast<std::size_t>(n) * n, -1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int& slot = idx[static_cast<std::size_t>(i) * n + j];
      if (i < nx && j < nx) slot = i * nx + j;
      else if (i >= nx && j >= nx) slot = nx * nx + (i - nx) * ny + (j - nx);
    }
  ad::Var edges = tape.gather_rows(tape.concat_rows({x_edges, tape.constant(cond.y.edge_one_hot())}), std::move(idx));
  return {nodes, edges, n};
}

}  // namespace

LogitVars build_logits(ad::Tape& tape, const ParamVars& p, const DenoiserConfig& config, ad::Var x_nodes,
                       ad::Var x_edges, const Condition& cond, int t, int steps) {
  if (steps < 1 || t < 0 || t > steps) throw std::out_of_range("denoiser: time step out of range");
  const int nx = static_cast<int>(tape.value(x_nodes).rows());
  GraphInputs in = assemble_inputs(tape, config, x_nodes, x_edges, cond);
  const int n = in.n;
  const int heads = config.heads;
  const int dk = config.hidden / heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(dk));

  ad::Var h = mlp(tape, p, "in_node", in.nodes);
  ad::Var e = mlp(tape, p, "in_edge", in.edges);
  ad::Var y = mlp(tape, p, "in_time",
                  tape.constant(Eigen::MatrixXd::Constant(1, 1, static_cast<double>(t) / static_cast<double>(steps))));
  check_finite(tape, h, "input embedding");
  check_finite(tape, e, "input embedding");

  for (int l = 0; l < config.layers; ++l) {
    auto name = [l](const char* part) { return layer_name(l, part); };
    ad::Var q = tape.matmul(h, p[name("q.W")]);
    ad::Var k = tape.matmul(h, p[name("k.W")]);
    ad::Var v = tape.matmul(h, p[name("v.W")]);

    std::vector<ad::Var> scores;
    for (int hd = 0; hd < heads; ++hd) {
      ad::Var s = tape.matmul_bt(tape.slice_cols(q, hd * dk, dk), tape.slice_cols(k, hd * dk, dk));
      scores.push_back(tape.flatten(tape.scale(s, score_scale)));
    }
    ad::Var a1 = tape.concat_cols(scores);
    ad::Var a2 = tape.add(tape.mul(a1, tape.add_scalar(linear(tape, p, name("e_mul"), e), 1.0)),
                          linear(tape, p, name("e_add"), e));

    std::vector<ad::Var> head_out;
    for (int hd = 0; hd < heads; ++hd) {
      ad::Var attn = tape.row_softmax(tape.unflatten(tape.slice_cols(a2, hd, 1), n));
      head_out.push_back(tape.matmul(attn, tape.slice_cols(v, hd * dk, dk)));
    }
    ad::Var n2 = tape.concat_cols(head_out);
    ad::Var n3 = tape.add_row(tape.mul_row(n2, tape.add_scalar(linear(tape, p, name("t_mul_n"), y), 1.0)),
                              linear(tape, p, name("t_add_n"), y));
    ad::Var a2t = tape.add_row(tape.mul_row(a2, tape.add_scalar(linear(tape, p, name("t_mul_e"), y), 1.0)),
                               linear(tape, p, name("t_add_e"), y));
    ad::Var e2 = linear(tape, p, name("e_out"), a2t);
    ad::Var e3 = tape.add(mlp(tape, p, name("mlp_e"), e2), e);
    e = symmetrize(tape, e3, n);
    if (config.use_global_features) {
      ad::Var pooled = tape.concat_cols({y, tape.col_min(n3), tape.col_max(n3), tape.col_mean(n3), tape.col_std(n3)});
      y = tape.add(y, mlp(tape, p, name("mlp_y"), pooled));
    }
    h = tape.add(mlp(tape, p, name("mlp_n"), n3), h);
    const std::string where = "layer " + std::to_string(l);
    check_finite(tape, h, where);
    check_finite(tape, e, where);
    check_finite(tape, y, where);
  }

  if (config.uses_union()) {
    std::vector<int> node_rows(static_cast<std::size_t>(nx));
    std::iota(node_rows.begin(), node_rows.end(), 0);
    std::vector<int> edge_rows;
    edge_rows.reserve(static_cast<std::size_t>(nx) * nx);
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < nx; ++j) edge_rows.push_back(i * n + j);
    h = tape.gather_rows(h, std::move(node_rows));
    e = tape.gather_rows(e, std::move(edge_rows));
  }

  ad::Var node_logits = mlp(tape, p, "out_node", h);
  ad::Var edge_logits = symmetrize(tape, mlp(tape, p, "out_edge", e), nx);
  if (config.variant == Variant::pe_skip) {
    GraphTensor py = apply_mapping(cond.mapping, cond.y);
    ad::Var lambda = p["skip_lambda"];
    node_logits = tape.add(node_logits, tape.scale_by(tape.constant(py.nodes), lambda));
    edge_logits = tape.add(edge_logits, tape.scale_by(tape.constant(py.edges), lambda));
  }
  check_finite(tape, node_logits, "output");
  check_finite(tape, edge_logits, "output");
  return {node_logits, edge_logits};
}

SoftGraph probabilities(const Eigen::MatrixXd& node_logits, const Eigen::MatrixXd& edge_logits, int n,
                        int none_index) {
  auto softmax = [](const Eigen::MatrixXd& z) {
    Eigen::MatrixXd out(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double m = z.row(r).maxCoeff();
      // Underflowed entries are floored so no label loses all mass.
      out.row(r) = (z.row(r).array() - m).exp().max(std::numeric_limits<double>::min());
      out.row(r) /= out.row(r).sum();
    }
    return out;
  };
  SoftGraph g(GraphTensor{n, softmax(node_logits), softmax(edge_logits)});
  for (int i = 0; i < n; ++i) {
    g.edges.row(static_cast<Eigen::Index>(i) * n + i).setZero();
    g.edges(static_cast<Eigen::Index>(i) * n + i, none_index) = 1.0;
  }
  return g;
}

SoftGraph forward(const DenoiserParams& params, const DenoiserConfig& config, const GraphTensor& x_t,
                  const Condition& cond, int t, int steps) {
  ad::Tape tape;
  ParamVars pv = bind_params(tape, params, false);
  LogitVars out = build_logits(tape, pv, config, tape.constant(x_t.nodes), tape.constant(x_t.edges), cond, t, steps);
  return probabilities(tape.value(out.nodes), tape.value(out.edges), x_t.n, cond.y.none_index());
}

SoftGraph forward(const DenoiserParams& params, const DenoiserConfig& config, const Graph& x_t,
                  const Condition& cond, int t, int steps) {
  return forward(params, config, GraphTensor::one_hot(x_t), cond, t, steps);
}

// ---------------------------------------------------------------- loss

double diffusion_cross_entropy(const SoftGraph& prediction, const Graph& x0, double edge_weight) {
  const int n = x0.size();
  if (prediction.n != n) throw DimensionError("diffusion_cross_entropy: size mismatch");
  double node = 0.0;
  for (int i = 0; i < n; ++i) node -= std::log(prediction.nodes(i, x0.node_label(i)));
  double edge = 0.0;
  int pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j, ++pairs)
      edge -= std::log(prediction.edges(static_cast<Eigen::Index>(i) * n + j, x0.edge_label(i, j)));
  double loss = n > 0 ? node / n : 0.0;
  if (pairs > 0) loss += edge_weight * edge / pairs;
  return loss;
}

namespace {

ad::Var example_loss(ad::Tape& tape, const ParamVars& pv, const DenoiserConfig& config, const TrainingExample& ex,
                     int steps, double edge_weight) {
  const int n = ex.xt.size();
  if (ex.x0.size() != n) throw DimensionError("loss: x0 and x_t sizes differ");
  if (ex.x0.alphabet() != config.alphabet || ex.xt.alphabet() != config.alphabet)
    throw DimensionError("loss: alphabet mismatch");
  GraphTensor xt = GraphTensor::one_hot(ex.xt);
  LogitVars logits =
      build_logits(tape, pv, config, tape.constant(std::move(xt.nodes)), tape.constant(std::move(xt.edges)), ex.cond,
                   ex.t, steps);
  Eigen::VectorXd node_w = Eigen::VectorXd::Constant(n, n > 0 ? 1.0 / n : 0.0);
  const int pairs = n * (n - 1) / 2;
  Eigen::VectorXd edge_w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n) * n);
  if (pairs > 0)
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) edge_w(static_cast<Eigen::Index>(i) * n + j) = edge_weight / pairs;
  return tape.add(tape.cross_entropy(logits.nodes, ex.x0.node_one_hot(), node_w),
                  tape.cross_entropy(logits.edges, ex.x0.edge_one_hot(), edge_w));
}

}  // namespace

LossResult loss_and_gradients(const DenoiserParams& params, const DenoiserConfig& config,
                              std::span<const TrainingExample> batch, int steps, double edge_weight, int threads) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
  std::vector<LossResult> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t b) {
    ad::Tape tape;
    ParamVars pv = bind_params(tape, params, true);
    ad::Var loss = example_loss(tape, pv, config, batch[b], steps, edge_weight);
    tape.backward(loss);
    LossResult part{tape.value(loss)(0, 0), params.zeros_like()};
    for (auto& [name, g] : part.gradient.tensors) g = tape.grad(pv[name]);
    parts[b] = std::move(part);
  });
  LossResult result{0.0, params.zeros_like()};
  for (const LossResult& part : parts) {
    result.loss += part.loss;
    for (auto& [name, g] : result.gradient.tensors) g += part.gradient.at(name);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  result.loss *= inv;
  for (auto& [_, g] : result.gradient.tensors) g *= inv;
  return result;
}

double batch_loss(const DenoiserParams& params, const DenoiserConfig& config, std::span<const TrainingExample> batch,
                  int steps, double edge_weight) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  for (const TrainingExample& ex : batch) {
    ad::Tape tape;
    ParamVars pv = bind_params(tape, params, false);
    total += tape.value(example_loss(tape, pv, config, ex, steps, edge_weight))(0, 0);
  }
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------- explicit weights

ExplicitDenoiser construct_identity_transformer(const Graph& y, const Eigen::MatrixXd& pe, double alpha, double beta) {
  const int ny = y.size();
  if (pe.rows() != ny) throw DimensionError("construct_identity_transformer: PE rows must match the condition");
  const Eigen::MatrixXd gram = pe * pe.transpose();
  if (ny > 0 && (gram - Eigen::MatrixXd::Identity(ny, ny)).cwiseAbs().maxCoeff() > 1e-8) {
    throw std::invalid_argument("construct_identity_transformer: PE rows are not orthonormal");
  }
  const int ka = y.alphabet().node;
  const int pd = static_cast<int>(pe.cols());
  DenoiserConfig c;
  c.layers = 1;
  c.heads = 1;
  c.pe_dim = pd;
  c.hidden = ka + 2 * pd;
  c.variant = Variant::pe;
  c.use_global_features = false;
  c.alphabet = y.alphabet();
  DenoiserParams p = init_params(c, 0).zeros_like();
  const int dh = c.hidden;

  // Input embedding: label channels gated by the condition flag, PE split
  // into positive and negative parts and recombined.
  Eigen::MatrixXd& w1 = p.at("in_node.W1");
  Eigen::MatrixXd& b1 = p.at("in_node.b1");
  Eigen::MatrixXd& w2 = p.at("in_node.W2");
  for (int a = 0; a < ka; ++a) {
    w1(a, a) = 1.0;
    w1(ka, a) = 1.0;
    b1(0, a) = -1.0;
    w2(a, a) = 1.0;
  }
  for (int k = 0; k < pd; ++k) {
    w1(ka + 1 + k, ka + k) = 1.0;
    w1(ka + 1 + k, ka + pd + k) = -1.0;
    w2(ka + k, ka + k) = 1.0;
    w2(ka + pd + k, ka + k) = -1.0;
  }
  const double qk = alpha * std::pow(static_cast<double>(dh), 0.25);
  for (int k = 0; k < pd; ++k) {
    p.at("layer0.q.W")(ka + k, ka + k) = qk;
    p.at("layer0.k.W")(ka + k, ka + k) = qk;
  }
  for (int a = 0; a < ka; ++a) p.at("layer0.v.W")(a, a) = 1.0;
  p.at("layer0.mlp_n.W1") = Eigen::MatrixXd::Identity(dh, dh);
  p.at("layer0.mlp_n.W2") = beta * Eigen::MatrixXd::Identity(dh, dh);
  p.at("out_node.W1") = Eigen::MatrixXd::Identity(dh, dh);
  for (int a = 0; a < ka; ++a) p.at("out_node.W2")(a, a) = 1.0;
  return {c, p};
}

}  // namespace diffalign
