#include "diffalign/denoiser.hpp"
#include "diffalign/theory.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace diffalign;
using testing::for_all;
using testing::gen_graph;
using testing::gen_mapping;
using testing::gen_permutation;

namespace {

const Alphabet kAlphabet{3, 2};

DenoiserConfig small_config(Variant v, bool global = false) {
  DenoiserConfig c;
  c.variant = v;
  c.alphabet = kAlphabet;
  c.layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.pe_dim = 3;
  c.max_blank_nodes = 2;
  c.use_global_features = global;
  return c;
}

Eigen::MatrixXd laplacian_oracle(const Graph& g) {
  const int n = g.size();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && g.edge_label(i, j) != 0) {
        l(i, j) = -1.0;
        l(i, i) += 1.0;
      }
  return l;
}

double max_abs_diff(const SoftGraph& a, const SoftGraph& b) {
  return std::max((a.nodes - b.nodes).cwiseAbs().maxCoeff(), (a.edges - b.edges).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("laplacian_pe of an edgeless graph is a standard basis prefix") {
  const Graph g = Graph::from_labels({1, 2, 1, 1}, {}, kAlphabet);
  const Eigen::MatrixXd pe = laplacian_pe(g, 3);
  CHECK(pe == Eigen::MatrixXd::Identity(4, 3));
}

TEST_CASE("laplacian_pe columns are orthonormal eigenvectors") {
  for_all(20, 51, [](Rng& rng, int) {
    const Graph g = gen_graph(6, kAlphabet, 0.4, rng, false);
    const Eigen::MatrixXd l = laplacian_oracle(g);
    for (bool largest : {true, false}) {
      const Eigen::MatrixXd pe = laplacian_pe(g, 4, largest);
      CHECK((pe.transpose() * pe - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
      for (int c = 0; c < 4; ++c) {
        const Eigen::VectorXd v = pe.col(c);
        const double lambda = v.dot(l * v);
        CHECK((l * v - lambda * v).cwiseAbs().maxCoeff() < 1e-8);
        for (int i = 0; i < 6; ++i)
          if (std::abs(v(i)) > 1e-10) {
            CHECK(v(i) > 0.0);
            break;
          }
      }
    }
  });
}

TEST_CASE("laplacian_pe zero-pads past the node count and orders eigenvalues") {
  const Graph path = Graph::from_labels({1, 1, 1}, {{0, 1, 1}, {1, 2, 1}}, kAlphabet);
  // Characteristic polynomial of the path Laplacian: -x (x - 1) (x - 3).
  for (double x : {0.0, 1.0, 3.0})
    CHECK(std::abs((laplacian_oracle(path) - x * Eigen::MatrixXd::Identity(3, 3)).determinant()) < 1e-12);
  const Eigen::VectorXd spectrum = laplacian_spectrum(path);
  CHECK(spectrum(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(spectrum(1) == doctest::Approx(1.0));
  CHECK(spectrum(2) == doctest::Approx(3.0));
  const Eigen::MatrixXd pe = laplacian_pe(path, 5);
  CHECK(pe.cols() == 5);
  CHECK(pe.rightCols(2).isZero());
  const Eigen::MatrixXd l = laplacian_oracle(path);
  CHECK((l * pe.col(0)).isApprox(3.0 * pe.col(0)));
  CHECK((l * laplacian_pe(path, 1, false).col(0)).isZero(1e-12));
}

TEST_CASE("init_params is deterministic per seed") {
  const DenoiserConfig c = small_config(Variant::pe_skip);
  CHECK(init_params(c, 7) == init_params(c, 7));
  CHECK_FALSE(init_params(c, 7) == init_params(c, 8));
  CHECK(init_params(c, 7).at("skip_lambda")(0, 0) == 1.0);
  CHECK(init_params(c, 7).all_finite());
}

TEST_CASE("config validation") {
  DenoiserConfig c = small_config(Variant::pe);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config(Variant::pe);
  c.hidden = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("fresh init gives finite normalized symmetric output for every variant") {
  for (Variant v : {Variant::unaligned, Variant::pe, Variant::pe_skip, Variant::input_align}) {
    for (bool global : {false, true}) {
      const DenoiserConfig c = small_config(v, global);
      const DenoiserParams p = init_params(c, 3);
      for_all(5, 52, [&](Rng& rng, int) {
        const Graph y = gen_graph(4, kAlphabet, 0.5, rng, false);
        const Graph x = gen_graph(6, kAlphabet, 0.5, rng);
        const Condition cond = make_condition(y, gen_mapping(6, 4, rng), c);
        const SoftGraph out = forward(p, c, x, cond, 3, 10);
        CHECK(out.nodes.allFinite());
        CHECK_NOTHROW(out.check_normalized(1e-6));
        for (int i = 0; i < 6; ++i)
          for (int j = 0; j < 6; ++j) CHECK(out.edges.row(i * 6 + j) == out.edges.row(j * 6 + i));
      });
    }
  }
}

TEST_CASE("pe_skip with a large skip scale copies the mapped condition") {
  const DenoiserConfig c = small_config(Variant::pe_skip);
  DenoiserParams p = init_params(c, 4);
  p.at("skip_lambda")(0, 0) = 200.0;
  Rng rng(53);
  const Graph y = gen_graph(4, kAlphabet, 0.6, rng, false);
  const Permutation perm = gen_permutation(4, rng);
  const NodeMapping m = NodeMapping::from_permutation(perm);
  const SoftGraph out = forward(p, c, Graph(4, kAlphabet), make_condition(y, m, c), 10, 10);
  const GraphTensor target = apply_mapping(m, y);
  CHECK((out.nodes - target.nodes).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((out.edges - target.edges).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("unaligned denoiser at the all-blank prior has constant rows") {
  const DenoiserConfig c = small_config(Variant::unaligned);
  const DenoiserParams p = init_params(c, 5);
  Rng rng(54);
  const Graph y = gen_graph(4, kAlphabet, 0.5, rng, false);
  const SoftGraph out = forward(p, c, Graph(5, kAlphabet), make_condition(y, gen_mapping(5, 4, rng), c), 10, 10);
  for (int i = 1; i < 5; ++i) CHECK((out.nodes.row(i) - out.nodes.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (i != j) CHECK((out.edges.row(i * 5 + j) - out.edges.row(1)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("property: aligned equivariance for every variant") {
  for (Variant v : {Variant::unaligned, Variant::pe, Variant::pe_skip, Variant::input_align}) {
    for (bool global : {false, true}) {
      const DenoiserConfig c = small_config(v, global);
      const Model model{c, init_params(c, 6), NoiseProcess::make(10, TransitionKind::absorbing, kAlphabet)};
      const EquivarianceReport r = check_aligned_equivariance(as_conditional(model), problem_for(c, 5, 4, 10), 50,
                                                              1e-5, 55);
      INFO(to_string(v), " global=", global, " deviation=", r.max_relative_deviation);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("negative control: positional encodings attached without the mapping") {
  const DenoiserConfig c = small_config(Variant::pe);
  const DenoiserParams p = init_params(c, 7);
  // Ignores the supplied mapping and always pairs input j with target j.
  const ConditionalDenoiser broken = [&](const GraphTensor& x, const Condition& cond, int t) {
    Condition fixed = cond;
    fixed.mapping = NodeMapping::identity_prefix(x.n, cond.y.size());
    return forward(p, c, x, fixed, t, 10);
  };
  const EquivarianceReport r = check_aligned_equivariance(broken, problem_for(c, 5, 4, 10), 50, 1e-5, 56);
  CHECK_FALSE(r.pass);
}

TEST_CASE("explicit identity transformer copies the mapped labels") {
  for_all(10, 57, [](Rng& rng, int) {
    const Alphabet a{4, 2};
    const Graph y = gen_graph(5, a, 0.4, rng, false);
    const Eigen::MatrixXd pe = laplacian_pe(y, 5);
    const ExplicitDenoiser d = construct_identity_transformer(y, pe, 50.0, 50.0);
    const NodeMapping m = NodeMapping::from_permutation(gen_permutation(5, rng));
    const Condition cond{y, m, pe};
    const SoftGraph out = forward(d.params, d.config, Graph(5, a), cond, 10, 10);
    CHECK((out.nodes - m.matrix() * y.node_one_hot()).cwiseAbs().maxCoeff() < 1e-3);

    // Equivariant in the target: permuting x_T together with the mapping.
    const Permutation r = gen_permutation(5, rng);
    const Graph x = gen_graph(5, a, 0.3, rng);
    const SoftGraph base = forward(d.params, d.config, x, cond, 4, 10);
    const Condition moved{y, permute_mapping(r, Permutation::identity(5), m), pe};
    const SoftGraph got = forward(d.params, d.config, apply_permutation(r, x), moved, 4, 10);
    CHECK(max_abs_diff(got, apply_permutation(r, base)) < 1e-9);
  });
}

TEST_CASE("explicit identity transformer with alpha 0 mixes the condition marginal") {
  const Alphabet a{4, 2};
  const Graph y = Graph::from_labels({1, 1, 2, 3, 1}, {}, a);
  const Eigen::MatrixXd pe = laplacian_pe(y, 5);
  const double beta = 3.0;
  const ExplicitDenoiser d = construct_identity_transformer(y, pe, 0.0, beta);
  const SoftGraph out = forward(d.params, d.config, Graph(5, a), Condition{y, NodeMapping::identity_prefix(5, 5), pe},
                                10, 10);
  // Uniform attention over the 10 union nodes: logits beta * (count / 10).
  Eigen::RowVectorXd logits(4);
  logits << 0.0, 3.0, 1.0, 1.0;
  logits *= beta / 10.0;
  const Eigen::RowVectorXd expected = logits.array().exp() / logits.array().exp().sum();
  for (int i = 0; i < 5; ++i) CHECK((out.nodes.row(i) - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("explicit identity transformer rejects non-orthonormal encodings") {
  const Graph y = Graph::from_labels({1, 2}, {}, Alphabet{3, 2});
  CHECK_THROWS_AS(construct_identity_transformer(y, Eigen::MatrixXd::Ones(2, 2), 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("cross-entropy examples") {
  Rng rng(58);
  const Graph x0 = gen_graph(4, Alphabet{4, 2}, 0.5, rng, false);
  CHECK(diffusion_cross_entropy(SoftGraph(GraphTensor::one_hot(x0)), x0) == 0.0);
  SoftGraph uniform(GraphTensor::one_hot(x0));
  uniform.nodes.setConstant(0.25);
  CHECK(diffusion_cross_entropy(uniform, x0, 0.0) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("loss matches the batch mean of per-example cross-entropy") {
  const DenoiserConfig c = small_config(Variant::pe);
  const DenoiserParams p = init_params(c, 9);
  std::vector<TrainingExample> batch;
  for_all(3, 59, [&](Rng& rng, int k) {
    const Graph y = gen_graph(3, kAlphabet, 0.6, rng, false);
    const Graph x0 = gen_graph(3, kAlphabet, 0.6, rng, false);
    batch.push_back({x0, make_condition(y, gen_mapping(3, 3, rng), c), 1 + k, gen_graph(3, kAlphabet, 0.3, rng)});
  });
  double expected = 0.0;
  for (const auto& ex : batch)
    expected += diffusion_cross_entropy(forward(p, c, ex.xt, ex.cond, ex.t, 5), ex.x0) / 3.0;
  const LossResult r = loss_and_gradients(p, c, batch, 5);
  CHECK(r.loss == doctest::Approx(expected).epsilon(1e-10));
  CHECK(batch_loss(p, c, batch, 5) == doctest::Approx(expected).epsilon(1e-10));
  CHECK_THROWS(loss_and_gradients(p, c, {}, 5));
  // Threaded reduction sums in batch order.
  CHECK(loss_and_gradients(p, c, batch, 5, kEdgeLossWeight, 3).gradient == r.gradient);
}

TEST_CASE("gradients agree with central differences for every parameter group") {
  for (Variant v : {Variant::unaligned, Variant::pe, Variant::pe_skip, Variant::input_align}) {
    const DenoiserConfig c = small_config(v, v == Variant::pe_skip);
    DenoiserParams p = init_params(c, 10);
    Rng jitter(60);
    for (auto& [name, m] : p.tensors)
      for (Eigen::Index i = 0; i < m.size(); ++i) m(i) += 0.1 * jitter.normal();
    std::vector<TrainingExample> batch;
    for_all(2, 61, [&](Rng& rng, int k) {
      const Graph y = gen_graph(3, kAlphabet, 0.6, rng, false);
      batch.push_back({gen_graph(3, kAlphabet, 0.6, rng, false), make_condition(y, gen_mapping(3, 3, rng), c), 2 + k,
                       gen_graph(3, kAlphabet, 0.4, rng)});
    });
    const LossResult r = loss_and_gradients(p, c, batch, 5);
    constexpr double h = 1e-5;
    for (const auto& [name, m] : p.tensors) {
      Eigen::MatrixXd numeric(m.rows(), m.cols());
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        DenoiserParams plus = p, minus = p;
        plus.at(name)(i) += h;
        minus.at(name)(i) -= h;
        numeric(i) = (batch_loss(plus, c, batch, 5) - batch_loss(minus, c, batch, 5)) / (2 * h);
      }
      const Eigen::MatrixXd& analytic = r.gradient.at(name);
      const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-6});
      INFO(to_string(v), " ", name);
      CHECK((analytic - numeric).cwiseAbs().maxCoeff() / scale < 1e-4);
    }
  }
}

TEST_CASE("params flatten and assign round-trip") {
  const DenoiserParams p = init_params(small_config(Variant::pe_skip), 11);
  DenoiserParams q = p.zeros_like();
  CHECK(q.count() == p.count());
  q.assign(p.flatten());
  CHECK(q == p);
  CHECK_THROWS(q.assign(Eigen::VectorXd::Zero(3)));
}

TEST_CASE("probabilities keep positive mass under extreme logits") {
  Eigen::MatrixXd nodes(1, 3), edges(1, 2);
  nodes << 0.0, -2000.0, 5.0;
  edges << 900.0, -900.0;
  const SoftGraph p = probabilities(nodes, edges, 1, 0);
  CHECK((p.nodes.array() > 0.0).all());
  CHECK(p.nodes.row(0).sum() == doctest::Approx(1.0));
  CHECK(p.edges(0, 0) == 1.0);
  CHECK(p.edges(0, 1) == 0.0);
}
