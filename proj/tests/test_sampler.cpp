#include "diffalign/sampler.hpp"
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

Model small_model(Variant v, int steps, std::uint64_t seed = 1, int layers = 1) {
  DenoiserConfig c;
  c.variant = v;
  c.alphabet = kAlphabet;
  c.layers = layers;
  c.hidden = 8;
  c.heads = 2;
  c.pe_dim = 3;
  c.max_blank_nodes = 2;
  return Model{c, init_params(c, seed), NoiseProcess::make(steps, TransitionKind::absorbing, kAlphabet)};
}

// Sum over x0 of p(x0) q(x_s | x_t, x0) from the one-step Bayes rule, renormalized.
Eigen::RowVectorXd mixture_oracle(const TransitionModel& tm, int xt, const Eigen::RowVectorXd& p0, int t, int s) {
  const int k = tm.alphabet();
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(k);
  const Eigen::MatrixXd span = tm.span_matrix(s, t);
  for (int x0 = 0; x0 < k; ++x0) {
    const double evidence = tm.cumulative(t)(x0, xt);
    if (evidence <= 0.0) continue;
    for (int v = 0; v < k; ++v) out(v) += p0(x0) * tm.cumulative(s)(x0, v) * span(v, xt) / evidence;
  }
  return out / out.sum();
}

}  // namespace

TEST_CASE("time grids") {
  CHECK(time_grid(10, 1) == std::vector<int>{10});
  const std::vector<int> full = time_grid(7, 7);
  CHECK(full == std::vector<int>{7, 6, 5, 4, 3, 2, 1});
  for (int total : {1, 5, 10, 100})
    for (int steps = 1; steps <= total; ++steps) {
      const std::vector<int> g = time_grid(total, steps);
      CHECK(static_cast<int>(g.size()) == steps);
      CHECK(g.front() == total);
      if (steps > 1) CHECK(g.back() == 1);
      for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] < g[i - 1]);
    }
  CHECK_THROWS(time_grid(10, 11));
  CHECK_THROWS(time_grid(10, 0));
}

TEST_CASE("reverse distribution matches the enumerated mixture") {
  for (auto kind : {TransitionKind::absorbing, TransitionKind::uniform}) {
    const NoiseProcess process = NoiseProcess::make(6, kind, Alphabet{4, 3});
    for_all(20, 71, [&](Rng& rng, int) {
      const int n = 3;
      const Graph xt = gen_graph(n, Alphabet{4, 3}, 0.5, rng);
      SoftGraph denoised(GraphTensor::zeros(n, 4, 3));
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 4; ++k) denoised.nodes(i, k) = 0.1 + rng.uniform();
        denoised.nodes.row(i) /= denoised.nodes.row(i).sum();
      }
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          Eigen::RowVector3d r(0.1 + rng.uniform(), 0.1 + rng.uniform(), 0.1 + rng.uniform());
          r /= r.sum();
          if (i == j) r << 1, 0, 0;
          denoised.edges.row(i * n + j) = r;
          denoised.edges.row(j * n + i) = r;
        }
      // Below T: non-blank states are unreachable at T under absorbing chains.
      const int t = 2 + static_cast<int>(rng.below(4));
      const int s = static_cast<int>(rng.below(static_cast<std::size_t>(t)));
      const StepDistribution d = reverse_distribution(process, denoised, xt, t, s);
      for (int i = 0; i < n; ++i) {
        if (s == 0) continue;
        CHECK((d.nodes.row(i) - mixture_oracle(process.nodes, xt.node_label(i), denoised.nodes.row(i), t, s))
                  .cwiseAbs()
                  .maxCoeff() < 1e-9);
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;
          CHECK((d.edges.row(i * n + j) -
                 mixture_oracle(process.edges, xt.edge_label(i, j), denoised.edges.row(i * n + j), t, s))
                    .cwiseAbs()
                    .maxCoeff() < 1e-9);
          CHECK(d.edges.row(i * n + j) == d.edges.row(j * n + i));
        }
      }
    });
  }
}

TEST_CASE("a one-hot denoiser at t = 1 returns X_0 exactly") {
  const NoiseProcess process = NoiseProcess::make(5, TransitionKind::absorbing, kAlphabet);
  for_all(20, 72, [&](Rng& rng, int) {
    const Graph x0 = gen_graph(4, kAlphabet, 0.5, rng, false);
    const Graph x1 = forward_sample(process, x0, 1, rng);
    const StepDistribution d = reverse_distribution(process, SoftGraph(GraphTensor::one_hot(x0)), x1, 1, 0);
    CHECK(sample_step(d, x1, rng) == x0);
  });
}

TEST_CASE("decoded components never re-absorb under a one-hot denoiser") {
  const NoiseProcess process = NoiseProcess::make(8, TransitionKind::absorbing, kAlphabet);
  for_all(20, 73, [&](Rng& rng, int) {
    const Graph x0 = gen_graph(4, kAlphabet, 0.5, rng, false);
    const int t = 2 + static_cast<int>(rng.below(7));
    const Graph xt = forward_sample(process, x0, t, rng);
    const StepDistribution d = reverse_distribution(process, SoftGraph(GraphTensor::one_hot(x0)), xt, t, t - 1);
    for (int i = 0; i < 4; ++i)
      if (xt.node_label(i) != 0) CHECK(d.nodes(i, 0) == 0.0);
  });
}

TEST_CASE("reverse distribution fails on a mixture without mass") {
  const NoiseProcess process = NoiseProcess::make(5, TransitionKind::absorbing, kAlphabet);
  Graph xt(1, kAlphabet);
  xt.set_node_label(0, 2);
  SoftGraph denoised(GraphTensor::one_hot(Graph::from_labels({1}, {}, kAlphabet)));
  CHECK_THROWS_AS(reverse_distribution(process, denoised, xt, 3, 2), NumericError);
}

TEST_CASE("single reverse step is aligned-equivariant in distribution") {
  for (Variant v : {Variant::pe, Variant::pe_skip, Variant::input_align}) {
    const Model model = small_model(v, 6, 2, 2);
    for_all(20, 74, [&](Rng& rng, int) {
      const Graph y = gen_graph(3, kAlphabet, 0.5, rng, false);
      const NodeMapping m = gen_mapping(4, 3, rng);
      const Condition cond = make_condition(y, m, model.config);
      const Graph xt = gen_graph(4, kAlphabet, 0.3, rng);
      const Permutation r = gen_permutation(4, rng);
      const Permutation q = gen_permutation(3, rng);
      const Condition moved = permute_condition(cond, r, q);
      const int t = 2 + static_cast<int>(rng.below(4));
      const auto base = reverse_distribution(
          model.process, forward(model.params, model.config, xt, cond, t, 6), xt, t, t - 1);
      const Graph rxt = apply_permutation(r, xt);
      const auto got = reverse_distribution(
          model.process, forward(model.params, model.config, rxt, moved, t, 6), rxt, t, t - 1);
      for (int i = 0; i < 4; ++i) {
        CHECK((got.nodes.row(r(i)) - base.nodes.row(i)).cwiseAbs().maxCoeff() < 1e-6);
        for (int j = 0; j < 4; ++j)
          CHECK((got.edges.row(r(i) * 4 + r(j)) - base.edges.row(i * 4 + j)).cwiseAbs().maxCoeff() < 1e-6);
      }
    });
  }
}

TEST_CASE("exact chain distribution is normalized and aligned-invariant") {
  Model model = small_model(Variant::pe_skip, 3, 3);
  model.config.alphabet = Alphabet{2, 2};
  model.config.pe_dim = 2;
  model.params = init_params(model.config, 3);
  model.process = NoiseProcess::make(3, TransitionKind::absorbing, Alphabet{2, 2});
  const Graph y = Graph::from_labels({1, 1}, {{0, 1, 1}}, Alphabet{2, 2});
  const Condition cond = make_condition(y, NodeMapping::identity_prefix(2, 2), model.config);
  const std::vector<double> p = exact_sample_distribution(model, cond, 2);
  CHECK(p.size() == state_count(2, Alphabet{2, 2}));
  double total = 0.0;
  for (double v : p) total += v;
  CHECK(std::abs(total - 1.0) < 1e-10);
  CHECK(check_distribution_invariance(model, cond, 2, Permutation::identity(2), Permutation::identity(2)) == 0.0);
  const Permutation s = Permutation::swap(2, 0, 1);
  CHECK(check_distribution_invariance(model, cond, 2, s, s) < 1e-8);
  CHECK(check_distribution_invariance(model, cond, 2, s, Permutation::identity(2)) < 1e-8);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(state_index(state_graph(i, 2, Alphabet{2, 2})) == i);
}

TEST_CASE("exact enumeration refuses large state spaces") {
  const Model model = small_model(Variant::pe, 10, 4);
  const Graph y = Graph::from_labels({1, 2, 1, 1}, {}, kAlphabet);
  CHECK_THROWS_AS(exact_sample_distribution(model, make_condition(y, NodeMapping::identity_prefix(6, 4), model.config), 6),
                  std::length_error);
}

TEST_CASE("sampling is deterministic per seed and independent of threads") {
  const Model model = small_model(Variant::pe_skip, 8, 5);
  const Graph y = Graph::from_labels({1, 2, 1}, {{0, 1, 1}}, kAlphabet);
  SampleConfig c;
  c.steps = 8;
  c.num_samples = 6;
  c.seed = 9;
  c.extra_blank_nodes = 2;
  const auto a = sample(model, y, c);
  const auto b = sample(model, y, c);
  c.threads = 3;
  const auto d = sample(model, y, c);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].graph == b[i].graph);
    CHECK(a[i].graph == d[i].graph);
    CHECK(a[i].graph.size() == 5);
    CHECK(a[i].graph.is_valid());
    CHECK(a[i].mapping == NodeMapping::identity_prefix(5, 3));
  }
  c.seed = 10;
  c.threads = 1;
  const auto e = sample(model, y, c);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= !(a[i].graph == e[i].graph);
  CHECK(differs);
}

TEST_CASE("single-step sampling runs one denoiser call") {
  const Model model = small_model(Variant::pe, 10, 6);
  SampleConfig c;
  c.steps = 1;
  c.num_samples = 3;
  const auto out = sample(model, Graph::from_labels({1, 2}, {{0, 1, 1}}, kAlphabet), c);
  for (const auto& s : out) {
    CHECK(s.steps == 1);
    CHECK(s.graph.is_valid());
  }
}

TEST_CASE("random mapping policy draws injective mappings") {
  SampleConfig c;
  c.mapping = MappingPolicy::random;
  Rng rng(75);
  const NodeMapping m = sample_mapping(c, 5, 3, rng);
  CHECK(m.pair_count() == 3);
  CHECK(mapping_policy_from_string(to_string(MappingPolicy::random)) == MappingPolicy::random);
}

TEST_CASE("guidance likelihood at the offset is log one half") {
  Guidance g{2.0, 1.5, 0.5, {0, 2}, 0};
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 3);
  p(0, 0) = 0.75;
  p(2, 0) = 0.75;
  p(1, 0) = 1.0;
  CHECK(guidance_log_likelihood(g, p) == doctest::Approx(std::log(0.5)));
  CHECK(2.0 * guidance_log_likelihood(g, p) == doctest::Approx(std::log(std::pow(0.5, 2.0))));
}

TEST_CASE("guidance defaults resolve against the unmapped nodes") {
  const NodeMapping m = NodeMapping::identity_prefix(7, 3);
  const Guidance g = resolve_guidance(GuidanceSpec{1.5, {}, {}, {}, {}}, m, 0);
  CHECK(g.nodes == std::vector<int>{3, 4, 5, 6});
  CHECK(g.offset == 2.0);
  CHECK(g.scale == 1.0);
  CHECK(g.label == 0);
  CHECK_THROWS(resolve_guidance(GuidanceSpec{1.0, {}, 0.0, {}, {}}, m, 0));
  CHECK_THROWS(resolve_guidance(GuidanceSpec{1.0, {}, {}, std::vector<int>{9}, {}}, m, 0));
}

TEST_CASE("guidance gradient matches central differences of the relaxed likelihood") {
  const Model model = small_model(Variant::pe_skip, 6, 7, 2);
  const Graph y = Graph::from_labels({1, 2, 1}, {{0, 1, 1}}, kAlphabet);
  const NodeMapping m = NodeMapping::identity_prefix(5, 3);
  const Condition cond = make_condition(y, m, model.config);
  const Guidance g = resolve_guidance(GuidanceSpec{1.0, {}, {}, {}, {}}, m, 0);
  Rng rng(76);
  const Graph xt = gen_graph(5, kAlphabet, 0.3, rng);
  const InputGradient grad = guidance_gradient(model, xt, cond, 3, g);
  const auto ll = [&](const GraphTensor& x) {
    return guidance_log_likelihood(g, forward(model.params, model.config, x, cond, 3, 6).nodes);
  };
  const GraphTensor base = GraphTensor::one_hot(xt);
  CHECK(grad.log_likelihood == doctest::Approx(ll(base)));
  constexpr double h = 1e-6;
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 3; ++k) {
      GraphTensor a = base, b = base;
      a.nodes(i, k) += h;
      b.nodes(i, k) -= h;
      CHECK(grad.nodes(i, k) == doctest::Approx((ll(a) - ll(b)) / (2 * h)).epsilon(1e-5));
    }
  // Edge (i, j) and (j, i) move together.
  GraphTensor a = base, b = base;
  for (int idx : {0 * 5 + 3, 3 * 5 + 0}) {
    a.edges(idx, 1) += h;
    b.edges(idx, 1) -= h;
  }
  CHECK(grad.edges(0 * 5 + 3, 1) == doctest::Approx((ll(a) - ll(b)) / (2 * h)).epsilon(1e-5));
}

TEST_CASE("guided sampling with gamma 0 reproduces plain sampling") {
  const Model model = small_model(Variant::pe_skip, 6, 8);
  const Graph y = Graph::from_labels({1, 2, 1}, {{0, 1, 1}, {1, 2, 1}}, kAlphabet);
  SampleConfig c;
  c.steps = 6;
  c.num_samples = 5;
  c.seed = 3;
  c.extra_blank_nodes = 2;
  const auto plain = sample(model, y, c);
  const auto guided = guided_sample(model, y, c, GuidanceSpec{0.0, {}, {}, {}, {}});
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i].graph == guided[i].graph);
}

TEST_CASE("inpainting: full mask, empty mask and clamps") {
  const Model model = small_model(Variant::pe_skip, 6, 9);
  const Graph y = Graph::from_labels({1, 2, 1}, {{0, 1, 1}}, kAlphabet);
  SampleConfig c;
  c.steps = 6;
  c.num_samples = 4;
  c.seed = 4;
  c.extra_blank_nodes = 1;

  const Graph wanted = Graph::from_labels({2, 2, 1, 0}, {{0, 1, 1}, {1, 2, 1}}, kAlphabet);
  InpaintMask full;
  for (int i = 0; i < 4; ++i) full.nodes.push_back({i, wanted.node_label(i)});
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) full.edges.emplace_back(i, j, wanted.edge_label(i, j));
  for (const auto& s : inpaint_sample(model, y, c, full)) CHECK(s.graph == wanted);

  const auto plain = sample(model, y, c);
  const auto empty = inpaint_sample(model, y, c, InpaintMask{});
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i].graph == empty[i].graph);

  InpaintMask partial;
  partial.nodes = {{0, 2}, {1, 1}};
  partial.edges = {{0, 1, 1}};
  for (const auto& s : inpaint_sample(model, y, c, partial)) {
    CHECK(s.graph.node_label(0) == 2);
    CHECK(s.graph.node_label(1) == 1);
    CHECK(s.graph.edge_label(0, 1) == 1);
    CHECK(s.graph.is_valid());
  }

  InpaintMask bad;
  bad.nodes = {{4, 1}};
  CHECK_THROWS_AS(inpaint_sample(model, y, c, bad), std::invalid_argument);
  bad.nodes = {{0, 3}};
  CHECK_THROWS_AS(inpaint_sample(model, y, c, bad), std::invalid_argument);
  bad.nodes.clear();
  bad.edges = {{1, 1, 1}};
  CHECK_THROWS_AS(inpaint_sample(model, y, c, bad), std::invalid_argument);
}

TEST_CASE("progress reaches one") {
  const Model model = small_model(Variant::pe, 4, 10);
  SampleConfig c;
  c.steps = 4;
  c.num_samples = 4;
  double last = 0.0;
  sample(model, Graph::from_labels({1}, {}, kAlphabet), c, [&](double f) { last = f; });
  CHECK(last == 1.0);
}
