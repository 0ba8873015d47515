#include "diffalign/evalkit.hpp"
#include "diffalign/canonical.hpp"
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

// Bucketed reciprocal-rank sum written out rank by rank.
double mrr_oracle(double t1, double t3, double t5, double t10) {
  double p[11] = {};
  p[1] = t1;
  for (int r = 2; r <= 3; ++r) p[r] = (t3 - t1) / 2;
  for (int r = 4; r <= 5; ++r) p[r] = (t5 - t3) / 2;
  for (int r = 6; r <= 10; ++r) p[r] = (t10 - t5) / 5;
  double s = 0.0;
  for (int r = 1; r <= 10; ++r) s += p[r] / r;
  return s;
}

Graph labelled(std::vector<int> nodes, std::vector<std::tuple<int, int, int>> edges = {}) {
  return Graph::from_labels(nodes, edges, kAlphabet);
}

Model small_model(Variant v, int steps, std::uint64_t seed) {
  DenoiserConfig c;
  c.variant = v;
  c.alphabet = kAlphabet;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.pe_dim = 3;
  return Model{c, init_params(c, seed), NoiseProcess::make(steps, TransitionKind::absorbing, kAlphabet)};
}

double kl(const Eigen::RowVectorXd& q, const Eigen::RowVectorXd& p) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < q.size(); ++k)
    if (q(k) > 0.0) s += q(k) * std::log(q(k) / p(k));
  return s;
}

}  // namespace

TEST_CASE("MRR estimate reproduces the published table") {
  struct Row {
    double t1, t3, t5, t10, mrr;
  };
  for (const Row& r : {Row{4.1, 6.5, 7.8, 9.8, 0.056}, Row{44.1, 65.9, 72.2, 78.7, 0.554},
                       Row{49.0, 70.7, 76.6, 81.8, 0.601}, Row{54.7, 73.3, 77.8, 81.1, 0.639}}) {
    const double got = mrr_estimate(r.t1 / 100, r.t3 / 100, r.t5 / 100, r.t10 / 100);
    CHECK(std::abs(got - r.mrr) < 1e-3);
    CHECK(got == doctest::Approx(mrr_oracle(r.t1 / 100, r.t3 / 100, r.t5 / 100, r.t10 / 100)).epsilon(1e-12));
  }
  CHECK(mrr_estimate(1.0, 1.0, 1.0, 1.0) == 1.0);
  CHECK_THROWS_AS(mrr_estimate(0.5, 0.4, 0.6, 0.7), std::invalid_argument);
  CHECK_THROWS_AS(mrr_estimate(0.5, 0.6, 0.7, 1.2), std::invalid_argument);
}

TEST_CASE("MRR estimate with missing columns widens the buckets") {
  // Only top-1 and top-10: ranks 2..10 share (top10 - top1) evenly.
  double expected = 0.3;
  for (int r = 2; r <= 10; ++r) expected += (0.6 - 0.3) / 9 / r;
  CHECK(mrr_estimate(0.3, std::nullopt, std::nullopt, 0.6) == doctest::Approx(expected));
}

TEST_CASE("top-k accuracy fixture") {
  const std::vector<int> ranks{1, 4, 0};
  CHECK(topk_accuracy(ranks, 1) == doctest::Approx(1.0 / 3));
  CHECK(topk_accuracy(ranks, 3) == doctest::Approx(1.0 / 3));
  CHECK(topk_accuracy(ranks, 5) == doctest::Approx(2.0 / 3));
  CHECK(topk_accuracy(std::vector<int>{1, 1}, 1) == 1.0);
  CHECK(topk_accuracy(std::vector<int>{0, 0}, 10) == 0.0);
  CHECK_THROWS(topk_accuracy(ranks, 0));
}

TEST_CASE("property: top-k is monotone in k") {
  for_all(30, 81, [](Rng& rng, int) {
    std::vector<int> ranks(20);
    for (int& r : ranks) r = static_cast<int>(rng.below(15));
    for (int k = 1; k < 12; ++k) CHECK(topk_accuracy(ranks, k) <= topk_accuracy(ranks, k + 1));
  });
}

TEST_CASE("dedup groups isomorphic samples and ignores blank nodes") {
  const Graph a = labelled({1, 2, 0}, {{0, 1, 1}});
  const Graph b = labelled({2, 1}, {{0, 1, 1}});
  const Graph c = labelled({2, 2});
  const std::vector<Graph> samples{a, c, b, a};
  const auto groups = deduplicate(samples);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].count == 3);
  CHECK(groups[0].representative == 0);
  CHECK(groups[1].count == 1);
  CHECK(groups[0].key == candidate_key(b));
  CHECK(unique_count(samples) == 2);
}

TEST_CASE("ranking formula with counts 70, 20, 10 and equal elbos") {
  std::vector<Graph> samples;
  const Graph g1 = labelled({1}), g2 = labelled({2}), g3 = labelled({1, 1});
  for (int i = 0; i < 10; ++i) samples.push_back(g3);
  for (int i = 0; i < 20; ++i) samples.push_back(g2);
  for (int i = 0; i < 70; ++i) samples.push_back(g1);
  const std::vector<double> elbos(100, -2.0);
  const RankedCandidates r = dedup_and_rank(samples, elbos, 0.9);
  REQUIRE(r.items.size() == 3);
  CHECK(r.items[0].count == 70);
  CHECK(r.items[1].count == 20);
  CHECK(r.items[2].count == 10);
  CHECK(r.items[0].score == doctest::Approx(0.1 * 0.7 + 0.9 / 3));
  CHECK(r.items[1].score == doctest::Approx(0.1 * 0.2 + 0.9 / 3));
  CHECK(r.items[2].score == doctest::Approx(0.1 * 0.1 + 0.9 / 3));
  double total = 0.0;
  for (const auto& c : r.items) total += c.score;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("ranking by counts alone and by elbo alone") {
  std::vector<Graph> samples{labelled({1}), labelled({1}), labelled({2})};
  const std::vector<double> elbos{-5.0, -5.0, -1.0};
  const RankedCandidates by_count = dedup_and_rank(samples, elbos, 0.0);
  CHECK(by_count.items[0].graph == canonical_graph(labelled({1})));
  const RankedCandidates by_elbo = dedup_and_rank(samples, elbos, 1.0);
  CHECK(by_elbo.items[0].graph == canonical_graph(labelled({2})));
  const double soft = std::exp(-1.0) / (std::exp(-1.0) + std::exp(-5.0));
  CHECK(by_elbo.items[0].score == doctest::Approx(soft));
  CHECK_NOTHROW(dedup_and_rank(samples, {}, 0.0));
  CHECK_THROWS(dedup_and_rank(samples, {}, 0.5));
  CHECK_THROWS(dedup_and_rank(samples, elbos, 1.5));
}

TEST_CASE("property: scores sum to one when elbos are equal") {
  for_all(20, 82, [](Rng& rng, int) {
    std::vector<Graph> samples;
    for (int i = 0; i < 30; ++i) samples.push_back(gen_graph(3, kAlphabet, 0.5, rng, false));
    const std::vector<double> elbos(samples.size(), -1.0);
    const RankedCandidates r = dedup_and_rank(samples, elbos, rng.uniform());
    double total = 0.0;
    for (const auto& c : r.items) total += c.score;
    CHECK(total == doctest::Approx(1.0));
  });
}

TEST_CASE("rank_of finds isomorphic truths") {
  const std::vector<Graph> samples{labelled({1, 2}), labelled({1, 2}, {{0, 1, 1}})};
  const RankedCandidates r = dedup_and_rank(samples, {}, 0.0);
  CHECK(rank_of(r, labelled({2, 1}, {{0, 1, 1}})) >= 1);
  CHECK(rank_of(r, labelled({2, 2})) == 0);
}

TEST_CASE("diversity histogram") {
  const Graph a = labelled({1}), b = labelled({2}), c = labelled({1, 1});
  const std::vector<std::vector<Graph>> per_input{{a, a, a}, {a, b, c}, {a, b, a}, {b, b, b}};
  const std::map<int, int> expected{{1, 2}, {2, 1}, {3, 1}};
  CHECK(diversity(per_input) == expected);
}

TEST_CASE("edge MSE over unordered pairs") {
  const Graph truth = labelled({1, 1, 1}, {{0, 1, 1}, {1, 2, 1}});
  CHECK(edge_mse(truth, truth) == 0.0);
  CHECK(edge_mse(labelled({1, 1, 1}, {{0, 1, 1}}), truth) == doctest::Approx(1.0 / 3));
  CHECK_THROWS(edge_mse(labelled({1}), truth));
  const std::vector<std::vector<Graph>> per{{truth, labelled({1, 1, 1})}};
  CHECK(*mean_edge_mse(per, std::vector<Graph>{truth}) == doctest::Approx(1.0 / 3));
  CHECK_FALSE(mean_edge_mse({{labelled({1})}}, std::vector<Graph>{truth}).has_value());
}

TEST_CASE("evaluation report") {
  const Graph a = labelled({1}), b = labelled({2});
  const std::vector<std::vector<Graph>> per{{a, a, b}, {b, b, b}};
  std::vector<RankedCandidates> ranked;
  for (const auto& s : per) ranked.push_back(dedup_and_rank(s, {}, 0.0));
  const std::vector<int> ks{1, 3};
  const EvaluationReport rep = evaluate_ranked(ranked, std::vector<Graph>{b, a}, ks, per);
  CHECK(rep.ranks == std::vector<int>{2, 0});
  CHECK(rep.per_k.at(1) == 0.0);
  CHECK(rep.per_k.at(3) == 0.5);
  const Json j = to_json(rep);
  CHECK(j.contains("per_k"));
  CHECK(j.contains("mrr"));
  CHECK(j.contains("diversity_histogram"));
}

TEST_CASE("absorbing chains have a zero prior term") {
  const Model m = small_model(Variant::pe, 5, 1);
  Rng rng(83);
  const Graph y = gen_graph(3, kAlphabet, 0.5, rng, false);
  const Graph x0 = gen_graph(4, kAlphabet, 0.5, rng, false);
  const ElboTerms terms = elbo_terms(m.process, bind_denoiser(m, make_condition(y, gen_mapping(4, 3, rng), m.config)), x0);
  CHECK(terms.prior == 0.0);
  CHECK(terms.transitions.size() == 4);
}

TEST_CASE("near-perfect denoisers approach elbo 0 from below") {
  const NoiseProcess process = NoiseProcess::make(6, TransitionKind::absorbing, kAlphabet);
  const Graph x0 = labelled({1, 2, 2}, {{0, 1, 1}});
  double previous = -std::numeric_limits<double>::infinity();
  for (double eps : {1e-1, 1e-2, 1e-4, 1e-8}) {
    const DenoiseFn d = [&](const GraphTensor&, int) {
      SoftGraph s(GraphTensor::one_hot(x0));
      s.nodes = s.nodes * (1 - eps) + Eigen::MatrixXd::Constant(3, 3, eps / 3);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          if (i != j) s.edges.row(i * 3 + j) = s.edges.row(i * 3 + j) * (1 - eps) + Eigen::RowVector2d(eps / 2, eps / 2);
      return s;
    };
    const double e = elbo_terms(process, d, x0).elbo();
    CHECK(e < 0.0);
    CHECK(e > previous);
    previous = e;
  }
  CHECK(previous > -1e-6);
  const DenoiseFn exact = [&](const GraphTensor&, int) { return SoftGraph(GraphTensor::one_hot(x0)); };
  CHECK(std::abs(elbo_terms(process, exact, x0).elbo()) < 1e-12);
}

TEST_CASE("elbo of a constant denoiser equals the enumerated bound") {
  for (auto kind : {TransitionKind::absorbing, TransitionKind::uniform}) {
    const int steps = 4;
    const NoiseProcess process = NoiseProcess::make(steps, kind, kAlphabet);
    const TransitionModel& tm = process.nodes;
    const Eigen::RowVector3d p0(0.2, 0.5, 0.3);
    const DenoiseFn d = [&](const GraphTensor& x, int) {
      SoftGraph s(GraphTensor::zeros(x.n, 3, 2));
      s.nodes.row(0) = p0;
      s.edges(0, 0) = 1.0;
      return s;
    };
    const int x0 = 1;
    // p(x_s | x_t) = sum_{x0'} p0(x0') q(x_s | x_t, x0') over reachable x0'.
    const auto model_step = [&](int xt, int t) {
      Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(3);
      for (int a = 0; a < 3; ++a)
        if (tm.evidence(xt, a, t) > 0.0) out += p0(a) * tm.posterior(xt, a, t);
      return Eigen::RowVectorXd(out / out.sum());
    };
    double loss = kl(tm.forward_marginal(x0, steps), tm.prior());
    for (int t = 2; t <= steps; ++t)
      for (int xt = 0; xt < 3; ++xt) {
        const double w = tm.forward_marginal(x0, t)(xt);
        if (w > 0.0) loss += w * kl(tm.posterior(xt, x0, t), model_step(xt, t));
      }
    for (int x1 = 0; x1 < 3; ++x1) {
      const double w = tm.forward_marginal(x0, 1)(x1);
      if (w > 0.0) loss -= w * std::log(model_step(x1, 1)(x0));
    }
    CHECK(elbo_terms(process, d, labelled({x0})).elbo() == doctest::Approx(-loss).epsilon(1e-12));
  }
}

TEST_CASE("property: elbo is non-positive and aligned-invariant") {
  for (Variant v : {Variant::pe, Variant::pe_skip, Variant::input_align}) {
    const Model m = small_model(v, 5, 2);
    for_all(5, 84, [&](Rng& rng, int) {
      const Graph y = gen_graph(3, kAlphabet, 0.5, rng, false);
      const Graph x0 = gen_graph(4, kAlphabet, 0.5, rng, false);
      const Condition cond = make_condition(y, gen_mapping(4, 3, rng), m.config);
      const double e = elbo(m, x0, cond);
      CHECK(e <= 0.0);
      const Permutation r = gen_permutation(4, rng);
      const Permutation q = gen_permutation(3, rng);
      CHECK(elbo(m, apply_permutation(r, x0), permute_condition(cond, r, q)) == doctest::Approx(e).epsilon(1e-6));
    });
  }
}
