#include "diffalign/theory.hpp"
#include "support.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>

using namespace diffalign;
using testing::for_all;
using testing::gen_graph;
using testing::gen_permutation;

namespace {

// Cross-entropy of predicting the constant row p for every node label.
double constant_row_ce(const std::vector<int>& labels, const Eigen::RowVectorXd& p) {
  double s = 0.0;
  for (int l : labels) s -= std::log(p(l));
  return s;
}

// Best constant row over a simplex grid with the given resolution (K = 3).
Eigen::RowVector3d grid_search_3(const std::function<double(const Eigen::RowVectorXd&)>& loss, int resolution) {
  Eigen::RowVector3d best;
  double best_value = std::numeric_limits<double>::infinity();
  for (int a = 0; a <= resolution; ++a)
    for (int b = 0; a + b <= resolution; ++b) {
      const Eigen::RowVector3d p(a, b, resolution - a - b);
      const double v = loss(p / resolution);
      if (v < best_value) {
        best_value = v;
        best = p / resolution;
      }
    }
  return best;
}

}  // namespace

TEST_CASE("optimal equivariant output is the label frequency") {
  const Alphabet a{4, 2};
  const MarginalReport r = optimal_equivariant_output(Graph::from_labels({1, 1, 2, 3}, {}, a));
  CHECK(r.nodes.tail(3).isApprox(Eigen::RowVector3d(0.5, 0.25, 0.25)));
  CHECK(r.nodes(0) == 0.0);
  CHECK(r.edges.isApprox(Eigen::RowVector2d(1.0, 0.0)));
  const MarginalReport single = optimal_equivariant_output(Graph::from_labels({2}, {}, a));
  CHECK(single.nodes.isApprox(Eigen::RowVector4d(0, 0, 1, 0)));
  CHECK(single.edges.isApprox(Eigen::RowVector2d(1, 0)));
  const MarginalReport path = optimal_equivariant_output(Graph::from_labels({1, 1, 1}, {{0, 1, 1}}, a));
  CHECK(path.edges.isApprox(Eigen::RowVector2d(2.0 / 3, 1.0 / 3)));
}

TEST_CASE("property: marginals sum to one and ignore node order") {
  for_all(30, 91, [](Rng& rng, int) {
    const Graph y = gen_graph(6, Alphabet{4, 3}, 0.4, rng);
    const MarginalReport r = optimal_equivariant_output(y);
    CHECK(r.nodes.sum() == doctest::Approx(1.0));
    CHECK(r.edges.sum() == doctest::Approx(1.0));
    const MarginalReport moved = optimal_equivariant_output(apply_permutation(gen_permutation(6, rng), y));
    CHECK(moved.nodes.isApprox(r.nodes));
    CHECK(moved.edges.isApprox(r.edges));
  });
}

TEST_CASE("constant-row cross-entropy is minimized by the marginal") {
  const Alphabet a{3, 2};
  const std::vector<int> labels{0, 2, 2};
  const MarginalReport r = optimal_equivariant_output(Graph::from_labels(labels, {}, a));
  const auto loss = [&](const Eigen::RowVectorXd& p) {
    for (int l : labels)
      if (p(l) == 0.0) return std::numeric_limits<double>::infinity();
    return constant_row_ce(labels, p);
  };
  const Eigen::RowVector3d best = grid_search_3(loss, 300);
  CHECK((best - r.nodes).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(loss(r.nodes) <= loss(best) + 1e-12);
}

TEST_CASE("masked optimum: all masked, none masked") {
  const std::vector<int> labels{1, 2, 2, 0};
  const std::array<bool, 4> all{true, true, true, true};
  const Eigen::MatrixXd full = masked_optimal_output(labels, 3, all);
  for (int i = 0; i < 4; ++i) CHECK(full.row(i).isApprox(Eigen::RowVector3d(0.25, 0.25, 0.5)));
  const std::array<bool, 4> none{false, false, false, false};
  const Eigen::MatrixXd copy = masked_optimal_output(labels, 3, none);
  for (int i = 0; i < 4; ++i) CHECK(copy.row(i) == Eigen::RowVector3d::Unit(labels[static_cast<std::size_t>(i)]));
  CHECK_THROWS_AS(masked_optimal_output(std::span<const int>{}, 3, std::span<const bool>{}), std::invalid_argument);
}

TEST_CASE("masked optimum equals the brute-force minimizer with half masked") {
  // Masked nodes are indistinguishable to an equivariant denoiser, so every
  // masked row gets one shared distribution; unmasked rows see their label.
  const std::vector<int> labels{1, 0, 2, 2};
  const std::array<bool, 4> masked{true, false, true, true};
  const Eigen::MatrixXd got = masked_optimal_output(labels, 3, masked);
  std::vector<int> hidden;
  for (int i = 0; i < 4; ++i)
    if (masked[static_cast<std::size_t>(i)]) hidden.push_back(labels[static_cast<std::size_t>(i)]);
  const auto loss = [&](const Eigen::RowVectorXd& p) {
    for (int l : hidden)
      if (p(l) == 0.0) return std::numeric_limits<double>::infinity();
    return constant_row_ce(hidden, p);
  };
  const Eigen::RowVector3d best = grid_search_3(loss, 600);
  for (int i = 0; i < 4; ++i) {
    if (masked[static_cast<std::size_t>(i)]) {
      CHECK((got.row(i) - best).cwiseAbs().maxCoeff() < 1e-3);
    } else {
      // Any mass off the known label costs cross-entropy, so the optimum is one-hot.
      const Eigen::RowVector3d own = Eigen::RowVector3d::Unit(labels[static_cast<std::size_t>(i)]);
      CHECK(got.row(i) == Eigen::RowVectorXd(own));
    }
    CHECK(got.row(i).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("random helpers produce valid objects") {
  for_all(20, 92, [](Rng& rng, int) {
    const Graph g = random_graph(5, Alphabet{3, 2}, 0.5, rng);
    CHECK(g.is_valid());
    const NodeMapping m = random_mapping(6, 4, rng);
    CHECK(m.rows() == 6);
    CHECK(m.cols() == 4);
    const Permutation p = random_permutation(5, rng);
    CHECK(p.after(p.inverse()) == Permutation::identity(5));
  });
}
