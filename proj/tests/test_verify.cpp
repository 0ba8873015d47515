#include "diffalign/verify.hpp"

#include <doctest.h>

using namespace diffalign;

TEST_CASE("every verify suite passes") {
  for (const std::string& suite : verify_suites()) {
    const VerifyReport r = run_verify(suite, 0);
    INFO(suite, " ", r.details.dump());
    CHECK(r.pass);
    CHECK(to_json(r).at("suite") == suite);
  }
  CHECK_THROWS_AS(run_verify("nope"), std::invalid_argument);
}

TEST_CASE("simplex grid minimizer finds the weight proportions") {
  const std::vector<double> w{1.0, 2.0, 1.0};
  const Eigen::RowVectorXd p = simplex_grid_minimizer(w, 100);
  CHECK(p(0) == doctest::Approx(0.25));
  CHECK(p(1) == doctest::Approx(0.5));
  const std::vector<double> zero{0.0, 3.0};
  CHECK(simplex_grid_minimizer(zero, 10)(1) == doctest::Approx(1.0));
}
