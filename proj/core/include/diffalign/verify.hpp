#pragma once

#include "diffalign/serialize.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace diffalign {

struct VerifyReport {
  std::string suite;
  bool pass = false;
  Json details = Json::object();
};

Json to_json(const VerifyReport& r);

/// Names accepted by run_verify.
std::vector<std::string> verify_suites();

/// Throws std::invalid_argument for an unknown suite.
VerifyReport run_verify(const std::string& suite, std::uint64_t seed = 0);

/// Closed-form posteriors against Bayes' rule on explicitly multiplied
/// transition matrices, K <= 5, T <= 8, every chain kind.
VerifyReport verify_posterior();
/// Constant-row optimum against a simplex grid search on three instances, and
/// identical rows of an unaligned denoiser at the all-blank prior.
VerifyReport verify_theorem1(std::uint64_t seed);
/// Exact reverse-chain distributions on a 2-node, K = 2, T = 3 problem under
/// 20 random (R, Q).
VerifyReport verify_theorem2(std::uint64_t seed);
/// Explicit single-layer copy construction with alpha = beta = 50.
VerifyReport verify_identity_construction(std::uint64_t seed);
/// Masked-node optimum against a per-class simplex grid search.
VerifyReport verify_masked_optimum();
/// Analytic parameter gradients against central differences, every variant.
VerifyReport verify_gradients(std::uint64_t seed);
/// 200 random trials per variant at 1e-5 relative.
VerifyReport verify_equivariance(std::uint64_t seed);

/// Minimizer of sum_k weights[k] * -log p_k over the simplex points whose
/// coordinates are multiples of 1 / resolution.
Eigen::RowVectorXd simplex_grid_minimizer(std::span<const double> weights, int resolution);

}  // namespace diffalign
