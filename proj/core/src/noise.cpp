#include "diffalign/noise.hpp"

#include <cmath>
#include <stdexcept>

namespace diffalign {

std::string to_string(TransitionKind kind) {
  switch (kind) {
    case TransitionKind::absorbing: return "absorbing";
    case TransitionKind::uniform: return "uniform";
    case TransitionKind::marginal: return "marginal";
  }
  return "absorbing";
}

TransitionKind transition_kind_from_string(const std::string& s) {
  if (s == "absorbing") return TransitionKind::absorbing;
  if (s == "uniform") return TransitionKind::uniform;
  if (s == "marginal") return TransitionKind::marginal;
  throw std::invalid_argument("unknown transition kind: " + s);
}

std::vector<double> beta_schedule(int steps, TransitionKind /*kind*/) {
  if (steps < 1) throw std::invalid_argument("beta_schedule: T must be >= 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) betas[static_cast<std::size_t>(t - 1)] = 1.0 / static_cast<double>(steps - t + 1);
  return betas;
}

Eigen::MatrixXd transition_matrix(double beta, TransitionKind kind, int alphabet, int absorb_index,
                                  const std::optional<Eigen::RowVectorXd>& marginals) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("transition_matrix: beta outside [0, 1]");
  if (alphabet < 1) throw std::invalid_argument("transition_matrix: empty alphabet");
  Eigen::RowVectorXd target(alphabet);
  switch (kind) {
    case TransitionKind::absorbing:
      if (absorb_index < 0 || absorb_index >= alphabet) throw std::invalid_argument("transition_matrix: absorb index out of range");
      target.setZero();
      target(absorb_index) = 1.0;
      break;
    case TransitionKind::uniform:
      target.setConstant(1.0 / alphabet);
      break;
    case TransitionKind::marginal:
      if (!marginals) throw std::invalid_argument("transition_matrix: marginal kind requires marginals");
      if (marginals->size() != alphabet || (marginals->array() < 0.0).any() ||
          std::abs(marginals->sum() - 1.0) > 1e-9) {
        throw std::invalid_argument("transition_matrix: marginals must be a distribution over the alphabet");
      }
      target = *marginals;
      break;
  }
  Eigen::MatrixXd q = (1.0 - beta) * Eigen::MatrixXd::Identity(alphabet, alphabet);
  q.rowwise() += beta * target;
  return q;
}

TransitionModel::TransitionModel(int steps, TransitionKind kind, int alphabet, int absorb_index,
                                 std::optional<Eigen::RowVectorXd> marginals)
    : steps_(steps), kind_(kind), alphabet_(alphabet), absorb_(absorb_index), marginals_(std::move(marginals)) {
  betas_ = beta_schedule(steps, kind);
  cumulative_.push_back(Eigen::MatrixXd::Identity(alphabet, alphabet));
  for (int t = 1; t <= steps; ++t) {
    step_.push_back(transition_matrix(betas_[static_cast<std::size_t>(t - 1)], kind, alphabet, absorb_index, marginals_));
    // beta = 1 gives rows 1 v^T, and any stochastic matrix times it is itself.
    if (betas_[static_cast<std::size_t>(t - 1)] == 1.0) cumulative_.push_back(step_.back());
    else cumulative_.push_back(cumulative_.back() * step_.back());
  }
}

void TransitionModel::check_step(int t, int lo) const {
  if (t < lo || t > steps_) {
    throw std::out_of_range("time step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(steps_) + "]");
  }
}

double TransitionModel::beta(int t) const {
  check_step(t, 1);
  return betas_[static_cast<std::size_t>(t - 1)];
}

const Eigen::MatrixXd& TransitionModel::step_matrix(int t) const {
  check_step(t, 1);
  return step_[static_cast<std::size_t>(t - 1)];
}

const Eigen::MatrixXd& TransitionModel::cumulative(int t) const {
  check_step(t, 0);
  return cumulative_[static_cast<std::size_t>(t)];
}

Eigen::RowVectorXd TransitionModel::forward_marginal(int x0, int t) const {
  check_step(t, 1);
  if (x0 < 0 || x0 >= alphabet_) throw DimensionError("forward_marginal: state out of range");
  return cumulative_[static_cast<std::size_t>(t)].row(x0);
}

Eigen::RowVectorXd TransitionModel::forward_marginal(const Eigen::RowVectorXd& x0, int t) const {
  check_step(t, 1);
  if (x0.size() != alphabet_) throw DimensionError("forward_marginal: width mismatch");
  return x0 * cumulative_[static_cast<std::size_t>(t)];
}

Eigen::RowVectorXd TransitionModel::posterior(int xt, int x0, int t) const {
  check_step(t, 1);
  if (xt < 0 || xt >= alphabet_ || x0 < 0 || x0 >= alphabet_) throw DimensionError("posterior: state out of range");
  const double denom = cumulative_[static_cast<std::size_t>(t)](x0, xt);
  if (!(denom > 0.0)) throw std::domain_error("posterior: x_t is unreachable from x_0");
  // (x_t Q_t^T) is column xt of Q_t; (x_0 Qbar_{t-1}) is row x0.
  Eigen::RowVectorXd num = step_[static_cast<std::size_t>(t - 1)].col(xt).transpose().cwiseProduct(
      cumulative_[static_cast<std::size_t>(t - 1)].row(x0));
  return num / denom;
}

Eigen::MatrixXd TransitionModel::span_matrix(int s, int t) const {
  check_step(s, 0);
  check_step(t, 0);
  if (s > t) throw std::out_of_range("span_matrix: s must not exceed t");
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(alphabet_, alphabet_);
  for (int k = s + 1; k <= t; ++k) m = m * step_[static_cast<std::size_t>(k - 1)];
  return m;
}

Eigen::RowVectorXd TransitionModel::posterior_between(int xt, int x0, int t, int s) const {
  check_step(t, 1);
  check_step(s, 0);
  if (s >= t) throw std::out_of_range("posterior_between: s must be below t");
  if (xt < 0 || xt >= alphabet_ || x0 < 0 || x0 >= alphabet_) throw DimensionError("posterior: state out of range");
  const double denom = cumulative_[static_cast<std::size_t>(t)](x0, xt);
  if (!(denom > 0.0)) throw std::domain_error("posterior: x_t is unreachable from x_0");
  Eigen::MatrixXd span = span_matrix(s, t);
  return span.col(xt).transpose().cwiseProduct(cumulative_[static_cast<std::size_t>(s)].row(x0)) / denom;
}

Eigen::RowVectorXd TransitionModel::prior() const { return cumulative_.back().row(0); }

PosteriorTable::PosteriorTable(const TransitionModel& chain, int t, int s) : t_(t), s_(s) {
  if (t < 1 || t > chain.steps() || s < 0 || s >= t) throw std::out_of_range("PosteriorTable: need 0 <= s < t <= T");
  const int k = chain.alphabet();
  const Eigen::MatrixXd span = chain.span_matrix(s, t);
  const Eigen::MatrixXd& bar_s = chain.cumulative(s);
  const Eigen::MatrixXd& bar_t = chain.cumulative(t);
  rows_.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Zero(k, k));
  for (int xt = 0; xt < k; ++xt)
    for (int x0 = 0; x0 < k; ++x0) {
      const double denom = bar_t(x0, xt);
      if (denom > 0.0)
        rows_[static_cast<std::size_t>(xt)].row(x0) = span.col(xt).transpose().cwiseProduct(bar_s.row(x0)) / denom;
    }
}

Eigen::RowVectorXd PosteriorTable::mix(int xt, const Eigen::RowVectorXd& p0) const {
  const Eigen::MatrixXd& r = rows(xt);
  if (p0.size() != r.rows()) throw DimensionError("PosteriorTable::mix: width mismatch");
  Eigen::RowVectorXd out = p0 * r;
  const double total = out.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericError("reverse step: mixture has no mass at t=" + std::to_string(t_));
  }
  return out / total;
}

NoiseProcess NoiseProcess::make(int steps, TransitionKind kind, Alphabet alphabet, int blank_index, int none_index,
                                std::optional<Eigen::RowVectorXd> node_marginals,
                                std::optional<Eigen::RowVectorXd> edge_marginals) {
  return NoiseProcess{TransitionModel(steps, kind, alphabet.node, blank_index, std::move(node_marginals)),
                      TransitionModel(steps, kind, alphabet.edge, none_index, std::move(edge_marginals))};
}

namespace {
int draw(const Eigen::RowVectorXd& probs, Rng& rng) {
  return static_cast<int>(rng.categorical(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size()))));
}
}  // namespace

Graph forward_sample(const NoiseProcess& process, const Graph& g0, int t, Rng& rng) {
  if (t == 0) return g0;
  Graph out(g0.size(), g0.alphabet(), g0.blank_index(), g0.none_index());
  for (int i = 0; i < g0.size(); ++i) out.set_node_label(i, draw(process.nodes.forward_marginal(g0.node_label(i), t), rng));
  for (int i = 0; i < g0.size(); ++i)
    for (int j = i + 1; j < g0.size(); ++j)
      out.set_edge_label(i, j, draw(process.edges.forward_marginal(g0.edge_label(i, j), t), rng));
  return out;
}

Graph sample_prior(const NoiseProcess& process, int n, Alphabet alphabet, int blank_index, int none_index, Rng& rng) {
  Graph out(n, alphabet, blank_index, none_index);
  if (process.nodes.kind() == TransitionKind::absorbing) return out;
  const Eigen::RowVectorXd pn = process.nodes.prior();
  const Eigen::RowVectorXd pe = process.edges.prior();
  for (int i = 0; i < n; ++i) out.set_node_label(i, draw(pn, rng));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.set_edge_label(i, j, draw(pe, rng));
  return out;
}

}  // namespace diffalign
