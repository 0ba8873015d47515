#include "diffalign/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace diffalign::ad {

namespace {
void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: ") + what);
}
}  // namespace

Var Tape::leaf(Mat value, bool requires_grad) { return push(std::move(value), requires_grad, nullptr); }

Var Tape::push(Mat value, bool requires_grad, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(value), Mat(), requires_grad, requires_grad ? std::move(backward) : nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var out) {
  require(value(out).rows() == 1 && value(out).cols() == 1, "backward needs a scalar output");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!needs(out)) return;
  grad_ref(out).setOnes();
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

Var Tape::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), "matmul shape mismatch");
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a) * value(b), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, b, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) grad_ref(a).noalias() += g * value(b).transpose();
      if (needs(b)) grad_ref(b).noalias() += value(a).transpose() * g;
    };
  }
  return out;
}

Var Tape::matmul_bt(Var a, Var b) {
  require(value(a).cols() == value(b).cols(), "matmul_bt shape mismatch");
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a) * value(b).transpose(), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, b, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) grad_ref(a).noalias() += g * value(b);
      if (needs(b)) grad_ref(b).noalias() += g.transpose() * value(a);
    };
  }
  return out;
}

Var Tape::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add shape mismatch");
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a) + value(b), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, b, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) grad_ref(a) += g;
      if (needs(b)) grad_ref(b) += g;
    };
  }
  return out;
}

Var Tape::sub(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "sub shape mismatch");
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a) - value(b), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, b, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) grad_ref(a) += g;
      if (needs(b)) grad_ref(b) -= g;
    };
  }
  return out;
}

Var Tape::add_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row shape mismatch");
  const bool rg = needs(a) || needs(row);
  Mat v = value(a);
  v.rowwise() += value(row).row(0);
  Var out = push(std::move(v), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, row, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) grad_ref(a) += g;
      if (needs(row)) grad_ref(row) += g.colwise().sum();
    };
  }
  return out;
}

Var Tape::mul(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "mul shape mismatch");
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a).cwiseProduct(value(b)), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, b, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) grad_ref(a) += g.cwiseProduct(value(b));
      if (needs(b)) grad_ref(b) += g.cwiseProduct(value(a));
    };
  }
  return out;
}

Var Tape::mul_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "mul_row shape mismatch");
  const bool rg = needs(a) || needs(row);
  Mat v = value(a);
  v.array().rowwise() *= value(row).row(0).array();
  Var out = push(std::move(v), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, row, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) {
        Mat ga = g;
        ga.array().rowwise() *= value(row).row(0).array();
        grad_ref(a) += ga;
      }
      if (needs(row)) grad_ref(row) += g.cwiseProduct(value(a)).colwise().sum();
    };
  }
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = push(value(a) * s, needs(a), nullptr);
  if (needs(a)) nodes_.back().backward = [this, a, s, id = out.id] { grad_ref(a) += out_grad(id) * s; };
  return out;
}

Var Tape::add_scalar(Var a, double s) {
  Var out = push(value(a).array() + s, needs(a), nullptr);
  if (needs(a)) nodes_.back().backward = [this, a, id = out.id] { grad_ref(a) += out_grad(id); };
  return out;
}

Var Tape::scale_by(Var a, Var s) {
  require(value(s).size() == 1, "scale_by expects a 1x1 factor");
  const bool rg = needs(a) || needs(s);
  Var out = push(value(a) * value(s)(0, 0), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, a, s, id = out.id] {
      const Mat& g = out_grad(id);
      if (needs(a)) grad_ref(a) += g * value(s)(0, 0);
      if (needs(s)) grad_ref(s)(0, 0) += g.cwiseProduct(value(a)).sum();
    };
  }
  return out;
}

Var Tape::broadcast_rows(Var row, int n) {
  require(value(row).rows() == 1, "broadcast_rows expects a row");
  Var out = push(value(row).replicate(n, 1), needs(row), nullptr);
  if (needs(row)) nodes_.back().backward = [this, row, id = out.id] { grad_ref(row) += out_grad(id).colwise().sum(); };
  return out;
}

Var Tape::relu(Var a) {
  Var out = push(value(a).cwiseMax(0.0), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, id = out.id] {
      grad_ref(a) += (value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(out_grad(id));
    };
  }
  return out;
}

Var Tape::row_softmax(Var a) {
  const Mat& x = value(a);
  Mat p(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    p.row(r) = (x.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  Var out = push(std::move(p), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, id = out.id] {
      const Mat& g = out_grad(id);
      const Mat& s = value(Var{id});
      Eigen::VectorXd dot = g.cwiseProduct(s).rowwise().sum();
      Mat ga = g;
      ga.colwise() -= dot;
      grad_ref(a) += ga.cwiseProduct(s);
    };
  }
  return out;
}

Var Tape::log_sigmoid(Var a) {
  // log sigma(x) = min(x, 0) - log1p(exp(-|x|))
  const Mat& x = value(a);
  Mat v = x.unaryExpr([](double z) { return std::min(z, 0.0) - std::log1p(std::exp(-std::abs(z))); });
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, id = out.id] {
      // d/dx log sigma(x) = sigma(-x)
      Mat d = value(a).unaryExpr([](double z) {
        return z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
      });
      grad_ref(a) += d.cwiseProduct(out_grad(id));
    };
  }
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    require(value(p).rows() == rows, "concat_cols row mismatch");
    cols += value(p).cols();
    rg = rg || needs(p);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  Var out = push(std::move(v), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, parts, id = out.id] {
      const Mat& g = out_grad(id);
      Eigen::Index off = 0;
      for (Var p : parts) {
        const Eigen::Index c = value(p).cols();
        if (needs(p)) grad_ref(p) += g.middleCols(off, c);
        off += c;
      }
    };
  }
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const Eigen::Index cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    require(value(p).cols() == cols, "concat_rows column mismatch");
    rows += value(p).rows();
    rg = rg || needs(p);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var out = push(std::move(v), rg, nullptr);
  if (rg) {
    nodes_.back().backward = [this, parts, id = out.id] {
      const Mat& g = out_grad(id);
      Eigen::Index off = 0;
      for (Var p : parts) {
        const Eigen::Index r = value(p).rows();
        if (needs(p)) grad_ref(p) += g.middleRows(off, r);
        off += r;
      }
    };
  }
  return out;
}

Var Tape::gather_rows(Var a, std::vector<int> index) {
  const Mat& x = value(a);
  Mat v = Mat::Zero(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    require(index[r] < x.rows(), "gather_rows index out of range");
    v.row(static_cast<Eigen::Index>(r)) = x.row(index[r]);
  }
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, index = std::move(index), id = out.id] {
      const Mat& g = out_grad(id);
      Mat& ga = grad_ref(a);
      for (std::size_t r = 0; r < index.size(); ++r)
        if (index[r] >= 0) ga.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    };
  }
  return out;
}

Var Tape::slice_cols(Var a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= value(a).cols(), "slice_cols out of range");
  Var out = push(value(a).middleCols(start, count), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, start, count, id = out.id] {
      grad_ref(a).middleCols(start, count) += out_grad(id);
    };
  }
  return out;
}

Var Tape::flatten(Var a) {
  const Mat& x = value(a);
  require(x.rows() == x.cols(), "flatten expects a square matrix");
  const Eigen::Index n = x.rows();
  Mat v(n * n, 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) v(i * n + j, 0) = x(i, j);
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, n, id = out.id] {
      const Mat& g = out_grad(id);
      Mat& ga = grad_ref(a);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) ga(i, j) += g(i * n + j, 0);
    };
  }
  return out;
}

Var Tape::unflatten(Var a, int n) {
  const Mat& x = value(a);
  require(x.cols() == 1 && x.rows() == static_cast<Eigen::Index>(n) * n, "unflatten shape mismatch");
  Mat v(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) v(i, j) = x(static_cast<Eigen::Index>(i) * n + j, 0);
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, n, id = out.id] {
      const Mat& g = out_grad(id);
      Mat& ga = grad_ref(a);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) ga(static_cast<Eigen::Index>(i) * n + j, 0) += g(i, j);
    };
  }
  return out;
}

Var Tape::col_mean(Var a) {
  const Eigen::Index r = value(a).rows();
  require(r > 0, "col_mean of empty matrix");
  Var out = push(value(a).colwise().mean(), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, r, id = out.id] {
      grad_ref(a).rowwise() += out_grad(id).row(0) / static_cast<double>(r);
    };
  }
  return out;
}

Var Tape::col_std(Var a) {
  // Population standard deviation with a small floor inside the root.
  constexpr double kFloor = 1e-8;
  const Mat& x = value(a);
  const Eigen::Index r = x.rows();
  require(r > 0, "col_std of empty matrix");
  Eigen::RowVectorXd mean = x.colwise().mean();
  Mat centered = x.rowwise() - mean;
  Eigen::RowVectorXd sd = ((centered.array().square().colwise().sum() / static_cast<double>(r)) + kFloor).sqrt();
  Var out = push(sd, needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, r, id = out.id] {
      const Mat& x2 = value(a);
      Eigen::RowVectorXd m = x2.colwise().mean();
      Mat c = x2.rowwise() - m;
      Eigen::RowVectorXd s = value(Var{id}).row(0);
      Eigen::RowVectorXd coef = out_grad(id).row(0).array() / (s.array() * static_cast<double>(r));
      grad_ref(a) += (c.array().rowwise() * coef.array()).matrix();
    };
  }
  return out;
}

namespace {
Eigen::VectorXi arg_extreme(const Mat& x, bool want_max) {
  Eigen::VectorXi idx(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < x.rows(); ++r)
      if (want_max ? x(r, c) > x(best, c) : x(r, c) < x(best, c)) best = r;
    idx(c) = static_cast<int>(best);
  }
  return idx;
}
}  // namespace

Var Tape::col_min(Var a) {
  const Mat& x = value(a);
  require(x.rows() > 0, "col_min of empty matrix");
  Eigen::VectorXi idx = arg_extreme(x, false);
  Mat v(1, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) v(0, c) = x(idx(c), c);
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, idx, id = out.id] {
      const Mat& g = out_grad(id);
      Mat& ga = grad_ref(a);
      for (Eigen::Index c = 0; c < g.cols(); ++c) ga(idx(c), c) += g(0, c);
    };
  }
  return out;
}

Var Tape::col_max(Var a) {
  const Mat& x = value(a);
  require(x.rows() > 0, "col_max of empty matrix");
  Eigen::VectorXi idx = arg_extreme(x, true);
  Mat v(1, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) v(0, c) = x(idx(c), c);
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, idx, id = out.id] {
      const Mat& g = out_grad(id);
      Mat& ga = grad_ref(a);
      for (Eigen::Index c = 0; c < g.cols(); ++c) ga(idx(c), c) += g(0, c);
    };
  }
  return out;
}

Var Tape::sum(Var a) {
  Mat v(1, 1);
  v(0, 0) = value(a).sum();
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) nodes_.back().backward = [this, a, id = out.id] { grad_ref(a).array() += out_grad(id)(0, 0); };
  return out;
}

Var Tape::select_sum(Var a, std::vector<std::pair<int, int>> entries) {
  const Mat& x = value(a);
  Mat v = Mat::Zero(1, 1);
  for (auto [r, c] : entries) {
    require(r >= 0 && r < x.rows() && c >= 0 && c < x.cols(), "select_sum index out of range");
    v(0, 0) += x(r, c);
  }
  Var out = push(std::move(v), needs(a), nullptr);
  if (needs(a)) {
    nodes_.back().backward = [this, a, entries = std::move(entries), id = out.id] {
      const double g = out_grad(id)(0, 0);
      Mat& ga = grad_ref(a);
      for (auto [r, c] : entries) ga(r, c) += g;
    };
  }
  return out;
}

Var Tape::cross_entropy(Var logits, const Mat& target, const Eigen::VectorXd& row_weight) {
  const Mat& z = value(logits);
  require(target.rows() == z.rows() && target.cols() == z.cols(), "cross_entropy target shape mismatch");
  require(row_weight.size() == z.rows(), "cross_entropy weight length mismatch");
  Mat logp(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    const double lse = m + std::log((z.row(r).array() - m).exp().sum());
    logp.row(r) = z.row(r).array() - lse;
    if (row_weight(r) != 0.0) total -= row_weight(r) * target.row(r).dot(logp.row(r));
  }
  Mat v(1, 1);
  v(0, 0) = total;
  Var out = push(std::move(v), needs(logits), nullptr);
  if (needs(logits)) {
    nodes_.back().backward = [this, logits, target, row_weight, logp = std::move(logp), id = out.id] {
      const double g = out_grad(id)(0, 0);
      Mat& gz = grad_ref(logits);
      for (Eigen::Index r = 0; r < logp.rows(); ++r) {
        if (row_weight(r) == 0.0) continue;
        const double mass = target.row(r).sum();
        gz.row(r) += g * row_weight(r) * (mass * logp.row(r).array().exp() - target.row(r).array()).matrix();
      }
    };
  }
  return out;
}

}  // namespace diffalign::ad
