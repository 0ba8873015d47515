#pragma once

#include <Eigen/Dense>

#include <functional>
#include <utility>
#include <vector>

namespace diffalign::ad {

using Mat = Eigen::MatrixXd;

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices. Ops record a closure that pushes
/// the output gradient into their inputs; backward() replays them in reverse.
/// Gradients accumulate in a fixed order, so results are bitwise reproducible.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, bool requires_grad = true);
  Var constant(Mat value) { return leaf(std::move(value), false); }

  const Mat& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  /// Gradient after backward(); zero matrix when nothing flowed into v.
  Mat grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

  // Linear algebra
  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// a + row broadcast over rows (row is 1 x cols).
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  /// a .* row broadcast over rows.
  Var mul_row(Var a, Var row);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  /// a * s where s is a 1x1 value.
  Var scale_by(Var a, Var s);
  /// Repeats a 1 x c row n times.
  Var broadcast_rows(Var row, int n);

  // Nonlinearities
  Var relu(Var a);
  Var row_softmax(Var a);
  Var log_sigmoid(Var a);

  // Shape
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  /// out.row(r) = a.row(index[r]); index -1 yields a zero row.
  Var gather_rows(Var a, std::vector<int> index);
  Var slice_cols(Var a, int start, int count);
  /// n x n -> n^2 x 1 with row i*n + j.
  Var flatten(Var a);
  /// n^2 x 1 -> n x n.
  Var unflatten(Var a, int n);

  // Reductions to 1 x c
  Var col_mean(Var a);
  Var col_std(Var a);
  Var col_min(Var a);
  Var col_max(Var a);

  /// Sum of every entry, 1x1.
  Var sum(Var a);
  /// Sum of selected (row, col) entries, 1x1.
  Var select_sum(Var a, std::vector<std::pair<int, int>> entries);
  /// sum_r w_r * sum_k -target(r,k) * log_softmax(logits)(r,k), 1x1.
  Var cross_entropy(Var logits, const Mat& target, const Eigen::VectorXd& row_weight);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Mat value, bool requires_grad, std::function<void()> backward);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  Mat& grad_ref(Var v);
  const Mat& out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::vector<Node> nodes_;
};

}  // namespace diffalign::ad
