#include "diffalign/autodiff.hpp"
#include "diffalign/rng.hpp"

#include <doctest.h>

#include <functional>

using namespace diffalign;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Central differences of a scalar function of one matrix input.
Mat numeric_grad(const Mat& x, const std::function<double(const Mat&)>& f, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Mat a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

using Op = std::function<Var(Tape&, Var, Var)>;

// Checks d sum(w .* op(x, other)) / dx against central differences.
void check_op(const Op& op, Mat x, Mat other, const char* name) {
  Rng rng(41);
  Mat weight;
  const auto eval = [&](const Mat& input, bool record) {
    Tape tape;
    const Var xv = tape.leaf(input);
    const Var ov = tape.leaf(other);
    const Var out = op(tape, xv, ov);
    if (weight.size() == 0) weight = random_mat(int(tape.value(out).rows()), int(tape.value(out).cols()), rng);
    const Var loss = tape.sum(tape.mul(out, tape.constant(weight)));
    if (record) {
      tape.backward(loss);
      return std::make_pair(tape.value(loss)(0, 0), tape.grad(xv));
    }
    return std::make_pair(tape.value(loss)(0, 0), Mat());
  };
  const Mat analytic = eval(x, true).second;
  const Mat numeric = numeric_grad(x, [&](const Mat& in) { return eval(in, false).first; });
  INFO(name);
  CHECK((analytic - numeric).cwiseAbs().maxCoeff() < 1e-6 * std::max(1.0, numeric.cwiseAbs().maxCoeff()));
}

}  // namespace

TEST_CASE("every op matches central differences") {
  Rng rng(42);
  const Mat a = random_mat(3, 4, rng);
  const Mat b = random_mat(4, 2, rng);
  const Mat c = random_mat(3, 4, rng);
  const Mat row = random_mat(1, 4, rng);
  const Mat sq = random_mat(3, 3, rng);
  // Keep entries away from the ReLU kink and min/max ties.
  Mat spread = a;
  for (Eigen::Index i = 0; i < spread.size(); ++i) spread(i) = (i + 1) * 0.37 * (i % 2 ? 1 : -1);

  check_op([](Tape& t, Var x, Var o) { return t.matmul(x, o); }, a, b, "matmul lhs");
  check_op([](Tape& t, Var x, Var o) { return t.matmul(o, x); }, b, a, "matmul rhs");
  check_op([](Tape& t, Var x, Var o) { return t.matmul_bt(x, o); }, a, c, "matmul_bt lhs");
  check_op([](Tape& t, Var x, Var o) { return t.matmul_bt(o, x); }, a, c, "matmul_bt rhs");
  check_op([](Tape& t, Var x, Var o) { return t.add(x, o); }, a, c, "add");
  check_op([](Tape& t, Var x, Var o) { return t.sub(o, x); }, a, c, "sub");
  check_op([](Tape& t, Var x, Var o) { return t.add_row(o, x); }, row, a, "add_row");
  check_op([](Tape& t, Var x, Var o) { return t.mul(x, o); }, a, c, "mul");
  check_op([](Tape& t, Var x, Var o) { return t.mul_row(o, x); }, row, a, "mul_row row");
  check_op([](Tape& t, Var x, Var o) { return t.mul_row(x, o); }, a, row, "mul_row matrix");
  check_op([](Tape& t, Var x, Var) { return t.scale(x, -2.5); }, a, a, "scale");
  check_op([](Tape& t, Var x, Var) { return t.add_scalar(x, 3.0); }, a, a, "add_scalar");
  check_op([](Tape& t, Var x, Var o) { return t.scale_by(o, x); }, Mat::Constant(1, 1, 0.7), a, "scale_by");
  check_op([](Tape& t, Var x, Var) { return t.broadcast_rows(x, 5); }, row, row, "broadcast_rows");
  check_op([](Tape& t, Var x, Var) { return t.relu(x); }, spread, a, "relu");
  check_op([](Tape& t, Var x, Var) { return t.row_softmax(x); }, a, a, "row_softmax");
  check_op([](Tape& t, Var x, Var) { return t.log_sigmoid(x); }, a, a, "log_sigmoid");
  check_op([](Tape& t, Var x, Var o) { return t.concat_cols({x, o, x}); }, a, c, "concat_cols");
  check_op([](Tape& t, Var x, Var o) { return t.concat_rows({o, x}); }, a, c, "concat_rows");
  check_op([](Tape& t, Var x, Var) { return t.gather_rows(x, {2, -1, 0, 2}); }, a, a, "gather_rows");
  check_op([](Tape& t, Var x, Var) { return t.slice_cols(x, 1, 2); }, a, a, "slice_cols");
  check_op([](Tape& t, Var x, Var) { return t.flatten(x); }, sq, sq, "flatten");
  check_op([](Tape& t, Var x, Var) { return t.unflatten(x, 3); }, sq.reshaped(9, 1), sq, "unflatten");
  check_op([](Tape& t, Var x, Var) { return t.col_mean(x); }, a, a, "col_mean");
  check_op([](Tape& t, Var x, Var) { return t.col_std(x); }, a, a, "col_std");
  check_op([](Tape& t, Var x, Var) { return t.col_min(x); }, spread, a, "col_min");
  check_op([](Tape& t, Var x, Var) { return t.col_max(x); }, spread, a, "col_max");
  check_op([](Tape& t, Var x, Var) { return t.select_sum(x, {{0, 1}, {2, 3}, {0, 1}}); }, a, a, "select_sum");
  Mat target = Mat::Zero(3, 4);
  target(0, 1) = target(1, 3) = 1.0;
  target(2, 0) = target(2, 2) = 0.5;
  check_op([&](Tape& t, Var x, Var) { return t.cross_entropy(x, target, Eigen::Vector3d(1.0, 2.0, 0.5)); }, a, a,
           "cross_entropy");
}

TEST_CASE("gradients accumulate across uses and skip constants") {
  Tape tape;
  const Var x = tape.leaf(Mat::Constant(1, 1, 3.0));
  const Var k = tape.constant(Mat::Constant(1, 1, 2.0));
  const Var y = tape.add(tape.mul(x, x), tape.mul(x, k));
  tape.backward(tape.sum(y));
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(2 * 3.0 + 2.0));
  CHECK(tape.grad(k).isZero());
  CHECK_FALSE(tape.requires_grad(k));
}

TEST_CASE("softmax rows are normalized and stable for large logits") {
  Tape tape;
  const Var s = tape.row_softmax(tape.constant((Mat(2, 3) << 1000, 1001, 999, -5, 0, 5).finished()));
  const Mat v = tape.value(s);
  CHECK(v.allFinite());
  CHECK(v.row(0).sum() == doctest::Approx(1.0));
  CHECK(v.row(1).sum() == doctest::Approx(1.0));
}
