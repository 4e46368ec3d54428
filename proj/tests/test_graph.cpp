#include "spats/graph.hpp"

#include "doctest.h"
#include "helpers.hpp"

using namespace spats;
using G = Graph<double>;

namespace {

Param<double> make_param(int rows, int cols, uint64_t seed, double scale = 1.0) {
  Param<double> p;
  p.value.resize(rows, cols);
  Rng rng(seed);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) p.value(r, c) = rng.uniform(-scale, scale);
  return p;
}

}  // namespace

TEST_CASE("graph: constant loss has zero gradients") {
  Param<double> w = make_param(3, 3, 1);
  G g;
  auto c = g.constant(Mat<double>::Constant(1, 1, 5.0));
  w.zero_grad();
  g.backward(c);
  CHECK(w.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("graph: linear layer closed-form gradient") {
  // L = |Wx|^2 / 2  =>  dL/dW = (Wx) x^T
  Param<double> w = make_param(3, 4, 2);
  Mat<double> x = make_param(1, 4, 3).value;  // row vector input
  G g;
  auto y = g.linear(g.constant(x), w, nullptr);
  auto loss = g.scale(g.sum_all(g.square(y)), 0.5);
  w.zero_grad();
  g.backward(loss);
  Eigen::VectorXd wx = w.value * x.row(0).transpose();
  Mat<double> expected = wx * x.row(0);
  CHECK((w.grad - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("graph: finite differences across the op set") {
  Param<double> w1 = make_param(5, 6, 10, 0.7);
  Param<double> b1 = make_param(1, 5, 11, 0.2);
  Param<double> w2 = make_param(4, 5, 12, 0.7);
  Mat<double> x = make_param(3, 2, 13, 0.8).value;
  Mat<double> mask = (make_param(3, 4, 14).value.array() > 0).cast<double>();

  auto build = [&](G& g) {
    auto enc = g.positional_encode(g.constant(x), 1, true);  // 3 x 6
    auto h = g.relu(g.linear(enc, w1, &b1));
    auto out = g.linear(h, w2, nullptr);  // 3 x 4
    auto sig = g.sigmoid(out);
    auto m = g.mul_const(g.abs_of(sig), mask);
    auto part = g.add(g.mean_all(m), g.weighted_mean(out, mask, 7.0));
    auto cat = g.concat_cols(g.slice_cols(out, 0, 2), g.slice_cols(out, 2, 2));
    auto rows = g.slice_rows(cat, 1, 2);
    return g.add(part, g.mean_all(g.square(rows)));
  };
  const double err = testutil::max_rel_grad_error({&w1, &b1, &w2}, build);
  CHECK(err < 1e-6);
}

TEST_CASE("graph: hermite interp and direction penalty gradients") {
  const int n = 4, d = 2;
  Param<double> w = make_param(n * d, 6, 21, 0.8);
  Mat<double> x = make_param(5, 6, 22).value;
  Vec<double> ts(5);
  Rng rng(23);
  for (int i = 0; i < 5; ++i) ts(i) = rng.uniform(0.05, 0.95);
  Mat<double> wt = hermite_weight_rows<double>(ts, n);

  auto build = [&](G& g) {
    auto pts = g.linear(g.constant(x), w, nullptr);  // 5 x 8
    auto interp = g.hermite_interp(pts, wt, n, d);
    auto pen = g.direction_penalty(pts, n, d, 1e-8);
    return g.add(g.mean_all(g.abs_of(interp)), g.mean_all(pen));
  };
  CHECK(testutil::max_rel_grad_error({&w}, build) < 1e-6);
}

TEST_CASE("graph: col broadcast and elementwise gradients") {
  Param<double> a = make_param(4, 1, 31, 0.9);
  Param<double> m = make_param(4, 3, 32, 0.9);
  auto build = [&](G& g) {
    auto prod = g.col_bcast_mul(g.param(a), g.param(m));
    auto mixed = g.mul(prod, g.add(g.param(m), g.param(m)));
    return g.mean_all(g.sub(mixed, g.scale(g.param(m), 0.3)));
  };
  CHECK(testutil::max_rel_grad_error({&a, &m}, build) < 1e-6);
}

TEST_CASE("graph: stop_gradient blocks the upstream path") {
  Param<double> w = make_param(2, 2, 41);
  Mat<double> x = make_param(3, 2, 42).value;
  // d/dw mean(stopgrad(y) .* y) must treat the first factor as a constant.
  G g;
  auto y = g.linear(g.constant(x), w, nullptr);
  auto loss = g.mean_all(g.mul(g.stop_gradient(y), y));
  w.zero_grad();
  g.backward(loss);
  Param<double> w_ref;
  w_ref.value = w.value;
  w_ref.zero_grad();
  G g2;
  auto y2 = g2.linear(g2.constant(x), w_ref, nullptr);
  auto loss2 = g2.mean_all(g2.mul(g2.constant(g2.val(y2)), y2));
  g2.backward(loss2);
  CHECK((w.grad - w_ref.grad).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("graph: non-finite forward names the first bad node") {
  Param<double> w = make_param(2, 2, 51);
  w.value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  G g;
  auto y = g.linear(g.constant(make_param(1, 2, 52).value), w, nullptr);
  auto loss = g.mean_all(y);
  w.zero_grad();
  CHECK_THROWS_AS(g.backward(loss), NumericError);
  try {
    g.backward(loss);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("node #") != std::string::npos);
  }
}

TEST_CASE("graph: non-recording mode computes values without closures") {
  Param<double> w = make_param(3, 4, 61);
  Mat<double> x = make_param(2, 4, 62).value;
  G rec(true), plain(false);
  auto a = rec.sigmoid(rec.linear(rec.constant(x), w, nullptr));
  auto b = plain.sigmoid(plain.linear(plain.constant(x), w, nullptr));
  CHECK((rec.val(a) - plain.val(b)).cwiseAbs().maxCoeff() == 0.0);
}
