#pragma once

// Reverse-mode tape over batched matrices (rows = samples, cols = features).
// Heavy lifting stays in Eigen GEMMs; the tape only wires closures between
// them. Templated on the scalar so training runs in float and the
// finite-difference gradient checks run in double.
//
// A Graph built with recording=false evaluates the same forward math without
// storing backward closures; render paths use that mode.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spats/common.hpp"

namespace spats {

// Trainable tensor. Gradients accumulate here across a backward pass; the
// optimizer owns zeroing and stepping.
template <typename S>
struct Param {
  Mat<S> value;
  Mat<S> grad;
  std::string name;

  void zero_grad() { grad = Mat<S>::Zero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <typename S>
class Graph {
 public:
  using Ref = int32_t;

  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  Ref constant(Mat<S> v) { return push(std::move(v), "const", false, {}); }

  Ref param(Param<S>& p) {
    if (!recording_) return push(p.value, "param", false, {});
    Ref r = push(p.value, "param", true, {});
    Param<S>* bound = &p;
    nodes_[r].back = [this, r, bound] { bound->grad += grad(r); };
    return r;
  }

  const Mat<S>& val(Ref r) const { return nodes_[r].val; }

  S scalar(Ref r) const { return nodes_[r].val(0, 0); }

  // y = x * W^T (+ bias, broadcast over rows). W is out x in, bias 1 x out.
  //
  // The non-recording path evaluates each row as an independent gemv, whose
  // per-element accumulation runs strictly in input order, so render results
  // are identical for any batch shape (single pixels vs whole frames). The
  // recording path stays on Eigen's GEMM, which is deterministic for a fixed
  // batch geometry.
  Ref linear(Ref x, Param<S>& w, Param<S>* b) {
    if (!recording_) {
      const Mat<S>& xv = nodes_[x].val;
      Mat<S> y(xv.rows(), w.value.rows());
      Vec<S> row(w.value.rows());
      for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        row.noalias() = w.value * xv.row(r).transpose();
        y.row(r) = row.transpose();
      }
      if (b) y.rowwise() += b->value.row(0);
      return push(std::move(y), "linear", false, {});
    }
    Mat<S> y = nodes_[x].val * w.value.transpose();
    if (b) y.rowwise() += b->value.row(0);
    Ref r = push(std::move(y), "linear", true, {});
    Param<S>* wp = &w;
    Param<S>* bp = b;
    nodes_[r].back = [this, r, x, wp, bp] {
      const Mat<S>& g = grad(r);
      wp->grad.noalias() += g.transpose() * nodes_[x].val;
      if (bp) bp->grad.row(0) += g.colwise().sum();
      if (needs(x)) acc(x, g * wp->value);
    };
    return r;
  }

  Ref relu(Ref x) {
    Mat<S> y = nodes_[x].val.cwiseMax(S(0));
    return unary(x, std::move(y), "relu", [this](Ref r, Ref x2) {
      acc_arr(x2, grad(r).array() *
                      (nodes_[r].val.array() > S(0)).template cast<S>());
    });
  }

  Ref sigmoid(Ref x) {
    const Mat<S>& xv = nodes_[x].val;
    Mat<S> y(xv.rows(), xv.cols());
    if (!recording_) {
      // scalar exp: shape-invariant rounding on the render path
      for (Eigen::Index r = 0; r < xv.rows(); ++r)
        for (Eigen::Index c = 0; c < xv.cols(); ++c)
          y(r, c) = S(1) / (S(1) + std::exp(-xv(r, c)));
    } else {
      y = (S(1) / (S(1) + (-xv.array()).exp())).matrix();
    }
    return unary(x, std::move(y), "sigmoid", [this](Ref r, Ref x2) {
      const auto& v = nodes_[r].val.array();
      acc_arr(x2, grad(r).array() * v * (S(1) - v));
    });
  }

  Ref abs_of(Ref x) {
    Mat<S> y = nodes_[x].val.cwiseAbs();
    return unary(x, std::move(y), "abs", [this](Ref r, Ref x2) {
      acc_arr(x2, grad(r).array() * nodes_[x2].val.array().sign());
    });
  }

  Ref square(Ref x) {
    Mat<S> y = nodes_[x].val.cwiseProduct(nodes_[x].val);
    return unary(x, std::move(y), "square", [this](Ref r, Ref x2) {
      acc_arr(x2, S(2) * grad(r).array() * nodes_[x2].val.array());
    });
  }

  Ref scale(Ref x, S k) {
    Mat<S> y = nodes_[x].val * k;
    return unary(x, std::move(y), "scale", [this, k](Ref r, Ref x2) {
      acc(x2, grad(r) * k);
    });
  }

  Ref add_const(Ref x, const Mat<S>& c) {
    Mat<S> y = nodes_[x].val + c;
    return unary(x, std::move(y), "add_const",
                 [this](Ref r, Ref x2) { acc(x2, grad(r)); });
  }

  Ref mul_const(Ref x, Mat<S> c) {
    Mat<S> y = nodes_[x].val.cwiseProduct(c);
    return unary(x, std::move(y), "mul_const",
                 [this, c = std::move(c)](Ref r, Ref x2) {
                   acc_arr(x2, grad(r).array() * c.array());
                 });
  }

  Ref add(Ref a, Ref b) {
    Mat<S> y = nodes_[a].val + nodes_[b].val;
    return binary(a, b, std::move(y), "add", [this](Ref r, Ref a2, Ref b2) {
      if (needs(a2)) acc(a2, grad(r));
      if (needs(b2)) acc(b2, grad(r));
    });
  }

  Ref sub(Ref a, Ref b) {
    Mat<S> y = nodes_[a].val - nodes_[b].val;
    return binary(a, b, std::move(y), "sub", [this](Ref r, Ref a2, Ref b2) {
      if (needs(a2)) acc(a2, grad(r));
      if (needs(b2)) acc(b2, -grad(r));
    });
  }

  Ref mul(Ref a, Ref b) {
    Mat<S> y = nodes_[a].val.cwiseProduct(nodes_[b].val);
    return binary(a, b, std::move(y), "mul", [this](Ref r, Ref a2, Ref b2) {
      if (needs(a2)) acc_arr(a2, grad(r).array() * nodes_[b2].val.array());
      if (needs(b2)) acc_arr(b2, grad(r).array() * nodes_[a2].val.array());
    });
  }

  // (B x 1) column broadcast-multiplied into (B x C).
  Ref col_bcast_mul(Ref c, Ref m) {
    const Mat<S>& cv = nodes_[c].val;
    Mat<S> y = nodes_[m].val.array().colwise() * cv.col(0).array();
    return binary(c, m, std::move(y), "col_bcast_mul",
                  [this](Ref r, Ref c2, Ref m2) {
                    const Mat<S>& g = grad(r);
                    if (needs(c2))
                      grad(c2).col(0) +=
                          (g.array() * nodes_[m2].val.array()).rowwise().sum().matrix();
                    if (needs(m2))
                      acc_arr(m2, g.array().colwise() *
                                      nodes_[c2].val.col(0).array());
                  });
  }

  Ref concat_cols(Ref a, Ref b) {
    const Mat<S>& av = nodes_[a].val;
    const Mat<S>& bv = nodes_[b].val;
    Mat<S> y(av.rows(), av.cols() + bv.cols());
    y << av, bv;
    const int ca = int(av.cols());
    return binary(a, b, std::move(y), "concat_cols",
                  [this, ca](Ref r, Ref a2, Ref b2) {
                    const Mat<S>& g = grad(r);
                    if (needs(a2)) acc(a2, g.leftCols(ca));
                    if (needs(b2)) acc(b2, g.rightCols(g.cols() - ca));
                  });
  }

  Ref slice_cols(Ref x, int c0, int len) {
    Mat<S> y = nodes_[x].val.middleCols(c0, len);
    return unary(x, std::move(y), "slice_cols", [this, c0, len](Ref r, Ref x2) {
      grad(x2).middleCols(c0, len) += grad(r);
    });
  }

  Ref slice_rows(Ref x, int r0, int len) {
    Mat<S> y = nodes_[x].val.middleRows(r0, len);
    return unary(x, std::move(y), "slice_rows", [this, r0, len](Ref r, Ref x2) {
      grad(x2).middleRows(r0, len) += grad(r);
    });
  }

  Ref stop_gradient(Ref x) {
    return push(nodes_[x].val, "stop_gradient", false, {});
  }

  // [x? | sin(2^0 pi x) | cos(2^0 pi x) | ... ] blocks of dim(x) columns.
  Ref positional_encode(Ref x, int freqs, bool include_raw) {
    const Mat<S>& xv = nodes_[x].val;
    const int d = int(xv.cols());
    const int blocks = 2 * freqs + (include_raw ? 1 : 0);
    Mat<S> y(xv.rows(), d * blocks);
    int c = 0;
    if (include_raw) {
      y.leftCols(d) = xv;
      c = d;
    }
    for (int l = 0; l < freqs; ++l) {
      const S f = S(std::pow(2.0, l) * M_PI);
      if (!recording_) {
        for (Eigen::Index r = 0; r < xv.rows(); ++r)
          for (int k = 0; k < d; ++k) {
            y(r, c + k) = std::sin(xv(r, k) * f);
            y(r, c + d + k) = std::cos(xv(r, k) * f);
          }
      } else {
        y.middleCols(c, d) = (xv.array() * f).sin();
        y.middleCols(c + d, d) = (xv.array() * f).cos();
      }
      c += 2 * d;
    }
    return unary(x, std::move(y), "positional_encode",
                 [this, freqs, include_raw, d](Ref r, Ref x2) {
                   const Mat<S>& g = grad(r);
                   Mat<S>& gx = grad(x2);
                   int c = 0;
                   if (include_raw) {
                     gx += g.leftCols(d);
                     c = d;
                   }
                   const auto& xv = nodes_[x2].val;
                   for (int l = 0; l < freqs; ++l) {
                     const S f = S(std::pow(2.0, l) * M_PI);
                     gx.array() += g.middleCols(c, d).array() *
                                   (xv.array() * f).cos() * f;
                     gx.array() -= g.middleCols(c + d, d).array() *
                                   (xv.array() * f).sin() * f;
                     c += 2 * d;
                   }
                 });
  }

  // Hermite interpolation of per-row control points. pts is B x (N*D) in
  // point-major layout [p0_0..p0_{D-1}, p1_0, ...]; wts is the constant B x N
  // weight matrix from spline::hermite_weights at each row's time.
  Ref hermite_interp(Ref pts, const Mat<S>& wts, int n, int d) {
    const Mat<S>& pv = nodes_[pts].val;
    const Eigen::Index rows = pv.rows();
    Mat<S> y = Mat<S>::Zero(rows, d);
    for (int i = 0; i < n; ++i)
      y.array() +=
          pv.middleCols(i * d, d).array().colwise() * wts.col(i).array();
    return unary(pts, std::move(y), "hermite_interp",
                 [this, wts, n, d](Ref r, Ref p2) {
                   const Mat<S>& g = grad(r);
                   Mat<S>& gp = grad(p2);
                   for (int i = 0; i < n; ++i)
                     gp.middleCols(i * d, d).array() +=
                         g.array().colwise() * wts.col(i).array();
                 });
  }

  // Per-row direction-change penalty of the control polygon (see
  // spline::direction_change_penalty). Output is B x 1; rows with n < 3 were
  // rejected at config time.
  Ref direction_penalty(Ref pts, int n, int d, S eps) {
    const Mat<S>& pv = nodes_[pts].val;
    const Eigen::Index rows = pv.rows();
    Mat<S> y = Mat<S>::Zero(rows, 1);
    if (n >= 3) {
      for (Eigen::Index b = 0; b < rows; ++b)
        y(b, 0) = row_penalty(pv.row(b), n, d, eps, nullptr);
    }
    if (n < 3) return push(std::move(y), "direction_penalty", false, {});
    return unary(pts, std::move(y), "direction_penalty",
                 [this, n, d, eps](Ref r, Ref p2) {
                   const Mat<S>& g = grad(r);
                   const Mat<S>& pv = nodes_[p2].val;
                   Mat<S>& gp = grad(p2);
                   Eigen::Matrix<S, 1, Eigen::Dynamic> grow(pv.cols());
                   for (Eigen::Index b = 0; b < pv.rows(); ++b) {
                     grow.setZero();
                     row_penalty(pv.row(b), n, d, eps, &grow);
                     gp.row(b) += grow * g(b, 0);
                   }
                 });
  }

  Ref sum_all(Ref x) {
    Mat<S> y(1, 1);
    y(0, 0) = nodes_[x].val.sum();
    return unary(x, std::move(y), "sum_all", [this](Ref r, Ref x2) {
      grad(x2).array() += grad(r)(0, 0);
    });
  }

  Ref mean_all(Ref x) {
    const S inv = S(1) / S(nodes_[x].val.size());
    Mat<S> y(1, 1);
    y(0, 0) = nodes_[x].val.sum() * inv;
    return unary(x, std::move(y), "mean_all", [this, inv](Ref r, Ref x2) {
      grad(x2).array() += grad(r)(0, 0) * inv;
    });
  }

  // sum(x .* w) / denom as a 1x1 node; w is a constant weight/mask matrix.
  Ref weighted_mean(Ref x, Mat<S> w, S denom) {
    Mat<S> y(1, 1);
    y(0, 0) = nodes_[x].val.cwiseProduct(w).sum() / denom;
    return unary(x, std::move(y), "weighted_mean",
                 [this, w = std::move(w), denom](Ref r, Ref x2) {
                   acc_arr(x2, grad(r)(0, 0) * w.array() / denom);
                 });
  }

  // Reverse sweep from a 1x1 loss node. Throws NumericError naming the first
  // non-finite node if the forward pass produced one.
  void backward(Ref loss) {
    if (nodes_[loss].val.size() != 1)
      throw std::invalid_argument("backward() expects a scalar node");
    if (!std::isfinite(double(nodes_[loss].val(0, 0)))) throw_non_finite();
    grad(loss)(0, 0) = S(1);
    for (Ref r = loss; r >= 0; --r) {
      Node& n = nodes_[r];
      if (n.grad.size() > 0 && n.back) n.back();
    }
  }

  // First node holding a non-finite value, or -1. Used for diagnostics.
  Ref first_non_finite() const {
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].val.allFinite()) return Ref(i);
    return -1;
  }

  const char* op_name(Ref r) const { return nodes_[r].op; }

 private:
  struct Node {
    Mat<S> val;
    Mat<S> grad;
    std::function<void()> back;
    const char* op;
    bool needs_grad;
  };

  std::vector<Node> nodes_;
  bool recording_;

  bool needs(Ref r) const { return nodes_[r].needs_grad; }

  Mat<S>& grad(Ref r) {
    Node& n = nodes_[r];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  // Full-tensor accumulation that assigns on first touch instead of zeroing;
  // partial (slice) accumulation keeps the zero-initializing grad() path.
  template <typename E>
  void acc(Ref r, const E& e) {
    Node& n = nodes_[r];
    if (n.grad.size() == 0)
      n.grad = e;
    else
      n.grad += e;
  }
  template <typename E>
  void acc_arr(Ref r, const E& e) {
    Node& n = nodes_[r];
    if (n.grad.size() == 0)
      n.grad = e.matrix();
    else
      n.grad.array() += e;
  }

  Ref push(Mat<S> v, const char* op, bool needs_grad,
           std::function<void()> back) {
    nodes_.push_back(Node{std::move(v), {}, std::move(back), op, needs_grad});
    return Ref(nodes_.size() - 1);
  }

  template <typename F>
  Ref unary(Ref x, Mat<S> y, const char* op, F&& back) {
    if (!recording_ || !needs(x)) return push(std::move(y), op, false, {});
    Ref r = push(std::move(y), op, true, {});
    nodes_[r].back = [this, r, x, back = std::forward<F>(back)] {
      if (needs(x)) back(r, x);
    };
    return r;
  }

  template <typename F>
  Ref binary(Ref a, Ref b, Mat<S> y, const char* op, F&& back) {
    if (!recording_ || (!needs(a) && !needs(b)))
      return push(std::move(y), op, false, {});
    Ref r = push(std::move(y), op, true, {});
    nodes_[r].back = [this, r, a, b, back = std::forward<F>(back)] {
      back(r, a, b);
    };
    return r;
  }

  // Penalty of one control polygon; optionally writes d(pen)/d(row) to grow.
  static S row_penalty(const Eigen::Matrix<S, 1, Eigen::Dynamic>& row, int n,
                       int d, S eps,
                       Eigen::Matrix<S, 1, Eigen::Dynamic>* grow) {
    const int nv = n - 1;
    const int np = n - 2;
    Mat<S> v(nv, d), u(nv, d);
    Vec<S> s(nv);
    for (int i = 0; i < nv; ++i) {
      for (int k = 0; k < d; ++k)
        v(i, k) = row((i + 1) * d + k) - row(i * d + k);
      s(i) = v.row(i).norm();
      u.row(i) = v.row(i) / (s(i) + eps);
    }
    S pen = S(0);
    for (int i = 0; i < np; ++i)
      pen += (u.row(i + 1) - u.row(i)).cwiseAbs().sum();
    pen /= S(np);
    if (!grow) return pen;

    Mat<S> du = Mat<S>::Zero(nv, d);
    for (int i = 0; i < np; ++i) {
      for (int k = 0; k < d; ++k) {
        const S diff = u(i + 1, k) - u(i, k);
        const S sg = (diff > S(0) ? S(1) : (diff < S(0) ? S(-1) : S(0))) / S(np);
        du(i + 1, k) += sg;
        du(i, k) -= sg;
      }
    }
    for (int i = 0; i < nv; ++i) {
      const S denom = s(i) + eps;
      Eigen::Matrix<S, 1, Eigen::Dynamic> dv = du.row(i) / denom;
      if (s(i) > S(0)) {
        const S proj = (v.row(i).dot(du.row(i))) / (s(i) * denom * denom);
        dv -= v.row(i) * proj;
      }
      for (int k = 0; k < d; ++k) {
        (*grow)((i + 1) * d + k) += dv(k);
        (*grow)(i * d + k) -= dv(k);
      }
    }
    return pen;
  }

  [[noreturn]] void throw_non_finite() const {
    Ref bad = first_non_finite();
    throw NumericError("non-finite value in forward pass at node #" +
                       std::to_string(bad) + " (op " +
                       (bad >= 0 ? nodes_[bad].op : "?") + ")");
  }
};

}  // namespace spats
