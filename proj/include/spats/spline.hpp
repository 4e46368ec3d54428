#pragma once

// Cubic Hermite spline evaluation over N control points on t in [0,1].
//
// The curve is split into N segments: t_s = t*N selects segment i = floor(t_s)
// with local parameter t_r = t_s - i. Segment tangents are one-sided halved
// differences, m0 = (P_i - P_{i-1})/2 and m1 = (P_{i+1} - P_i)/2, with point
// indices clamped to [0, N-1] (endpoint replication). t_s is clamped to
// N - 1e-6 so t = 1 lands in the last segment and S(P,1) = P_{N-1}.
//
// Evaluation is exactly linear in P for fixed t, so it is exposed as a weight
// vector w(t) with S(P,t) = w^T P. The batched network paths reuse the same
// weight kernels.

#include <Eigen/Core>

#include "spats/common.hpp"

namespace spats::spline {

template <typename S>
inline void hermite_weights(int n, S t, S* w) {
  S ts = t * S(n);
  const S ts_max = S(n) - S(1e-6);
  if (ts > ts_max) ts = ts_max;
  if (ts < S(0)) ts = S(0);
  const int i = int(ts);
  const S tr = ts - S(i);
  const S tr2 = tr * tr;
  const S tr3 = tr2 * tr;

  const S h00 = S(2) * tr3 - S(3) * tr2 + S(1);
  const S h01 = -S(2) * tr3 + S(3) * tr2;
  const S h10 = tr3 - S(2) * tr2 + tr;
  const S h11 = tr3 - tr2;

  const int im1 = i > 0 ? i - 1 : 0;
  const int ip1 = i < n - 1 ? i + 1 : n - 1;
  for (int k = 0; k < n; ++k) w[k] = S(0);
  w[i] += h00 + S(0.5) * h10 - S(0.5) * h11;
  w[im1] -= S(0.5) * h10;
  w[ip1] += h01 + S(0.5) * h11;
}

// d/dt of hermite_weights: basis derivatives w.r.t. t_r scaled by
// dt_s/dt = N. One-sided at the clamped end segments.
template <typename S>
inline void hermite_velocity_weights(int n, S t, S* w) {
  S ts = t * S(n);
  const S ts_max = S(n) - S(1e-6);
  if (ts > ts_max) ts = ts_max;
  if (ts < S(0)) ts = S(0);
  const int i = int(ts);
  const S tr = ts - S(i);
  const S tr2 = tr * tr;

  const S g00 = (S(6) * tr2 - S(6) * tr) * S(n);
  const S g01 = (-S(6) * tr2 + S(6) * tr) * S(n);
  const S g10 = (S(3) * tr2 - S(4) * tr + S(1)) * S(n);
  const S g11 = (S(3) * tr2 - S(2) * tr) * S(n);

  const int im1 = i > 0 ? i - 1 : 0;
  const int ip1 = i < n - 1 ? i + 1 : n - 1;
  for (int k = 0; k < n; ++k) w[k] = S(0);
  w[i] += g00 + S(0.5) * g10 - S(0.5) * g11;
  w[im1] -= S(0.5) * g10;
  w[ip1] += g01 + S(0.5) * g11;
}

// Control points are an N x D matrix, one point per row. Spatial points use
// D=2 (normalized image offsets), color points D=3 (pre-sigmoid logits).
void validate_control_points(const Eigen::MatrixXd& pts);
void validate_time(double t);

// S(P, t) per the weight kernel above. Throws std::invalid_argument for
// N < 2 or non-finite points, std::domain_error for t outside [0,1].
Eigen::VectorXd eval_hermite(const Eigen::MatrixXd& pts, double t);

// Analytic dS/dt; consistent with central finite differences of eval_hermite.
Eigen::VectorXd eval_hermite_velocity(const Eigen::MatrixXd& pts, double t);

struct DirectionPenalty {
  double value = 0.0;
  bool measured = false;  // false when N < 3 (no direction change defined)
};

// Discrete direction-change penalty over the control polygon:
// v_i = P_{i+1} - P_i, u_i = v_i / (|v_i| + eps), mean_i |u_{i+1} - u_i|_1.
// Zero for collinear same-direction points and for all-identical points.
DirectionPenalty direction_change_penalty(const Eigen::MatrixXd& pts,
                                          double eps);

}  // namespace spats::spline
