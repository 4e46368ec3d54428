#include "spats/spline.hpp"

#include <cmath>
#include <stdexcept>

namespace spats::spline {

void validate_control_points(const Eigen::MatrixXd& pts) {
  if (pts.rows() < 2)
    throw std::invalid_argument("control point set needs at least 2 points");
  if (!pts.allFinite())
    throw std::invalid_argument("control points contain non-finite values");
}

void validate_time(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("spline time outside [0,1]");
}

Eigen::VectorXd eval_hermite(const Eigen::MatrixXd& pts, double t) {
  validate_control_points(pts);
  validate_time(t);
  const int n = int(pts.rows());
  Eigen::VectorXd w(n);
  hermite_weights<double>(n, t, w.data());
  return pts.transpose() * w;
}

Eigen::VectorXd eval_hermite_velocity(const Eigen::MatrixXd& pts, double t) {
  validate_control_points(pts);
  validate_time(t);
  const int n = int(pts.rows());
  Eigen::VectorXd w(n);
  hermite_velocity_weights<double>(n, t, w.data());
  return pts.transpose() * w;
}

DirectionPenalty direction_change_penalty(const Eigen::MatrixXd& pts,
                                          double eps) {
  validate_control_points(pts);
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  const int n = int(pts.rows());
  if (n < 3) return {0.0, false};

  Eigen::MatrixXd v = pts.bottomRows(n - 1) - pts.topRows(n - 1);
  Eigen::MatrixXd u(n - 1, pts.cols());
  for (int i = 0; i < n - 1; ++i)
    u.row(i) = v.row(i) / (v.row(i).norm() + eps);

  double acc = 0.0;
  for (int i = 0; i + 1 < n - 1; ++i)
    acc += (u.row(i + 1) - u.row(i)).cwiseAbs().sum();
  return {acc / double(n - 2), true};
}

}  // namespace spats::spline
