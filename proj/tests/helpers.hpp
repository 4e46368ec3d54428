#pragma once

// Shared test utilities: finite-difference gradient checking and tiny
// deterministic scenes/batches.

#include <functional>
#include <vector>

#include "spats/losses.hpp"
#include "spats/synth.hpp"
#include "spats/train.hpp"

namespace spats::testutil {

// Largest relative mismatch between analytic gradients and central finite
// differences of `build` (which must reconstruct the loss from scratch each
// call). Relative error uses max(floor, |ga|, |gfd|) as denominator so tiny
// true gradients are compared absolutely.
//
// h defaults to 1e-6: the objectives contain |.| and ReLU kinks, and a larger
// step makes the FD window straddle a kink for some parameter somewhere.
// The floor scales with the objective magnitude because FD cancellation noise
// does too (eps*|f|/2h); otherwise near-zero gradients of a large objective
// drown in roundoff.
template <typename Builder>
double max_rel_grad_error(const std::vector<Param<double>*>& params,
                          Builder build, double h = 1e-6,
                          double floor_rel = 1e-3) {
  Graph<double> g;
  auto loss = build(g);
  const double floor = floor_rel * std::max(1.0, std::abs(g.scalar(loss)));
  for (auto* p : params) p->zero_grad();
  g.backward(loss);
  std::vector<Mat<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Mat<double>& val = params[pi]->value;
    for (Eigen::Index r = 0; r < val.rows(); ++r)
      for (Eigen::Index c = 0; c < val.cols(); ++c) {
        const double orig = val(r, c);
        val(r, c) = orig + h;
        Graph<double> gp;
        const double fp = gp.scalar(build(gp));
        val(r, c) = orig - h;
        Graph<double> gm;
        const double fm = gm.scalar(build(gm));
        val(r, c) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double ga = analytic[pi](r, c);
        const double denom =
            std::max(floor, std::max(std::abs(ga), std::abs(fd)));
        worst = std::max(worst, std::abs(ga - fd) / denom);
      }
  }
  return worst;
}

// Fills every parameter (including the zero-initialized heads) with small
// deterministic noise so gradient checks exercise a generic operating point.
template <typename S>
void randomize_params(SceneModel<S>& scene, uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (Param<S>* p : scene.params())
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c)
        p->value(r, c) = S(rng.uniform(-scale, scale));
}

inline ModelConfig tiny_model_config(int n_control = 3) {
  ModelConfig cfg;
  cfg.n_control = n_control;
  cfg.enc_freqs_spatial = 2;
  cfg.enc_freqs_time = 1;
  cfg.mlp_layers = 3;
  cfg.mlp_width = 8;
  cfg.mlp_skip = 1;
  return cfg;
}

inline SyntheticSceneSpec tiny_scene_spec(int size = 4, int frames = 2) {
  SyntheticSceneSpec spec;
  spec.width = size >= 8 ? size : 8;
  spec.height = spec.width;
  spec.frames = frames;
  spec.occ_radius_px = spec.width * 0.2;
  spec.occ_center_px[0] = spec.width / 2.0;
  spec.occ_center_px[1] = spec.height / 2.0;
  spec.occ_amp_px[0] = spec.width * 0.05;
  spec.occ_amp_px[1] = spec.width * 0.04;
  spec.edge_softness_px = 1.0;
  return spec;
}

// The error-maximization loss detaches |c* - c_b| and its alpha-sum
// normalizer, so the derivative of the evaluated scalar is NOT its gradient.
// The FD oracle for terms containing it must hold those detached quantities
// fixed at their unperturbed values; this rebuilds the objective with the
// captured constants spliced in. Analytic gradients of the frozen objective
// equal those of the real one by the stop-gradient contract.
struct FrozenDetach {
  Mat<double> mxe_err;    // |c* - c_b| at the unperturbed parameters
  double mxe_alpha_sum;   // sum(alpha) at the unperturbed parameters
};

inline FrozenDetach capture_detached(SceneModel<double>& model,
                                     const Batch<double>& batch,
                                     const LossWeights& w, bool color_spline,
                                     FlowLossMode mode) {
  Graph<double> g;
  auto l = build_total_loss(g, model, batch, w, color_spline, mode);
  FrozenDetach fr;
  fr.mxe_err = (g.val(l.color_bg) - batch.c_star).cwiseAbs();
  fr.mxe_alpha_sum = g.val(l.alpha).sum();
  return fr;
}

struct FrozenRefs {
  LossRefs<double> live;
  Graph<double>::Ref mxe;    // frozen-detach variant
  Graph<double>::Ref sep;
  Graph<double>::Ref total;
};

inline FrozenRefs build_frozen_total(Graph<double>& g,
                                     SceneModel<double>& model,
                                     const Batch<double>& batch,
                                     const LossWeights& w, bool color_spline,
                                     FlowLossMode mode,
                                     const FrozenDetach& fr) {
  FrozenRefs out;
  out.live = build_total_loss(g, model, batch, w, color_spline, mode);
  auto weighted = g.col_bcast_mul(out.live.alpha, g.constant(fr.mxe_err));
  out.mxe = g.scale(g.sum_all(weighted),
                    -1.0 / (3.0 * (fr.mxe_alpha_sum + kMxeSumGuard)));
  out.sep = loss_sep(g, out.live.guide, out.live.reg, out.live.bound, out.mxe, w);
  out.total = g.add(
      g.add(out.live.rec, g.scale(out.live.fl, w.lambda_fl)),
      g.add(g.add(g.scale(g.add(out.live.sm, out.live.pv), w.lambda_ds),
                  g.scale(out.live.dc, w.lambda_dc)),
            out.sep));
  return out;
}

// Every pixel of every frame as one batch, in row-major frame order.
template <typename S>
Batch<S> full_batch(const SyntheticScene& scene, double mask_k = 2.0) {
  const VideoTensor& video = scene.video;
  const int h = video.h(), w = video.w(), t_count = video.t_count();
  const int b = h * w * t_count;
  Batch<S> batch;
  batch.x.resize(b, 2);
  batch.x_shift.resize(b, 2);
  batch.x_flow.resize(b, 2);
  batch.flow.resize(b, 2);
  batch.valid.resize(b, 1);
  batch.t0.resize(b);
  batch.t1.resize(b);
  batch.times.resize(b, 1);
  batch.c_star.resize(b, 3);
  batch.alpha_star.resize(b, 1);
  batch.m_k.resize(b, 1);

  std::vector<Image> mk;
  for (const Image& m : scene.alpha_gt)
    mk.push_back(build_regularization_mask(m, mask_k));

  int s = 0;
  for (int k = 0; k < t_count; ++k)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j, ++s) {
        const S u = S(pixel_center_u(j, w));
        const S v = S(pixel_center_v(i, h));
        batch.x(s, 0) = u;
        batch.x(s, 1) = v;
        batch.x_shift(s, 0) = u + S(2.0 / w);
        batch.x_shift(s, 1) = v + S(2.0 / h);
        S fu = 0, fv = 0, valid = 0;
        S t1 = S(frame_time(k, t_count));
        if (k + 1 < t_count) {
          fu = S(scene.flows.forward[k].at(i, j, 0) * 2.0 / w);
          fv = S(scene.flows.forward[k].at(i, j, 1) * 2.0 / h);
          valid = S(scene.flows.validity[k].at(i, j, 0));
          t1 = S(frame_time(k + 1, t_count));
        }
        batch.flow(s, 0) = valid > S(0.5) ? fu : S(0);
        batch.flow(s, 1) = valid > S(0.5) ? fv : S(0);
        batch.x_flow(s, 0) = u + batch.flow(s, 0);
        batch.x_flow(s, 1) = v + batch.flow(s, 1);
        batch.valid(s, 0) = valid > S(0.5) ? S(1) : S(0);
        batch.t0(s) = S(frame_time(k, t_count));
        batch.t1(s) = valid > S(0.5) ? t1 : batch.t0(s);
        batch.times(s, 0) = batch.t0(s);
        for (int ch = 0; ch < 3; ++ch)
          batch.c_star(s, ch) = S(video.frames[k].at(i, j, ch));
        batch.alpha_star(s, 0) = S(scene.alpha_gt[k].at(i, j, 0));
        batch.m_k(s, 0) = S(mk[k].at(i, j, 0));
      }
  return batch;
}

}  // namespace spats::testutil
