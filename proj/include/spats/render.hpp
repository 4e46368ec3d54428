#pragma once

// Per-branch rendering and compositing.
//
// Coordinate convention (shared by every module): pixel (i,j) of an H x W
// grid sits at x = (u,v) = (2(j+0.5)/W - 1, 2(i+0.5)/H - 1), frame index k
// maps to t = k/(T-1). Canonical-space images generalize this to an
// arbitrary window rectangle.

#include <cassert>

#include "spats/image.hpp"
#include "spats/model.hpp"

namespace spats {

struct Window {
  double u0 = -1.0, v0 = -1.0, u1 = 1.0, v1 = 1.0;

  bool degenerate() const { return !(u1 > u0) || !(v1 > v0); }
};

inline double pixel_center_u(int j, int w, const Window& win = {}) {
  return win.u0 + (double(j) + 0.5) / double(w) * (win.u1 - win.u0);
}
inline double pixel_center_v(int i, int h, const Window& win = {}) {
  return win.v0 + (double(i) + 0.5) / double(h) * (win.v1 - win.v0);
}
inline double frame_time(int idx, int t_count) {
  return t_count > 1 ? double(idx) / double(t_count - 1) : 0.0;
}

// Alpha compositing: c = alpha*c_f + (1-alpha)*c_b. Inputs are contract-bound
// to [0,1]; violations trip the assert in debug builds.
inline Eigen::Vector3d composite(const Eigen::Vector3d& c_f,
                                 const Eigen::Vector3d& c_b, double alpha) {
  assert(alpha >= 0.0 && alpha <= 1.0);
  assert(c_f.minCoeff() >= 0.0 && c_f.maxCoeff() <= 1.0);
  assert(c_b.minCoeff() >= 0.0 && c_b.maxCoeff() <= 1.0);
  return alpha * c_f + (1.0 - alpha) * c_b;
}

// Bilinear lookup at normalized coordinates in the image's window;
// out-of-window queries clamp to the edge texel.
inline void sample_image_bilinear(const Image& img, double u, double v,
                                  const Window& win, float* out) {
  double px = (u - win.u0) / (win.u1 - win.u0) * img.w - 0.5;
  double py = (v - win.v0) / (win.v1 - win.v0) * img.h - 0.5;
  px = std::min(std::max(px, 0.0), double(img.w - 1));
  py = std::min(std::max(py, 0.0), double(img.h - 1));
  const int j0 = int(px);
  const int i0 = int(py);
  const int j1 = std::min(j0 + 1, img.w - 1);
  const int i1 = std::min(i0 + 1, img.h - 1);
  const float fx = float(px - j0);
  const float fy = float(py - i0);
  for (int ch = 0; ch < img.c; ++ch) {
    const float top = img.at(i0, j0, ch) * (1.f - fx) + img.at(i0, j1, ch) * fx;
    const float bot = img.at(i1, j0, ch) * (1.f - fx) + img.at(i1, j1, ch) * fx;
    out[ch] = top * (1.f - fy) + bot * fy;
  }
}

// One branch of the model pipeline on a graph:
//   delta = S(P_s(x), t);  (c0, P_c) = color(x + delta);
//   color = sigmoid(c0 + S(P_c, t))   (or sigmoid(c0) during color warmup).
template <typename S>
struct BranchRefs {
  using Ref = typename Graph<S>::Ref;
  Ref ps = -1;          // B x 2N spatial control points
  Ref delta = -1;       // B x 2
  Ref coords_def = -1;  // B x 2, x + delta
  Ref c0 = -1;          // B x 3 base color logits
  Ref pc = -1;          // B x 3N color control points
  Ref color = -1;       // B x 3 in [0,1]
  Ref alpha_logit = -1;
  Ref alpha = -1;       // B x 1 in [0,1]
};

template <typename S>
inline BranchRefs<S> render_branch_graph(Graph<S>& g, LayerModel<S>& m,
                                         const Mat<S>& x, const Mat<S>& times,
                                         const Mat<S>& wt,
                                         bool use_color_spline) {
  BranchRefs<S> out;
  auto xc = g.constant(x);
  auto enc = g.positional_encode(xc, m.enc_spatial.num_frequencies,
                                 m.enc_spatial.include_raw_input);
  out.ps = m.eval_spatial(g, enc);
  out.delta = g.hermite_interp(out.ps, wt, m.n_control, 2);
  out.coords_def = g.add_const(out.delta, x);
  auto cr = m.eval_color(g, out.coords_def);
  out.c0 = cr.c0;
  out.pc = cr.pc;
  auto logits = use_color_spline
                    ? g.add(out.c0, g.hermite_interp(out.pc, wt, m.n_control, 3))
                    : out.c0;
  out.color = g.sigmoid(logits);
  if (m.alpha) {
    out.alpha_logit = m.eval_alpha_logit(g, out.coords_def, times);
    out.alpha = g.sigmoid(out.alpha_logit);
  }
  return out;
}

template <typename S>
struct BranchSample {
  Eigen::Vector3d color;
  Eigen::Vector2d delta;
};

// Single-point branch evaluation (B = 1, no tape).
template <typename S>
inline BranchSample<S> render_branch(LayerModel<S>& m, double u, double v,
                                     double t, bool use_color_spline) {
  Graph<S> g(false);
  Mat<S> x(1, 2);
  x << S(u), S(v);
  Mat<S> times(1, 1);
  times(0, 0) = S(t);
  Mat<S> wt = hermite_weight_rows<S>(times.col(0), m.n_control);
  auto br = render_branch_graph(g, m, x, times, wt, use_color_spline);
  BranchSample<S> s;
  s.color = g.val(br.color).row(0).template cast<double>().transpose();
  s.delta = g.val(br.delta).row(0).template cast<double>().transpose();
  return s;
}

struct FrameRender {
  Image composite;  // H x W x 3
  Image fg;         // H x W x 3
  Image bg;         // H x W x 3
  Image alpha;      // H x W x 1
  Image delta_fg;   // H x W x 2, normalized units
  Image delta_bg;   // H x W x 2
};

// Full-frame render at pixel centers. An optional spatial control-point
// snapshot (H x W x 2N images per branch) overrides the spatial MLPs; the
// motion-editing path renders through exactly this hook.
template <typename S>
inline FrameRender render_frame(SceneModel<S>& scene, int frame_index,
                                int t_count, int h, int w,
                                bool use_color_spline = true,
                                const Image* fg_points = nullptr,
                                const Image* bg_points = nullptr) {
  const int n = scene.cfg.n_control;
  const double t = frame_time(frame_index, t_count);
  FrameRender fr{Image(h, w, 3), Image(h, w, 3), Image(h, w, 3),
                 Image(h, w, 1), Image(h, w, 2), Image(h, w, 2)};

  const int rows_per_chunk = std::max(1, 4096 / w);
  for (int i0 = 0; i0 < h; i0 += rows_per_chunk) {
    const int rows = std::min(rows_per_chunk, h - i0);
    const int b = rows * w;
    Mat<S> x(b, 2);
    Mat<S> times = Mat<S>::Constant(b, 1, S(t));
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j) {
        x(r * w + j, 0) = S(pixel_center_u(j, w));
        x(r * w + j, 1) = S(pixel_center_v(i0 + r, h));
      }
    Mat<S> wt = hermite_weight_rows<S>(times.col(0), n);

    Graph<S> g(false);
    auto eval_branch = [&](LayerModel<S>& m, const Image* pts) {
      if (!pts) return render_branch_graph(g, m, x, times, wt, use_color_spline);
      BranchRefs<S> out;
      Mat<S> ps(b, 2 * n);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < w; ++j)
          for (int k = 0; k < 2 * n; ++k)
            ps(r * w + j, k) = S(pts->at(i0 + r, j, k));
      out.ps = g.constant(ps);
      out.delta = g.hermite_interp(out.ps, wt, n, 2);
      out.coords_def = g.add_const(out.delta, x);
      auto cr = m.eval_color(g, out.coords_def);
      out.c0 = cr.c0;
      out.pc = cr.pc;
      auto logits =
          use_color_spline ? g.add(out.c0, g.hermite_interp(out.pc, wt, n, 3))
                           : out.c0;
      out.color = g.sigmoid(logits);
      if (m.alpha) {
        out.alpha_logit = m.eval_alpha_logit(g, out.coords_def, times);
        out.alpha = g.sigmoid(out.alpha_logit);
      }
      return out;
    };

    auto f = eval_branch(scene.fg, fg_points);
    auto bck = eval_branch(scene.bg, bg_points);
    const Mat<S>& cf = g.val(f.color);
    const Mat<S>& cb = g.val(bck.color);
    const Mat<S>& a = g.val(f.alpha);
    const Mat<S>& df = g.val(f.delta);
    const Mat<S>& db = g.val(bck.delta);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j) {
        const int s = r * w + j;
        const int i = i0 + r;
        const float av = float(a(s, 0));
        fr.alpha.at(i, j, 0) = av;
        for (int ch = 0; ch < 3; ++ch) {
          const float fv = float(cf(s, ch));
          const float bv = float(cb(s, ch));
          fr.fg.at(i, j, ch) = fv;
          fr.bg.at(i, j, ch) = bv;
          fr.composite.at(i, j, ch) = av * fv + (1.f - av) * bv;
        }
        for (int ch = 0; ch < 2; ++ch) {
          fr.delta_fg.at(i, j, ch) = float(df(s, ch));
          fr.delta_bg.at(i, j, ch) = float(db(s, ch));
        }
      }
  }
  return fr;
}

// Spatial control points of one branch on the full pixel grid
// (H x W x 2N); input to motion editing.
template <typename S>
inline Image spatial_point_grid(LayerModel<S>& m, int h, int w) {
  const int n = m.n_control;
  Image grid(h, w, 2 * n);
  const int rows_per_chunk = std::max(1, 4096 / w);
  for (int i0 = 0; i0 < h; i0 += rows_per_chunk) {
    const int rows = std::min(rows_per_chunk, h - i0);
    const int b = rows * w;
    Mat<S> x(b, 2);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j) {
        x(r * w + j, 0) = S(pixel_center_u(j, w));
        x(r * w + j, 1) = S(pixel_center_v(i0 + r, h));
      }
    Graph<S> g(false);
    auto enc = g.positional_encode(g.constant(x), m.enc_spatial.num_frequencies,
                                   m.enc_spatial.include_raw_input);
    auto ps = m.eval_spatial(g, enc);
    const Mat<S>& pv = g.val(ps);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < 2 * n; ++k)
          grid.at(i0 + r, j, k) = float(pv(r * w + j, k));
  }
  return grid;
}

struct CanonicalRender {
  Image base;         // sigmoid(c0), H x W x 3
  Image delta_logit;  // S(P_c, t), logit space, H x W x 3
  Window window;
};

// Canonical-space images of one branch over a window grid: the base color
// image I0 and the color-deformation image at time t (kept in logit space;
// the editing equation adds it to a logit).
template <typename S>
inline CanonicalRender render_canonical(LayerModel<S>& m, const Window& win,
                                        int h, int w, double t) {
  if (win.degenerate()) throw ConfigError("degenerate canonical window");
  const int n = m.n_control;
  CanonicalRender cr{Image(h, w, 3), Image(h, w, 3), win};
  Vec<S> tv(1);
  tv(0) = S(t);
  Mat<S> wt1 = hermite_weight_rows<S>(tv, n);

  const int rows_per_chunk = std::max(1, 4096 / w);
  for (int i0 = 0; i0 < h; i0 += rows_per_chunk) {
    const int rows = std::min(rows_per_chunk, h - i0);
    const int b = rows * w;
    Mat<S> x(b, 2);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j) {
        x(r * w + j, 0) = S(pixel_center_u(j, w, win));
        x(r * w + j, 1) = S(pixel_center_v(i0 + r, h, win));
      }
    Mat<S> wt = wt1.replicate(b, 1);

    Graph<S> g(false);
    auto color = m.eval_color(g, g.constant(x));
    auto base = g.sigmoid(color.c0);
    auto dlog = g.hermite_interp(color.pc, wt, n, 3);
    const Mat<S>& bv = g.val(base);
    const Mat<S>& dv = g.val(dlog);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j)
        for (int ch = 0; ch < 3; ++ch) {
          cr.base.at(i0 + r, j, ch) = float(bv(r * w + j, ch));
          cr.delta_logit.at(i0 + r, j, ch) = float(dv(r * w + j, ch));
        }
  }
  return cr;
}

}  // namespace spats
