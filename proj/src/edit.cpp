#include "spats/edit.hpp"

#include <cmath>

namespace spats {

Image edit_canonical_frame(const Image& edited_base, const Image& delta_logit,
                           double eps) {
  if (!edited_base.same_shape(delta_logit))
    throw DataError("edited base and color-deformation image sizes differ");
  Image out(edited_base.h, edited_base.w, edited_base.c);
  for (size_t i = 0; i < out.v.size(); ++i) {
    const double p =
        std::min(std::max(double(edited_base.v[i]), eps), 1.0 - eps);
    out.v[i] = float(sigmoid(logit(p) + double(delta_logit.v[i])));
  }
  return out;
}

Image propagate_edit(SceneModel<float>& scene, const EditedCanonicalSeq& fg,
                     const EditedCanonicalSeq& bg, int frame_index,
                     int t_count, int h, int w, bool literal_lookup) {
  if (int(fg.frames.size()) != t_count || int(bg.frames.size()) != t_count)
    throw DataError("edited canonical sequence length != frame count");
  FrameRender fr = render_frame(scene, frame_index, t_count, h, w);
  const Image& fg_canon = fg.frames[frame_index];
  const Image& bg_canon = bg.frames[frame_index];

  Image out(h, w, 3);
  float cf[3], cb[3];
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double u = pixel_center_u(j, w);
      const double v = pixel_center_v(i, h);
      const double fu = literal_lookup ? 0.0 : u;
      const double fv = literal_lookup ? 0.0 : v;
      sample_image_bilinear(fg_canon, fu + fr.delta_fg.at(i, j, 0),
                            fv + fr.delta_fg.at(i, j, 1), fg.window, cf);
      sample_image_bilinear(bg_canon, fu + fr.delta_bg.at(i, j, 0),
                            fv + fr.delta_bg.at(i, j, 1), bg.window, cb);
      const float a = fr.alpha.at(i, j, 0);
      for (int ch = 0; ch < 3; ++ch)
        out.at(i, j, ch) = a * cf[ch] + (1.f - a) * cb[ch];
    }
  return out;
}

Window canonical_window(SceneModel<float>& scene, bool foreground, int t_count,
                        int h, int w, double pad) {
  Window win{1e9, 1e9, -1e9, -1e9};
  for (int k = 0; k < t_count; ++k) {
    FrameRender fr = render_frame(scene, k, t_count, h, w);
    const Image& d = foreground ? fr.delta_fg : fr.delta_bg;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double cu = pixel_center_u(j, w) + d.at(i, j, 0);
        const double cv = pixel_center_v(i, h) + d.at(i, j, 1);
        win.u0 = std::min(win.u0, cu);
        win.v0 = std::min(win.v0, cv);
        win.u1 = std::max(win.u1, cu);
        win.v1 = std::max(win.v1, cv);
      }
  }
  win.u0 -= pad;
  win.v0 -= pad;
  win.u1 += pad;
  win.v1 += pad;
  return win;
}

MotionEditResult motion_edit(const Image& points, const MotionEditSpec& spec) {
  spec.validate();
  if (spec.selection &&
      (spec.selection->h != points.h || spec.selection->w != points.w))
    throw DataError("motion-edit selection mask size mismatch");

  MotionEditResult res;
  res.points = points;
  const int n = points.c / 2;
  bool any_selected = false;
  for (int i = 0; i < points.h; ++i)
    for (int j = 0; j < points.w; ++j) {
      if (spec.selection && spec.selection->at(i, j, 0) <= 0.5f) continue;
      any_selected = true;
      for (int p = 0; p < n; ++p) {
        float& pu = res.points.at(i, j, 2 * p);
        float& pv = res.points.at(i, j, 2 * p + 1);
        pu = float(spec.amplify) * pu;
        pv = float(spec.amplify) * pv;
        if (spec.offset_every > 0 && p % spec.offset_every == 0) {
          pu += float(spec.offset_du);
          pv += float(spec.offset_dv);
        }
      }
    }
  res.no_op = !any_selected;
  return res;
}

double masked_psnr(const Image& a, const Image& b, const Image* mask) {
  if (!a.same_shape(b)) throw DataError("psnr image shape mismatch");
  double mse = 0.0;
  int64_t count = 0;
  for (int i = 0; i < a.h; ++i)
    for (int j = 0; j < a.w; ++j) {
      if (mask && mask->at(i, j, 0) <= 0.5f) continue;
      for (int ch = 0; ch < a.c; ++ch) {
        const double d = double(a.at(i, j, ch)) - double(b.at(i, j, ch));
        mse += d * d;
        ++count;
      }
    }
  if (count == 0) return 0.0;
  mse /= double(count);
  if (mse < 1e-12) return 99.0;
  return -10.0 * std::log10(mse);
}

namespace {

std::vector<double> gaussian_kernel_11() {
  std::vector<double> k(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable 11x11 Gaussian blur with clamp-to-edge, one channel.
void blur(const std::vector<double>& src, int h, int w,
          std::vector<double>& dst) {
  static const std::vector<double> k = gaussian_kernel_11();
  std::vector<double> tmp(size_t(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int d = -5; d <= 5; ++d) {
        const int jj = std::min(std::max(j + d, 0), w - 1);
        acc += k[d + 5] * src[size_t(i) * w + jj];
      }
      tmp[size_t(i) * w + j] = acc;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int d = -5; d <= 5; ++d) {
        const int ii = std::min(std::max(i + d, 0), h - 1);
        acc += k[d + 5] * tmp[size_t(ii) * w + j];
      }
      dst[size_t(i) * w + j] = acc;
    }
}

}  // namespace

double masked_ssim(const Image& a, const Image& b, const Image* mask) {
  if (!a.same_shape(b)) throw DataError("ssim image shape mismatch");
  const int h = a.h, w = a.w;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const size_t plane = size_t(h) * w;
  std::vector<double> xa(plane), xb(plane), mu_a(plane), mu_b(plane),
      aa(plane), bb(plane), ab(plane), s_aa(plane), s_bb(plane), s_ab(plane);

  double total = 0.0;
  int64_t count = 0;
  for (int ch = 0; ch < a.c; ++ch) {
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const size_t s = size_t(i) * w + j;
        xa[s] = a.at(i, j, ch);
        xb[s] = b.at(i, j, ch);
        aa[s] = xa[s] * xa[s];
        bb[s] = xb[s] * xb[s];
        ab[s] = xa[s] * xb[s];
      }
    blur(xa, h, w, mu_a);
    blur(xb, h, w, mu_b);
    blur(aa, h, w, s_aa);
    blur(bb, h, w, s_bb);
    blur(ab, h, w, s_ab);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        if (mask && mask->at(i, j, 0) <= 0.5f) continue;
        const size_t s = size_t(i) * w + j;
        const double va = s_aa[s] - mu_a[s] * mu_a[s];
        const double vb = s_bb[s] - mu_b[s] * mu_b[s];
        const double cov = s_ab[s] - mu_a[s] * mu_b[s];
        const double num = (2.0 * mu_a[s] * mu_b[s] + c1) * (2.0 * cov + c2);
        const double den =
            (mu_a[s] * mu_a[s] + mu_b[s] * mu_b[s] + c1) * (va + vb + c2);
        total += num / den;
        ++count;
      }
  }
  return count > 0 ? total / double(count) : 0.0;
}

WarpConsistency warping_consistency(const std::vector<Image>& frames,
                                    const FlowSet& flows, int n) {
  const int t_count = int(frames.size());
  if (t_count <= n)
    throw DataError("warping consistency needs more than n frames");
  if (int(flows.forward.size()) != t_count - 1)
    throw DataError("flow count does not match frames");

  WarpConsistency wc;
  wc.n = n;
  const int h = frames[0].h, w = frames[0].w;
  double psnr_acc = 0.0, ssim_acc = 0.0, valid_acc = 0.0;
  int pairs = 0;

  for (int t = 0; t + n < t_count; ++t) {
    // Compose flow t -> t+n by chaining forward flows with bilinear lookups;
    // a pixel stays valid only if every hop is cycle-consistent.
    Image total_flow(h, w, 2);
    Image valid(h, w, 1, 1.f);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double px = j, py = i;
        bool ok = true;
        for (int s = 0; s < n && ok; ++s) {
          float fl[2], va[1];
          sample_bilinear_px(flows.validity[t + s], px, py, va);
          if (va[0] < 0.5f) {
            ok = false;
            break;
          }
          sample_bilinear_px(flows.forward[t + s], px, py, fl);
          px += fl[0];
          py += fl[1];
        }
        if (!ok || px < 0 || px > w - 1 || py < 0 || py > h - 1) {
          valid.at(i, j, 0) = 0.f;
        } else {
          total_flow.at(i, j, 0) = float(px - j);
          total_flow.at(i, j, 1) = float(py - i);
        }
      }

    Image warped(h, w, 3);
    float c[3];
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        sample_bilinear_px(frames[t + n], j + total_flow.at(i, j, 0),
                           i + total_flow.at(i, j, 1), c);
        for (int ch = 0; ch < 3; ++ch) warped.at(i, j, ch) = c[ch];
      }

    psnr_acc += masked_psnr(frames[t], warped, &valid);
    ssim_acc += masked_ssim(frames[t], warped, &valid);
    double vsum = 0.0;
    for (float v : valid.v) vsum += v;
    valid_acc += vsum / double(h * w);
    ++pairs;
  }
  wc.psnr_mean = psnr_acc / pairs;
  wc.ssim_mean = ssim_acc / pairs;
  wc.valid_fraction = valid_acc / pairs;
  return wc;
}

}  // namespace spats
