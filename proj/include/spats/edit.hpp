#pragma once

// Canonical-space appearance editing, control-point motion editing, and the
// warping-consistency metric used to score edited videos.

#include <optional>

#include "spats/data.hpp"
#include "spats/render.hpp"

namespace spats {

// Values this close to 0/1 are clamped before the logit; 8-bit edited images
// routinely contain exact 0 and 1.
constexpr double kEditLogitClamp = 1e-4;

// sigmoid(logit(clamp(edited_base)) + delta_logit): re-applies the model's
// time-varying color deformation on top of an edited base image.
Image edit_canonical_frame(const Image& edited_base, const Image& delta_logit,
                           double eps = kEditLogitClamp);

// Edited canonical frames of one branch plus the window they were rendered
// over. frames[k] corresponds to video frame k.
struct EditedCanonicalSeq {
  std::vector<Image> frames;
  Window window;
};

// Renders the canonical sequence of one branch over `window` and applies the
// (optional) edited base image via edit_canonical_frame; a missing edit means
// identity (the branch's own base image).
template <typename S>
EditedCanonicalSeq make_edited_sequence(LayerModel<S>& m, const Window& window,
                                        int res_h, int res_w, int t_count,
                                        const Image* edited_base) {
  EditedCanonicalSeq seq;
  seq.window = window;
  for (int k = 0; k < t_count; ++k) {
    CanonicalRender cr =
        render_canonical(m, window, res_h, res_w, frame_time(k, t_count));
    seq.frames.push_back(edited_base
                             ? edit_canonical_frame(*edited_base, cr.delta_logit)
                             : edit_canonical_frame(cr.base, cr.delta_logit));
  }
  return seq;
}

// Propagates edited canonical frames back into video frame `frame_index`:
// each pixel samples its branch's edited canonical image at the canonical
// coordinate x + S(P_s(x), t) (or S(P_s(x), t) in literal mode) and the two
// branches composite with the model's alpha.
Image propagate_edit(SceneModel<float>& scene, const EditedCanonicalSeq& fg,
                     const EditedCanonicalSeq& bg, int frame_index,
                     int t_count, int h, int w,
                     bool literal_lookup = false);

// A window that covers every canonical coordinate the model touches across
// all frames, padded by `pad` (normalized units).
Window canonical_window(SceneModel<float>& scene, bool foreground, int t_count,
                        int h, int w, double pad = 0.05);

struct MotionEditSpec {
  double amplify = 1.0;
  int offset_every = 0;  // 0: no offsets; else every m-th control point
  double offset_du = 0.0;
  double offset_dv = 0.0;
  std::optional<Image> selection;  // H x W x 1 pixel mask; absent = all

  void validate() const {
    if (!std::isfinite(amplify)) throw ConfigError("amplify must be finite");
    if (offset_every < 0) throw ConfigError("offset_every must be >= 0");
    if (std::abs(offset_du) > 2.0 || std::abs(offset_dv) > 2.0)
      throw ConfigError("offsets must stay within [-2,2] normalized units");
  }
};

struct MotionEditResult {
  Image points;  // modified H x W x 2N control-point grid
  bool no_op = false;  // empty selection: nothing modified
};

// Applies amplification and periodic offsets to a spatial control-point grid
// snapshot (H x W x 2N, as produced by spatial_point_grid).
MotionEditResult motion_edit(const Image& points, const MotionEditSpec& spec);

struct WarpConsistency {
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  int n = 0;
  double valid_fraction = 0.0;
};

// Warps frame t+n onto t through composed forward flows and scores agreement
// on cycle-consistent pixels. Constant inputs hit the 99 dB PSNR cap.
WarpConsistency warping_consistency(const std::vector<Image>& frames,
                                    const FlowSet& flows, int n = 3);

// PSNR between images over an optional 0/1 mask (peak 1.0, 99 dB cap).
double masked_psnr(const Image& a, const Image& b, const Image* mask = nullptr);

// Mean SSIM (11x11 Gaussian window, K1=0.01, K2=0.03, per channel averaged)
// over an optional mask.
double masked_ssim(const Image& a, const Image& b, const Image* mask = nullptr);

}  // namespace spats
