#pragma once

// Frame/flow/mask ingestion and mask preprocessing. Flows live on disk in
// pixel units (Middlebury .flo); the trainer converts to normalized units at
// its boundary. Loaders reject inconsistent inputs rather than truncating.

#include <string>
#include <vector>

#include "spats/image.hpp"

namespace spats {

struct VideoTensor {
  std::vector<Image> frames;  // T images, H x W x 3, values in [0,1]
  double fps = 0.0;           // informational

  int t_count() const { return int(frames.size()); }
  int h() const { return frames.empty() ? 0 : frames[0].h; }
  int w() const { return frames.empty() ? 0 : frames[0].w; }
};

struct FlowSet {
  std::vector<Image> forward;   // T-1 flows t -> t+1, H x W x 2, pixel units
  std::vector<Image> backward;  // T-1 flows t+1 -> t
  std::vector<Image> validity;  // T-1 cycle-consistency masks, H x W x 1
};

// Bilinear lookup in pixel coordinates with clamp-to-edge.
void sample_bilinear_px(const Image& img, double px, double py, float* out);

// frame_%05d.png, contiguous from 0. Missing indices and size mismatches are
// errors naming the offending file.
VideoTensor load_video(const std::string& dir);
void save_video(const std::string& dir, const VideoTensor& video);

// mask_%05d.png (grayscale), one per frame.
std::vector<Image> load_masks(const std::string& dir, int t_count);

// Middlebury .flo: float magic 202021.25, int32 width/height, then row-major
// interleaved (u,v) float32 pairs, little-endian, pixel units.
Image load_flo(const std::string& path);
void save_flo(const std::string& path, const Image& flow);

// flow_fwd_%05d.flo / flow_bwd_%05d.flo for t in [0, T-2]; validity comes
// from the cycle-consistency filter.
FlowSet load_flows(const std::string& dir, int t_count, double cycle_thresh_px = 1.0);
void save_flows(const std::string& dir, const FlowSet& flows);

// Pixel x is valid iff |fwd(x) + bwd(x + fwd(x))|_2 < thresh_px.
Image cycle_consistency_filter(const Image& fwd, const Image& bwd,
                               double thresh_px = 1.0);

// Exact Euclidean distance to the nearest pixel with mask > 0.5
// (two-pass parabola envelope). No such pixel => +inf everywhere.
Image distance_transform(const Image& mask);

// Binary erosion with a disc structuring element: a pixel survives iff no
// zero pixel (image border counts as zero) lies within distance radius.
Image erode_mask(const Image& mask, double radius_px);

// m_k = 1 where the Euclidean distance from {alpha* > 0.5} is >= k pixels.
Image build_regularization_mask(const Image& alpha_star, double k);

}  // namespace spats
