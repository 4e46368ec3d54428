#pragma once

// Synthetic scene generator: band-limited textured background, a textured
// disc occluder on a sinusoidal trajectory, and a global multiplicative
// brightness modulation on the background. Flow, occluder masks and the
// brightness curve all derive analytically from the same parameters, which
// makes the scene a ground-truth oracle for fitting, separation and editing
// tests.

#include "spats/data.hpp"

namespace spats {

struct SyntheticSceneSpec {
  int width = 64;
  int height = 64;
  int frames = 16;
  double fps = 10.0;

  double occ_radius_px = 13.0;
  double occ_center_px[2] = {32.0, 32.0};  // (x, y)
  double occ_amp_px[2] = {9.0, 5.0};
  double occ_freq[2] = {1.0, 0.5};  // cycles over the clip
  double occ_phase[2] = {0.0, 1.5707963267948966};
  double edge_softness_px = 1.2;  // compositing ramp width at the disc edge

  double brightness_amp = 0.12;
  double brightness_freq = 1.25;
  double brightness_phase = 0.0;

  uint64_t texture_seed = 7;

  void validate() const;
  // (x, y) occluder center in pixel coordinates at normalized time tau
  void center_at(double tau, double* cx, double* cy) const;
  double brightness_at(double tau) const;

  static SyntheticSceneSpec parse_file(const std::string& path);
  void save_file(const std::string& path) const;
};

struct SyntheticScene {
  VideoTensor video;
  FlowSet flows;                  // exact flows + cycle-consistency validity
  std::vector<Image> alpha_gt;    // binary occluder masks, H x W x 1
  std::vector<double> brightness; // b(tau_k) per frame
};

SyntheticScene synth_scene(const SyntheticSceneSpec& spec, uint64_t seed);

}  // namespace spats
