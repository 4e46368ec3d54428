#include "spats/synth.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "spats/render.hpp"

namespace spats {

namespace {

constexpr double kTau = 6.283185307179586;

// Band-limited RGB texture: per channel a small sum of plane-wave sinusoids
// over normalized coordinates. Smooth enough that bilinear warps of sampled
// frames stay faithful, contrasty enough for the separation losses.
struct SineTexture {
  struct Wave {
    double kx, ky, phase, amp;
  };
  double base[3];
  std::vector<Wave> waves[3];

  static SineTexture make(Rng& rng, const double* means, double amplitude,
                          double max_cycles) {
    SineTexture t;
    const int n_waves = 4;
    for (int ch = 0; ch < 3; ++ch) {
      t.base[ch] = means[ch];
      for (int m = 0; m < n_waves; ++m) {
        Wave wv;
        const double cycles = rng.uniform(0.5, max_cycles);
        const double angle = rng.uniform(0.0, kTau);
        wv.kx = M_PI * cycles * std::cos(angle);
        wv.ky = M_PI * cycles * std::sin(angle);
        wv.phase = rng.uniform(0.0, kTau);
        wv.amp = amplitude / n_waves;
        t.waves[ch].push_back(wv);
      }
    }
    return t;
  }

  double eval(int ch, double u, double v) const {
    double acc = base[ch];
    for (const Wave& wv : waves[ch])
      acc += wv.amp * std::sin(wv.kx * u + wv.ky * v + wv.phase);
    return acc;
  }
};

double smoothstep01(double x) {
  x = std::min(std::max(x, 0.0), 1.0);
  return x * x * (3.0 - 2.0 * x);
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (width < 8 || height < 8 || frames < 2)
    throw ConfigError("synthetic scene needs at least 8x8 pixels and 2 frames");
  if (occ_radius_px <= 0 || edge_softness_px < 0)
    throw ConfigError("invalid occluder geometry");
  const double margin = 1.0;
  const double rx = occ_radius_px + std::abs(occ_amp_px[0]);
  const double ry = occ_radius_px + std::abs(occ_amp_px[1]);
  if (occ_center_px[0] - rx < margin || occ_center_px[0] + rx > width - 1 - margin ||
      occ_center_px[1] - ry < margin || occ_center_px[1] + ry > height - 1 - margin)
    throw ConfigError("occluder trajectory leaves the canvas margin");
  if (std::abs(brightness_amp) >= 0.4)
    throw ConfigError("brightness amplitude too large for [0,1] colors");
}

void SyntheticSceneSpec::center_at(double tau, double* cx, double* cy) const {
  *cx = occ_center_px[0] +
        occ_amp_px[0] * std::sin(kTau * occ_freq[0] * tau + occ_phase[0]);
  *cy = occ_center_px[1] +
        occ_amp_px[1] * std::sin(kTau * occ_freq[1] * tau + occ_phase[1]);
}

double SyntheticSceneSpec::brightness_at(double tau) const {
  return 1.0 + brightness_amp *
                   std::sin(kTau * brightness_freq * tau + brightness_phase);
}

SyntheticScene synth_scene(const SyntheticSceneSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(spec.texture_seed + 0x9e3779b97f4a7c15ull * seed);
  const double bg_means[3] = {0.45, 0.45, 0.45};
  const double occ_means[3] = {0.62, 0.38, 0.30};
  SineTexture bg = SineTexture::make(rng, bg_means, 0.30, 2.5);
  SineTexture occ = SineTexture::make(rng, occ_means, 0.26, 3.0);

  const int h = spec.height, w = spec.width, t_count = spec.frames;
  SyntheticScene scene;
  scene.video.fps = spec.fps;

  std::vector<double> cx(t_count), cy(t_count);
  for (int k = 0; k < t_count; ++k) {
    const double tau = frame_time(k, t_count);
    spec.center_at(tau, &cx[k], &cy[k]);
    scene.brightness.push_back(spec.brightness_at(tau));
  }

  for (int k = 0; k < t_count; ++k) {
    Image frame(h, w, 3);
    Image mask(h, w, 1);
    const double b = scene.brightness[k];
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double px = j + 0.5, py = i + 0.5;
        const double dist =
            std::hypot(px - cx[k], py - cy[k]) - spec.occ_radius_px;
        const double a =
            spec.edge_softness_px > 0.0
                ? smoothstep01(0.5 - dist / spec.edge_softness_px)
                : (dist <= 0.0 ? 1.0 : 0.0);
        mask.at(i, j, 0) = dist <= 0.0 ? 1.f : 0.f;
        const double u = pixel_center_u(j, w);
        const double v = pixel_center_v(i, h);
        // Occluder texture rides in the occluder's local frame.
        const double ou = u - (cx[k] - spec.occ_center_px[0]) * 2.0 / w;
        const double ov = v - (cy[k] - spec.occ_center_px[1]) * 2.0 / h;
        for (int ch = 0; ch < 3; ++ch) {
          const double bgc = b * bg.eval(ch, u, v);
          const double occ_c = occ.eval(ch, ou, ov);
          const double val = a * occ_c + (1.0 - a) * bgc;
          frame.at(i, j, ch) = float(std::min(std::max(val, 0.0), 1.0));
        }
      }
    scene.video.frames.push_back(std::move(frame));
    scene.alpha_gt.push_back(std::move(mask));
  }

  for (int k = 0; k + 1 < t_count; ++k) {
    Image fwd(h, w, 2);
    Image bwd(h, w, 2);
    const float dx = float(cx[k + 1] - cx[k]);
    const float dy = float(cy[k + 1] - cy[k]);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        if (scene.alpha_gt[k].at(i, j, 0) > 0.5f) {
          fwd.at(i, j, 0) = dx;
          fwd.at(i, j, 1) = dy;
        }
        if (scene.alpha_gt[k + 1].at(i, j, 0) > 0.5f) {
          bwd.at(i, j, 0) = -dx;
          bwd.at(i, j, 1) = -dy;
        }
      }
    scene.flows.validity.push_back(cycle_consistency_filter(fwd, bwd, 1.0));
    scene.flows.forward.push_back(std::move(fwd));
    scene.flows.backward.push_back(std::move(bwd));
  }
  return scene;
}

namespace {

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open spec file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      s.erase(0, s.find_first_not_of(ws));
      auto end = s.find_last_not_of(ws);
      s.erase(end == std::string::npos ? 0 : end + 1);
      return s;
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = val;
  }
  return kv;
}

}  // namespace

SyntheticSceneSpec SyntheticSceneSpec::parse_file(const std::string& path) {
  auto kv = parse_kv_file(path);
  SyntheticSceneSpec s;
  auto get = [&](const char* key, double* out) {
    auto it = kv.find(key);
    if (it != kv.end()) *out = std::stod(it->second);
  };
  double width = s.width, height = s.height, frames = s.frames, seed = double(s.texture_seed);
  get("width", &width);
  get("height", &height);
  get("frames", &frames);
  get("fps", &s.fps);
  get("occ_radius_px", &s.occ_radius_px);
  get("occ_center_x", &s.occ_center_px[0]);
  get("occ_center_y", &s.occ_center_px[1]);
  get("occ_amp_x", &s.occ_amp_px[0]);
  get("occ_amp_y", &s.occ_amp_px[1]);
  get("occ_freq_x", &s.occ_freq[0]);
  get("occ_freq_y", &s.occ_freq[1]);
  get("occ_phase_x", &s.occ_phase[0]);
  get("occ_phase_y", &s.occ_phase[1]);
  get("edge_softness_px", &s.edge_softness_px);
  get("brightness_amp", &s.brightness_amp);
  get("brightness_freq", &s.brightness_freq);
  get("brightness_phase", &s.brightness_phase);
  get("texture_seed", &seed);
  s.width = int(width);
  s.height = int(height);
  s.frames = int(frames);
  s.texture_seed = uint64_t(seed);
  s.validate();
  return s;
}

void SyntheticSceneSpec::save_file(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f.precision(17);  // doubles must survive the round trip
  f << "width = " << width << "\nheight = " << height
    << "\nframes = " << frames << "\nfps = " << fps
    << "\nocc_radius_px = " << occ_radius_px
    << "\nocc_center_x = " << occ_center_px[0]
    << "\nocc_center_y = " << occ_center_px[1]
    << "\nocc_amp_x = " << occ_amp_px[0] << "\nocc_amp_y = " << occ_amp_px[1]
    << "\nocc_freq_x = " << occ_freq[0] << "\nocc_freq_y = " << occ_freq[1]
    << "\nocc_phase_x = " << occ_phase[0]
    << "\nocc_phase_y = " << occ_phase[1]
    << "\nedge_softness_px = " << edge_softness_px
    << "\nbrightness_amp = " << brightness_amp
    << "\nbrightness_freq = " << brightness_freq
    << "\nbrightness_phase = " << brightness_phase
    << "\ntexture_seed = " << texture_seed << "\n";
}

}  // namespace spats
