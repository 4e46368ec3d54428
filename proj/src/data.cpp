#include "spats/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

namespace fs = std::filesystem;

namespace spats {

namespace {

std::string indexed_name(const char* prefix, int idx, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%05d%s", prefix, idx, ext);
  return buf;
}

int max_index_with_prefix(const std::string& dir, const std::string& prefix,
                          const std::string& ext) {
  int max_idx = -1;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix, 0) != 0 || name.size() <= prefix.size() + ext.size())
      continue;
    if (name.substr(name.size() - ext.size()) != ext) continue;
    const std::string digits =
        name.substr(prefix.size(), name.size() - prefix.size() - ext.size());
    if (digits.find_first_not_of("0123456789") != std::string::npos) continue;
    max_idx = std::max(max_idx, std::stoi(digits));
  }
  return max_idx;
}

}  // namespace

void sample_bilinear_px(const Image& img, double px, double py, float* out) {
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

VideoTensor load_video(const std::string& dir) {
  const int last = max_index_with_prefix(dir, "frame_", ".png");
  if (last < 1) throw DataError("no frame_%05d.png sequence in " + dir);
  VideoTensor video;
  for (int k = 0; k <= last; ++k) {
    const std::string path = dir + "/" + indexed_name("frame_", k, ".png");
    if (!fs::exists(path))
      throw DataError("missing frame index " + std::to_string(k) + " in " + dir);
    Image img = read_png(path);
    if (img.c == 1) {
      Image rgb(img.h, img.w, 3);
      for (int i = 0; i < img.h; ++i)
        for (int j = 0; j < img.w; ++j)
          for (int ch = 0; ch < 3; ++ch) rgb.at(i, j, ch) = img.at(i, j, 0);
      img = std::move(rgb);
    }
    if (!video.frames.empty() && !img.same_shape(video.frames[0]))
      throw DataError("frame size mismatch at " + path);
    video.frames.push_back(std::move(img));
  }
  return video;
}

void save_video(const std::string& dir, const VideoTensor& video) {
  fs::create_directories(dir);
  for (int k = 0; k < video.t_count(); ++k)
    write_png(dir + "/" + indexed_name("frame_", k, ".png"), video.frames[k]);
}

std::vector<Image> load_masks(const std::string& dir, int t_count) {
  std::vector<Image> masks;
  for (int k = 0; k < t_count; ++k) {
    const std::string path = dir + "/" + indexed_name("mask_", k, ".png");
    if (!fs::exists(path))
      throw DataError("missing mask index " + std::to_string(k) + " in " + dir);
    Image img = read_png(path);
    if (img.c != 1) {
      Image gray(img.h, img.w, 1);
      for (int i = 0; i < img.h; ++i)
        for (int j = 0; j < img.w; ++j)
          gray.at(i, j, 0) =
              (img.at(i, j, 0) + img.at(i, j, 1) + img.at(i, j, 2)) / 3.f;
      img = std::move(gray);
    }
    if (!masks.empty() && !img.same_shape(masks[0]))
      throw DataError("mask size mismatch at " + path);
    masks.push_back(std::move(img));
  }
  return masks;
}

constexpr float kFloMagic = 202021.25f;

Image load_flo(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  float magic = 0.f;
  int32_t w = 0, h = 0;
  f.read(reinterpret_cast<char*>(&magic), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  f.read(reinterpret_cast<char*>(&h), 4);
  if (!f || magic != kFloMagic)
    throw DataError("bad .flo magic in " + path);
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16)
    throw DataError("implausible .flo dimensions in " + path);
  Image flow(h, w, 2);
  f.read(reinterpret_cast<char*>(flow.v.data()),
         std::streamsize(flow.v.size() * sizeof(float)));
  if (!f) throw DataError("truncated .flo payload in " + path);
  return flow;
}

void save_flo(const std::string& path, const Image& flow) {
  if (flow.c != 2) throw DataError("save_flo expects a 2-channel field");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  const int32_t w = flow.w, h = flow.h;
  f.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(flow.v.data()),
          std::streamsize(flow.v.size() * sizeof(float)));
}

FlowSet load_flows(const std::string& dir, int t_count, double cycle_thresh_px) {
  FlowSet flows;
  for (int k = 0; k + 1 < t_count; ++k) {
    Image fwd = load_flo(dir + "/" + indexed_name("flow_fwd_", k, ".flo"));
    Image bwd = load_flo(dir + "/" + indexed_name("flow_bwd_", k, ".flo"));
    if (!fwd.same_shape(bwd))
      throw DataError("flow pair size mismatch at index " + std::to_string(k));
    flows.validity.push_back(cycle_consistency_filter(fwd, bwd, cycle_thresh_px));
    flows.forward.push_back(std::move(fwd));
    flows.backward.push_back(std::move(bwd));
  }
  return flows;
}

void save_flows(const std::string& dir, const FlowSet& flows) {
  fs::create_directories(dir);
  for (size_t k = 0; k < flows.forward.size(); ++k) {
    save_flo(dir + "/" + indexed_name("flow_fwd_", int(k), ".flo"),
             flows.forward[k]);
    save_flo(dir + "/" + indexed_name("flow_bwd_", int(k), ".flo"),
             flows.backward[k]);
  }
}

Image cycle_consistency_filter(const Image& fwd, const Image& bwd,
                               double thresh_px) {
  Image valid(fwd.h, fwd.w, 1);
  float back[2];
  for (int i = 0; i < fwd.h; ++i)
    for (int j = 0; j < fwd.w; ++j) {
      const double fu = fwd.at(i, j, 0);
      const double fv = fwd.at(i, j, 1);
      sample_bilinear_px(bwd, j + fu, i + fv, back);
      const double du = fu + back[0];
      const double dv = fv + back[1];
      valid.at(i, j, 0) = std::sqrt(du * du + dv * dv) < thresh_px ? 1.f : 0.f;
    }
  return valid;
}

namespace {

// 1D squared-distance lower envelope (Felzenszwalb & Huttenlocher), with
// +inf entries skipped so sparse rows/columns work.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + q * double(q)) - (f[p] + p * double(p))) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.begin() + n, inf);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const int p = v[k];
    d[q] = double(q - p) * double(q - p) + f[p];
  }
}

}  // namespace

Image distance_transform(const Image& mask) {
  const int h = mask.h, w = mask.w;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> sq(size_t(h) * w);
  bool any = false;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const bool site = mask.at(i, j, 0) > 0.5f;
      any = any || site;
      sq[size_t(i) * w + j] = site ? 0.0 : inf;
    }
  Image dist(h, w, 1);
  if (!any) {
    std::fill(dist.v.begin(), dist.v.end(),
              std::numeric_limits<float>::infinity());
    return dist;
  }
  // Columns first, then rows over the column results.
  std::vector<double> f(std::max(h, w)), d(std::max(h, w));
  for (int j = 0; j < w; ++j) {
    bool col_any = false;
    for (int i = 0; i < h; ++i) {
      f[i] = sq[size_t(i) * w + j];
      col_any = col_any || f[i] == 0.0;
    }
    if (!col_any) continue;
    edt_1d(f, d, h);
    for (int i = 0; i < h; ++i) sq[size_t(i) * w + j] = d[i];
  }
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) f[j] = sq[size_t(i) * w + j];
    edt_1d(f, d, w);
    for (int j = 0; j < w; ++j)
      dist.at(i, j, 0) = float(std::sqrt(d[j]));
  }
  return dist;
}

Image erode_mask(const Image& mask, double radius_px) {
  Image inverted(mask.h, mask.w, 1);
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j)
      inverted.at(i, j, 0) = mask.at(i, j, 0) > 0.5f ? 0.f : 1.f;
  Image dist = distance_transform(inverted);
  Image out(mask.h, mask.w, 1);
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j) {
      // Pixels outside the image count as zero; the nearest one lies straight
      // across the closest border.
      const double border = 1.0 + std::min(std::min(i, j),
                                           std::min(mask.h - 1 - i, mask.w - 1 - j));
      const double dzero = std::min(double(dist.at(i, j, 0)), border);
      out.at(i, j, 0) =
          (mask.at(i, j, 0) > 0.5f && dzero > radius_px) ? 1.f : 0.f;
    }
  return out;
}

Image build_regularization_mask(const Image& alpha_star, double k) {
  if (!(k >= 1.0)) throw ConfigError("regularization mask distance k must be >= 1");
  Image dist = distance_transform(alpha_star);
  Image mk(alpha_star.h, alpha_star.w, 1);
  for (int i = 0; i < mk.h; ++i)
    for (int j = 0; j < mk.w; ++j)
      mk.at(i, j, 0) = dist.at(i, j, 0) >= float(k) ? 1.f : 0.f;
  return mk;
}

}  // namespace spats
