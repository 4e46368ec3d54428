#pragma once

// Coordinate networks for the two scene branches. Each branch carries a
// spatial field (image coordinate -> N x 2 deformation control points), a
// color field (canonical coordinate -> base color logits + N x 3 color
// control points) and, on the foreground branch, an alpha field
// (canonical coordinate + time -> opacity logit).
//
// Freshly initialized models are exact identities: hidden layers use
// Kaiming-uniform fan-in init, final layers are all-zero with no bias term,
// so deformations are 0, base colors sigmoid to 0.5 and alpha is 0.5.

#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "spats/graph.hpp"
#include "spats/spline.hpp"

namespace spats {

struct EncodingConfig {
  int num_frequencies = 10;
  bool include_raw_input = true;

  int out_dim(int in_dim) const {
    return in_dim * (2 * num_frequencies + (include_raw_input ? 1 : 0));
  }
  void validate() const {
    if (num_frequencies < 1)
      throw ConfigError("encoding needs at least one frequency");
  }
};

struct MlpConfig {
  int num_layers = 8;
  int width = 256;
  int skip_layer = 4;  // layer whose input gets the encoding re-concatenated
  int out_dim = 1;

  void validate() const {
    if (width <= 0 || out_dim <= 0 || num_layers < 2)
      throw ConfigError("invalid MLP dimensions");
    if (skip_layer <= 0 || skip_layer >= num_layers)
      throw ConfigError("skip layer must satisfy 0 < skip < num_layers");
  }
};

// Whole-scene hyperparameters; serialized into checkpoints so a checkpoint
// alone reconstructs the architecture.
struct ModelConfig {
  int n_control = 16;
  int enc_freqs_spatial = 10;
  int enc_freqs_time = 4;
  bool enc_include_raw = true;
  int mlp_layers = 8;
  int mlp_width = 256;
  int mlp_skip = 4;

  EncodingConfig spatial_encoding() const {
    return {enc_freqs_spatial, enc_include_raw};
  }
  EncodingConfig time_encoding() const {
    return {enc_freqs_time, enc_include_raw};
  }
  void validate() const {
    if (n_control < 2) throw ConfigError("n_control must be >= 2");
    spatial_encoding().validate();
    time_encoding().validate();
    MlpConfig{mlp_layers, mlp_width, mlp_skip, 1}.validate();
  }
  bool operator==(const ModelConfig&) const = default;
};

template <typename S>
struct Mlp {
  MlpConfig cfg;
  int in_dim = 0;
  std::vector<Param<S>> weights;  // hidden layers then head
  std::vector<Param<S>> biases;   // hidden layers only; the head has no bias

  int layer_in_dim(int i) const {
    if (i == 0) return in_dim;
    if (i == cfg.skip_layer) return cfg.width + in_dim;
    return cfg.width;
  }

  void build(const MlpConfig& c, int input_dim, const std::string& name,
             Rng& rng) {
    cfg = c;
    cfg.validate();
    in_dim = input_dim;
    weights.clear();
    biases.clear();
    for (int i = 0; i < cfg.num_layers; ++i) {
      Param<S> w, b;
      const int fan_in = layer_in_dim(i);
      w.value.resize(cfg.width, fan_in);
      const double bound = std::sqrt(6.0 / double(fan_in));
      for (Eigen::Index r = 0; r < w.value.rows(); ++r)
        for (Eigen::Index col = 0; col < w.value.cols(); ++col)
          w.value(r, col) = S(rng.uniform(-bound, bound));
      w.name = name + ".w" + std::to_string(i);
      b.value = Mat<S>::Zero(1, cfg.width);
      b.name = name + ".b" + std::to_string(i);
      weights.push_back(std::move(w));
      biases.push_back(std::move(b));
    }
    Param<S> head;
    head.value = Mat<S>::Zero(cfg.out_dim, cfg.width);
    head.name = name + ".head";
    weights.push_back(std::move(head));
  }

  typename Graph<S>::Ref forward(Graph<S>& g, typename Graph<S>::Ref x) {
    auto h = x;
    for (int i = 0; i < cfg.num_layers; ++i) {
      if (i == cfg.skip_layer) h = g.concat_cols(h, x);
      h = g.relu(g.linear(h, weights[i], &biases[i]));
    }
    return g.linear(h, weights[cfg.num_layers], nullptr);
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& w : weights) n += w.value.size();
    for (const auto& b : biases) n += b.value.size();
    return n;
  }

  void collect(std::vector<Param<S>*>& out) {
    for (int i = 0; i < cfg.num_layers; ++i) {
      out.push_back(&weights[i]);
      out.push_back(&biases[i]);
    }
    out.push_back(&weights[cfg.num_layers]);
  }
};

// Closed-form parameter count for one network; asserted against Mlp in tests.
inline int64_t mlp_param_count(const MlpConfig& c, int in_dim) {
  int64_t n = 0;
  for (int i = 0; i < c.num_layers; ++i) {
    int fan_in = i == 0 ? in_dim : (i == c.skip_layer ? c.width + in_dim : c.width);
    n += int64_t(fan_in) * c.width + c.width;
  }
  n += int64_t(c.width) * c.out_dim;
  return n;
}

template <typename S>
struct LayerModel {
  EncodingConfig enc_spatial;
  EncodingConfig enc_time;
  int n_control = 0;
  Mlp<S> spatial;              // head dim 2N
  Mlp<S> color;                // head dim 3 + 3N
  std::optional<Mlp<S>> alpha;  // head dim 1, foreground branch only

  // B x 2N spatial control points from an encoded coordinate batch.
  typename Graph<S>::Ref eval_spatial(Graph<S>& g, typename Graph<S>::Ref enc_x) {
    return spatial.forward(g, enc_x);
  }

  struct ColorRefs {
    typename Graph<S>::Ref c0;  // B x 3 base color logits
    typename Graph<S>::Ref pc;  // B x 3N color control points
  };

  // Color field at (possibly deformed) coordinates; encoding happens inside
  // so gradients flow back into the deformation.
  ColorRefs eval_color(Graph<S>& g, typename Graph<S>::Ref coords) {
    auto enc = g.positional_encode(coords, enc_spatial.num_frequencies,
                                   enc_spatial.include_raw_input);
    auto out = color.forward(g, enc);
    return {g.slice_cols(out, 0, 3), g.slice_cols(out, 3, 3 * n_control)};
  }

  // Alpha logit at deformed coordinates and (constant) per-sample times.
  typename Graph<S>::Ref eval_alpha_logit(Graph<S>& g,
                                          typename Graph<S>::Ref coords,
                                          const Mat<S>& times) {
    if (!alpha)
      throw std::logic_error("alpha field queried on a branch without one");
    auto enc_x = g.positional_encode(coords, enc_spatial.num_frequencies,
                                     enc_spatial.include_raw_input);
    auto enc_t = g.positional_encode(g.constant(times),
                                     enc_time.num_frequencies,
                                     enc_time.include_raw_input);
    return alpha->forward(g, g.concat_cols(enc_x, enc_t));
  }
};

template <typename S>
struct SceneModel {
  ModelConfig cfg;
  LayerModel<S> fg;
  LayerModel<S> bg;

  // Parameters in declaration (= checkpoint) order.
  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    fg.spatial.collect(out);
    fg.color.collect(out);
    fg.alpha->collect(out);
    bg.spatial.collect(out);
    bg.color.collect(out);
    return out;
  }

  void zero_grads() {
    for (auto* p : params()) p->zero_grad();
  }
};

template <typename S>
inline LayerModel<S> init_layer(const ModelConfig& cfg, bool with_alpha,
                                const std::string& name, Rng& rng) {
  LayerModel<S> m;
  m.enc_spatial = cfg.spatial_encoding();
  m.enc_time = cfg.time_encoding();
  m.n_control = cfg.n_control;
  const int enc_dim = m.enc_spatial.out_dim(2);
  MlpConfig base{cfg.mlp_layers, cfg.mlp_width, cfg.mlp_skip, 1};
  MlpConfig sc = base;
  sc.out_dim = 2 * cfg.n_control;
  m.spatial.build(sc, enc_dim, name + ".spatial", rng);
  MlpConfig cc = base;
  cc.out_dim = 3 + 3 * cfg.n_control;
  m.color.build(cc, enc_dim, name + ".color", rng);
  if (with_alpha) {
    MlpConfig ac = base;
    ac.out_dim = 1;
    m.alpha.emplace();
    m.alpha->build(ac, enc_dim + m.enc_time.out_dim(1), name + ".alpha", rng);
  }
  return m;
}

template <typename S>
inline SceneModel<S> init_scene(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  SceneModel<S> scene;
  scene.cfg = cfg;
  Rng rng(seed);
  scene.fg = init_layer<S>(cfg, true, "fg", rng);
  scene.bg = init_layer<S>(cfg, false, "bg", rng);
  return scene;
}

// Non-graph convenience wrappers -------------------------------------------

// Spatial field at one coordinate, reshaped to N x 2 control points.
template <typename S>
inline Eigen::MatrixXd spatial_field_eval(LayerModel<S>& m, double u,
                                          double v) {
  Graph<S> g(false);
  Mat<S> x(1, 2);
  x << S(u), S(v);
  auto enc = g.positional_encode(g.constant(x), m.enc_spatial.num_frequencies,
                                 m.enc_spatial.include_raw_input);
  const Mat<S>& out = g.val(m.eval_spatial(g, enc));
  Eigen::MatrixXd pts(m.n_control, 2);
  for (int i = 0; i < m.n_control; ++i)
    for (int d = 0; d < 2; ++d) pts(i, d) = double(out(0, 2 * i + d));
  return pts;
}

template <typename S>
struct ColorFieldSample {
  Eigen::Vector3d c0;      // base color logits
  Eigen::MatrixXd points;  // N x 3 color control points
};

// Color field at one (possibly deformed) canonical coordinate.
template <typename S>
inline ColorFieldSample<S> color_field_eval(LayerModel<S>& m, double u,
                                            double v) {
  Graph<S> g(false);
  Mat<S> x(1, 2);
  x << S(u), S(v);
  auto cr = m.eval_color(g, g.constant(x));
  ColorFieldSample<S> out;
  out.c0 = g.val(cr.c0).row(0).template cast<double>().transpose();
  out.points.resize(m.n_control, 3);
  const Mat<S>& pc = g.val(cr.pc);
  for (int i = 0; i < m.n_control; ++i)
    for (int d = 0; d < 3; ++d) out.points(i, d) = double(pc(0, 3 * i + d));
  return out;
}

// Alpha logit at one canonical coordinate and time (foreground branch only).
template <typename S>
inline double alpha_field_eval(LayerModel<S>& m, double u, double v, double t) {
  Graph<S> g(false);
  Mat<S> x(1, 2);
  x << S(u), S(v);
  Mat<S> times(1, 1);
  times(0, 0) = S(t);
  return double(g.val(m.eval_alpha_logit(g, g.constant(x), times))(0, 0));
}

// Spline weight rows for a batch of times: row b holds
// spline::hermite_weights(n, t_b).
template <typename S>
inline Mat<S> hermite_weight_rows(const Vec<S>& ts, int n) {
  Mat<S> w(ts.size(), n);
  std::vector<S> row(n);
  for (Eigen::Index b = 0; b < ts.size(); ++b) {
    spline::hermite_weights<S>(n, ts(b), row.data());
    for (int i = 0; i < n; ++i) w(b, i) = row[i];
  }
  return w;
}

// Positional encoding of a single vector (tests and tooling).
inline Eigen::VectorXd positional_encode(const Eigen::VectorXd& x,
                                         const EncodingConfig& cfg) {
  Graph<double> g(false);
  auto r = g.positional_encode(g.constant(x.transpose()),
                               cfg.num_frequencies, cfg.include_raw_input);
  return g.val(r).row(0).transpose();
}

// Checkpoint format ----------------------------------------------------------
//
// Little-endian binary, documented in docs/formats.md:
//   bytes 0..5   magic "SPATS1"
//   u32          version (1)
//   i32 x 7      n_control, enc_freqs_spatial, enc_freqs_time,
//                enc_include_raw, mlp_layers, mlp_width, mlp_skip
//   then every parameter tensor in declaration order as float32 row-major.

namespace detail {

inline void write_i32(std::ostream& f, int32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
inline int32_t read_i32(std::istream& f) {
  int32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace detail

template <typename S>
inline void save_checkpoint(const std::string& path, SceneModel<S>& scene) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path);
  f.write("SPATS1", 6);
  detail::write_i32(f, 1);
  const ModelConfig& c = scene.cfg;
  for (int32_t v : {c.n_control, c.enc_freqs_spatial, c.enc_freqs_time,
                    int32_t(c.enc_include_raw), c.mlp_layers, c.mlp_width,
                    c.mlp_skip})
    detail::write_i32(f, v);
  for (Param<S>* p : scene.params()) {
    const Mat<S>& m = p->value;
    std::vector<float> buf(size_t(m.size()));
    size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index col = 0; col < m.cols(); ++col)
        buf[k++] = float(m(r, col));
    f.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
  }
  if (!f) throw DataError("short write on checkpoint " + path);
}

template <typename S>
inline SceneModel<S> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, "SPATS1", 6) != 0)
    throw DataError("bad checkpoint magic in " + path);
  if (detail::read_i32(f) != 1)
    throw DataError("unsupported checkpoint version in " + path);
  ModelConfig c;
  c.n_control = detail::read_i32(f);
  c.enc_freqs_spatial = detail::read_i32(f);
  c.enc_freqs_time = detail::read_i32(f);
  c.enc_include_raw = detail::read_i32(f) != 0;
  c.mlp_layers = detail::read_i32(f);
  c.mlp_width = detail::read_i32(f);
  c.mlp_skip = detail::read_i32(f);
  if (!f) throw DataError("truncated checkpoint header in " + path);
  SceneModel<S> scene = init_scene<S>(c, 0);
  for (Param<S>* p : scene.params()) {
    Mat<S>& m = p->value;
    std::vector<float> buf(size_t(m.size()));
    f.read(reinterpret_cast<char*>(buf.data()),
           std::streamsize(buf.size() * sizeof(float)));
    if (!f) throw DataError("truncated checkpoint payload in " + path);
    size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index col = 0; col < m.cols(); ++col) m(r, col) = S(buf[k++]);
  }
  return scene;
}

}  // namespace spats
