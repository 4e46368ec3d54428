#include "spats/render.hpp"

#include "doctest.h"
#include "helpers.hpp"

using namespace spats;

TEST_CASE("composite: endpoint and midpoint cases") {
  Eigen::Vector3d cf(1, 1, 1), cb(0, 0, 0);
  CHECK(composite(cf, cb, 1.0) == cf);
  CHECK(composite(cf, cb, 0.0) == cb);
  CHECK(composite(cf, cb, 0.5) == Eigen::Vector3d(0.5, 0.5, 0.5));
}

TEST_CASE("composite: convexity") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Vector3d cf(rng.uniform(), rng.uniform(), rng.uniform());
    Eigen::Vector3d cb(rng.uniform(), rng.uniform(), rng.uniform());
    const double a = rng.uniform();
    Eigen::Vector3d c = composite(cf, cb, a);
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(c(ch) >= std::min(cf(ch), cb(ch)) - 1e-12);
      CHECK(c(ch) <= std::max(cf(ch), cb(ch)) + 1e-12);
    }
  }
}

TEST_CASE("render_frame: initialized scene is uniform gray") {
  auto scene = init_scene<float>(testutil::tiny_model_config(), 3);
  FrameRender fr = render_frame(scene, 0, 4, 6, 5);
  for (float v : fr.composite.v) CHECK(v == 0.5f);
  for (float v : fr.alpha.v) CHECK(v == 0.5f);
  for (float v : fr.delta_fg.v) CHECK(v == 0.f);
}

TEST_CASE("render_frame: matches single-point evaluation bit for bit") {
  auto scene = init_scene<float>(testutil::tiny_model_config(), 21);
  testutil::randomize_params(scene, 22);
  const int h = 6, w = 5, t_count = 4, k = 2;
  FrameRender fr = render_frame(scene, k, t_count, h, w);
  const double t = frame_time(k, t_count);
  for (int i : {0, 3, 5})
    for (int j : {0, 2, 4}) {
      const double u = pixel_center_u(j, w);
      const double v = pixel_center_v(i, h);
      auto f = render_branch(scene.fg, u, v, t, true);
      auto b = render_branch(scene.bg, u, v, t, true);
      const float a = fr.alpha.at(i, j, 0);
      for (int ch = 0; ch < 3; ++ch) {
        CHECK(fr.fg.at(i, j, ch) == float(f.color(ch)));
        CHECK(fr.bg.at(i, j, ch) == float(b.color(ch)));
        CHECK(fr.composite.at(i, j, ch) ==
              a * float(f.color(ch)) + (1.f - a) * float(b.color(ch)));
      }
      CHECK(fr.delta_fg.at(i, j, 0) == float(f.delta(0)));
      CHECK(fr.delta_fg.at(i, j, 1) == float(f.delta(1)));
    }
}

TEST_CASE("render_frame: pixel (0,0) uses the half-pixel-center convention") {
  const int w = 8, h = 4;
  CHECK(pixel_center_u(0, w) == doctest::Approx(-1.0 + 1.0 / w));
  CHECK(pixel_center_v(0, h) == doctest::Approx(-1.0 + 1.0 / h));
  CHECK(pixel_center_u(w - 1, w) == doctest::Approx(1.0 - 1.0 / w));
}

TEST_CASE("render_branch: warmup path drops the color spline") {
  auto scene = init_scene<double>(testutil::tiny_model_config(), 31);
  testutil::randomize_params(scene, 32);
  // Zero the spatial head so delta is 0 and the color net sees x itself;
  // with the spline disabled the output must equal sigmoid(c0) exactly and
  // be independent of t.
  scene.fg.spatial.weights.back().value.setZero();
  Graph<double> g(false);
  Mat<double> x(1, 2);
  x << 0.15, -0.33;
  auto cr = scene.fg.eval_color(g, g.constant(x));
  const double expected = 1.0 / (1.0 + std::exp(-g.val(cr.c0)(0, 0)));
  auto s = render_branch(scene.fg, 0.15, -0.33, 0.4, false);
  CHECK(s.color(0) == doctest::Approx(expected).epsilon(1e-12));
  auto s2 = render_branch(scene.fg, 0.15, -0.33, 0.9, false);
  CHECK((s.color - s2.color).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("render_branch: increasing a c0 channel raises that output channel") {
  auto scene = init_scene<double>(testutil::tiny_model_config(), 41);
  testutil::randomize_params(scene, 42);
  auto before = render_branch(scene.fg, 0.2, 0.1, 0.5, true);
  scene.fg.color.weights.back().value.row(0).array() += 0.2;
  auto after = render_branch(scene.fg, 0.2, 0.1, 0.5, true);
  CHECK(after.color(0) > before.color(0));
}

TEST_CASE("render_canonical: init model gives gray base and zero deformation") {
  auto scene = init_scene<float>(testutil::tiny_model_config(), 51);
  CanonicalRender cr = render_canonical(scene.bg, {}, 8, 8, 0.3);
  for (float v : cr.base.v) CHECK(v == 0.5f);
  for (float v : cr.delta_logit.v) CHECK(v == 0.f);
  CHECK_THROWS_AS(render_canonical(scene.bg, Window{0, 0, 0, 1}, 8, 8, 0.3),
                  ConfigError);
}

TEST_CASE("render_canonical: default window equals the frame grid at identity") {
  auto scene = init_scene<float>(testutil::tiny_model_config(), 52);
  testutil::randomize_params(scene, 53);
  const int h = 6, w = 6;
  CanonicalRender cr = render_canonical(scene.bg, {}, h, w, 0.0);
  Graph<float> g(false);
  Mat<float> x(1, 2);
  x << float(pixel_center_u(2, w)), float(pixel_center_v(3, h));
  auto out = scene.bg.eval_color(g, g.constant(x));
  const float expect = 1.f / (1.f + std::exp(-g.val(out.c0)(0, 0)));
  CHECK(cr.base.at(3, 2, 0) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("bilinear sampling: centers, midpoints, clamping") {
  Image img(2, 2, 1);
  img.at(0, 0, 0) = 1.f;
  img.at(0, 1, 0) = 3.f;
  img.at(1, 0, 0) = 5.f;
  img.at(1, 1, 0) = 7.f;
  Window win{};  // [-1,1]^2
  float out;
  sample_image_bilinear(img, pixel_center_u(1, 2), pixel_center_v(0, 2), win,
                        &out);
  CHECK(out == 3.f);  // exact pixel center
  sample_image_bilinear(img, 0.0, pixel_center_v(0, 2), win, &out);
  CHECK(out == 2.f);  // midpoint of two horizontal neighbours
  sample_image_bilinear(img, -5.0, -5.0, win, &out);
  CHECK(out == 1.f);  // clamps to corner
  Image constant(3, 4, 1, 2.5f);
  sample_image_bilinear(constant, 9.0, -9.0, win, &out);
  CHECK(out == 2.5f);
}
