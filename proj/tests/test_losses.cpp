#include "spats/losses.hpp"

#include "doctest.h"
#include "helpers.hpp"

using namespace spats;
using G = Graph<double>;

TEST_CASE("loss_rec: stated values") {
  G g;
  Mat<double> c(1, 3), t(1, 3);
  c << 1, 1, 1;
  t << 0, 0, 0;
  CHECK(g.scalar(loss_rec(g, g.constant(c), t)) == doctest::Approx(1.0));
  CHECK(g.scalar(loss_rec(g, g.constant(t), t)) == 0.0);

  Mat<double> c2(2, 3), t2(2, 3);
  c2 << 0.2, 0.2, 0.2, 0.5, 0.5, 0.5;
  t2 << 0.2, 0.2, 0.2, 0.2, 0.2, 0.2;
  CHECK(g.scalar(loss_rec(g, g.constant(c2), t2)) == doctest::Approx(0.15));

  Mat<double> wrong(1, 2);
  wrong << 0, 0;
  CHECK_THROWS_AS(loss_rec(g, g.constant(wrong), t), std::invalid_argument);
}

TEST_CASE("loss_flow: zero flow and masked-out batches") {
  G g;
  Mat<double> d0 = Mat<double>::Zero(4, 2);
  Mat<double> flow = Mat<double>::Zero(4, 2);
  Mat<double> valid = Mat<double>::Ones(4, 1);
  // init-model case: both deltas are zero
  auto l = loss_flow(g, g.constant(d0), g.constant(d0), flow, valid,
                     FlowLossMode::canonical);
  CHECK(g.scalar(l) == 0.0);
  auto l2 = loss_flow(g, g.constant(d0), g.constant(d0), flow, valid,
                      FlowLossMode::paper_literal);
  CHECK(g.scalar(l2) == 0.0);
  // all-invalid batch contributes exactly zero even with nonzero residuals
  Mat<double> d1 = Mat<double>::Constant(4, 2, 0.3);
  Mat<double> none = Mat<double>::Zero(4, 1);
  auto l3 = loss_flow(g, g.constant(d1), g.constant(d0), flow, none,
                      FlowLossMode::canonical);
  CHECK(g.scalar(l3) == 0.0);
}

TEST_CASE("loss_flow: canonical vs literal differ by the flow term") {
  G g;
  Rng rng(4);
  Mat<double> d0(3, 2), d1(3, 2), flow(3, 2);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 2; ++k) {
      d0(i, k) = rng.uniform(-0.2, 0.2);
      d1(i, k) = rng.uniform(-0.2, 0.2);
      flow(i, k) = rng.uniform(-0.2, 0.2);
    }
  Mat<double> valid = Mat<double>::Ones(3, 1);
  const double lit = g.scalar(loss_flow(g, g.constant(d0), g.constant(d1),
                                        flow, valid, FlowLossMode::paper_literal));
  double expect_lit = (d0 - d1).cwiseAbs().sum() / 6.0;
  CHECK(lit == doctest::Approx(expect_lit));
  const double canon = g.scalar(loss_flow(g, g.constant(d0), g.constant(d1),
                                          flow, valid, FlowLossMode::canonical));
  double expect_canon = (d0 - d1 - flow).cwiseAbs().sum() / 6.0;
  CHECK(canon == doctest::Approx(expect_canon));
}

TEST_CASE("loss_smooth: zero for identical fields, d for constant offset") {
  G g;
  Mat<double> d = Mat<double>::Constant(5, 2, 0.125);
  CHECK(g.scalar(loss_smooth(g, g.constant(d), g.constant(d))) == 0.0);
  Mat<double> shifted = d.array() + 0.04;
  CHECK(g.scalar(loss_smooth(g, g.constant(d), g.constant(shifted))) ==
        doctest::Approx(0.04));
}

TEST_CASE("loss_pv: inherits the direction-penalty examples") {
  G g;
  // one sample, N=3, D=2: (0,0),(1,0),(1,1) in point-major layout
  Mat<double> corner(1, 6);
  corner << 0, 0, 1, 0, 1, 1;
  CHECK(g.scalar(loss_pv(g, g.constant(corner), 3)) == doctest::Approx(2.0));
  Mat<double> line(1, 8);
  line << 0, 0, 1, 0, 2, 0, 3, 0;
  CHECK(g.scalar(loss_pv(g, g.constant(line), 4)) ==
        doctest::Approx(0.0).epsilon(1e-9));
  Mat<double> same = Mat<double>::Zero(1, 8);
  CHECK(g.scalar(loss_pv(g, g.constant(same), 4)) == 0.0);
}

TEST_CASE("loss_color_reg: mean square and quadratic scaling") {
  G g;
  Mat<double> pc(1, 3);
  pc << 3, 4, 0;
  const double base = g.scalar(loss_color_reg(g, g.constant(pc)));
  CHECK(base == doctest::Approx(25.0 / 3.0));
  Mat<double> doubled = 2 * pc;
  CHECK(g.scalar(loss_color_reg(g, g.constant(doubled))) ==
        doctest::Approx(4 * base));
  CHECK(g.scalar(loss_color_reg(g, g.constant(Mat<double>::Zero(2, 6)))) == 0.0);
}

TEST_CASE("loss_guide: normalizer and guards") {
  G g;
  Mat<double> alpha = Mat<double>::Zero(4, 1);
  Mat<double> star = Mat<double>::Ones(4, 1);
  CHECK(g.scalar(loss_guide(g, g.constant(alpha), star)) == doctest::Approx(1.0));
  CHECK(g.scalar(loss_guide(g, g.constant(star), star)) == 0.0);
  Mat<double> none = Mat<double>::Zero(4, 1);
  Mat<double> a2 = Mat<double>::Constant(4, 1, 0.7);
  CHECK(g.scalar(loss_guide(g, g.constant(a2), none)) == 0.0);
}

TEST_CASE("loss_reg_bound: stated values") {
  G g;
  const int b = 6;
  Mat<double> zero = Mat<double>::Zero(b, 1);
  Mat<double> ones = Mat<double>::Ones(b, 1);
  auto rb0 = loss_reg_bound(g, g.constant(zero), zero, ones);
  CHECK(g.scalar(rb0.reg) == 0.0);
  CHECK(g.scalar(rb0.bound) == 0.0);

  Mat<double> half = Mat<double>::Constant(b, 1, 0.5);
  auto rb1 = loss_reg_bound(g, g.constant(half), zero, ones);  // m_k = 1
  CHECK(g.scalar(rb1.reg) == doctest::Approx(0.5));
  CHECK(g.scalar(rb1.bound) == 0.0);

  Mat<double> quarter = Mat<double>::Constant(b, 1, 0.25);
  auto rb2 = loss_reg_bound(g, g.constant(quarter), zero, zero);  // m_k = 0
  CHECK(g.scalar(rb2.reg) == 0.0);
  CHECK(g.scalar(rb2.bound) == doctest::Approx(0.25));
}

TEST_CASE("loss_mxe: value, guard, and stop-gradient contract") {
  G g;
  const int b = 5;
  Mat<double> zero = Mat<double>::Zero(b, 1);
  Mat<double> cstar = Mat<double>::Constant(b, 3, 0.7);
  Mat<double> cb_val = Mat<double>::Constant(b, 3, 0.5);  // |c*-cb| = 0.2
  CHECK(g.scalar(loss_mxe(g, g.constant(zero), cstar, g.constant(cb_val))) ==
        0.0);
  Mat<double> ones = Mat<double>::Ones(b, 1);
  CHECK(g.scalar(loss_mxe(g, g.constant(ones), cstar, g.constant(cb_val))) ==
        doctest::Approx(-0.2).epsilon(1e-5));

  // gradient w.r.t. background color parameters is identically zero
  Param<double> wb;
  wb.value = Mat<double>::Constant(3, 1, 0.4);
  Param<double> wa;
  wa.value = Mat<double>::Constant(1, 1, 0.3);
  auto build = [&](G& gg) {
    auto cb = gg.sigmoid(gg.linear(gg.constant(Mat<double>::Ones(b, 1)), wb,
                                   nullptr));  // b x 3
    auto alpha = gg.sigmoid(
        gg.linear(gg.constant(Mat<double>::Ones(b, 1)), wa, nullptr));
    return loss_mxe(gg, alpha, cstar, cb);
  };
  G g2;
  auto loss = build(g2);
  wb.zero_grad();
  wa.zero_grad();
  g2.backward(loss);
  CHECK(wb.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(wa.grad.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("loss_sep and loss_total: weight arithmetic") {
  G g;
  auto c = [&](double v) { return g.constant(Mat<double>::Constant(1, 1, v)); };
  LossWeights w;
  CHECK(g.scalar(loss_sep(g, c(1), c(1), c(1), c(-1), w)) ==
        doctest::Approx(1.41));
  CHECK(g.scalar(loss_sep(g, c(0), c(0), c(0), c(0), w)) == 0.0);
}

TEST_CASE("loss weights: defaults match the published values") {
  LossWeights w;
  CHECK(w.lambda_fl == 100.0);
  CHECK(w.lambda_ds == 0.1);
  CHECK(w.lambda_dc == 0.001);
  CHECK(w.lambda_bound == 0.01);
  CHECK(w.lambda_reg == 0.5);
  CHECK(w.lambda_mxe == 0.1);
  LossWeights bad;
  bad.lambda_fl = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

namespace {

struct TinyFixture {
  SyntheticScene scene;
  SceneModel<double> model;
  Batch<double> batch;
  std::vector<Param<double>*> params;

  TinyFixture() {
    SyntheticSceneSpec spec = testutil::tiny_scene_spec(8, 2);
    scene = synth_scene(spec, 1);
    model = init_scene<double>(testutil::tiny_model_config(3), 6);
    testutil::randomize_params(model, 9);
    batch = testutil::full_batch<double>(scene);
    params = model.params();
  }

  // Shared forward pieces for single-term builders.
  LossRefs<double> all(G& g, bool color_spline = true) {
    return build_total_loss(g, model, batch, LossWeights{}, color_spline,
                            FlowLossMode::canonical);
  }

  testutil::FrozenRefs frozen(G& g, const testutil::FrozenDetach& fr,
                              bool color_spline = true) {
    return testutil::build_frozen_total(g, model, batch, LossWeights{},
                                        color_spline,
                                        FlowLossMode::canonical, fr);
  }
};

}  // namespace

TEST_CASE("gradient suite: every loss term matches finite differences") {
  TinyFixture fx;
  auto check_term = [&](const std::string& name, auto select) {
    const double err = testutil::max_rel_grad_error(
        fx.params, [&](G& g) { return select(fx.all(g)); });
    INFO("term " << name << " err " << err);
    CHECK(err < 1e-6);
  };
  check_term("rec", [](const LossRefs<double>& l) { return l.rec; });
  check_term("fl", [](const LossRefs<double>& l) { return l.fl; });
  check_term("sm", [](const LossRefs<double>& l) { return l.sm; });
  check_term("pv", [](const LossRefs<double>& l) { return l.pv; });
  check_term("dc", [](const LossRefs<double>& l) { return l.dc; });
  check_term("guide", [](const LossRefs<double>& l) { return l.guide; });
  check_term("reg", [](const LossRefs<double>& l) { return l.reg; });
  check_term("bound", [](const LossRefs<double>& l) { return l.bound; });

  // mxe (and everything containing it) detaches |c*-c_b| and the alpha-sum
  // normalizer; the FD oracle pins those at their unperturbed values.
  auto fr = testutil::capture_detached(fx.model, fx.batch, LossWeights{}, true,
                                       FlowLossMode::canonical);
  auto check_frozen = [&](const std::string& name, auto select) {
    const double err = testutil::max_rel_grad_error(
        fx.params, [&](G& g) { return select(fx.frozen(g, fr)); });
    INFO("term " << name << " err " << err);
    CHECK(err < 1e-6);
  };
  check_frozen("mxe", [](const testutil::FrozenRefs& f) { return f.mxe; });
  check_frozen("sep", [](const testutil::FrozenRefs& f) { return f.sep; });
}

TEST_CASE("gradient suite: total loss matches finite differences") {
  TinyFixture fx;
  auto fr = testutil::capture_detached(fx.model, fx.batch, LossWeights{}, true,
                                       FlowLossMode::canonical);
  const double err = testutil::max_rel_grad_error(
      fx.params, [&](G& g) { return fx.frozen(g, fr).total; });
  CHECK(err < 1e-6);
  // warmup path (color spline off) has its own graph shape
  auto frw = testutil::capture_detached(fx.model, fx.batch, LossWeights{},
                                        false, FlowLossMode::canonical);
  const double err_warm = testutil::max_rel_grad_error(
      fx.params, [&](G& g) { return fx.frozen(g, frw, false).total; });
  CHECK(err_warm < 1e-6);
}

TEST_CASE("gradient suite: frozen and live totals have identical gradients") {
  // The frozen FD oracle is only valid if the real objective's analytic
  // gradients coincide with the frozen objective's.
  TinyFixture fx;
  auto fr = testutil::capture_detached(fx.model, fx.batch, LossWeights{}, true,
                                       FlowLossMode::canonical);
  G g1;
  auto live = fx.all(g1).total;
  for (auto* p : fx.params) p->zero_grad();
  g1.backward(live);
  std::vector<Mat<double>> live_grads;
  for (auto* p : fx.params) live_grads.push_back(p->grad);

  G g2;
  auto froz = fx.frozen(g2, fr).total;
  for (auto* p : fx.params) p->zero_grad();
  g2.backward(froz);
  CHECK(g1.scalar(live) == doctest::Approx(g2.scalar(froz)).epsilon(1e-9));
  double worst = 0;
  for (size_t i = 0; i < fx.params.size(); ++i)
    worst = std::max(worst,
                     (live_grads[i] - fx.params[i]->grad).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-12);
}

TEST_CASE("gradient suite: l_total example tolerance at h=1e-4") {
  // Coarser-step variant: 1e-3 relative tolerance in double precision.
  TinyFixture fx;
  auto fr = testutil::capture_detached(fx.model, fx.batch, LossWeights{}, true,
                                       FlowLossMode::canonical);
  const double err = testutil::max_rel_grad_error(
      fx.params, [&](G& g) { return fx.frozen(g, fr).total; }, 1e-4);
  CHECK(err < 1e-3);
}

TEST_CASE("loss breakdown: signs and composition invariants") {
  TinyFixture fx;
  G g;
  auto l = fx.all(g);
  CHECK(g.scalar(l.rec) >= 0.0);
  CHECK(g.scalar(l.fl) >= 0.0);
  CHECK(g.scalar(l.sm) >= 0.0);
  CHECK(g.scalar(l.pv) >= 0.0);
  CHECK(g.scalar(l.dc) >= 0.0);
  CHECK(g.scalar(l.guide) >= 0.0);
  CHECK(g.scalar(l.reg) >= 0.0);
  CHECK(g.scalar(l.bound) >= 0.0);
  CHECK(g.scalar(l.mxe) <= 0.0);
  CHECK(std::isfinite(g.scalar(l.total)));
  LossWeights w;
  const double total = g.scalar(l.rec) + w.lambda_fl * g.scalar(l.fl) +
                       w.lambda_ds * (g.scalar(l.sm) + g.scalar(l.pv)) +
                       w.lambda_dc * g.scalar(l.dc) + g.scalar(l.sep);
  CHECK(g.scalar(l.total) == doctest::Approx(total).epsilon(1e-12));
  const double sep = g.scalar(l.guide) + w.lambda_reg * g.scalar(l.reg) +
                     w.lambda_bound * g.scalar(l.bound) +
                     w.lambda_mxe * g.scalar(l.mxe);
  CHECK(g.scalar(l.sep) == doctest::Approx(sep).epsilon(1e-12));
}

TEST_CASE("loss breakdown: composite color matches alpha blending") {
  TinyFixture fx;
  G g;
  auto l = fx.all(g);
  const auto& a = g.val(l.alpha);
  const auto& cf = g.val(l.color_fg);
  const auto& cb = g.val(l.color_bg);
  const auto& c = g.val(l.color);
  for (int s = 0; s < 8; ++s)
    for (int ch = 0; ch < 3; ++ch)
      CHECK(c(s, ch) == doctest::Approx(a(s, 0) * cf(s, ch) +
                                        (1 - a(s, 0)) * cb(s, ch))
                            .epsilon(1e-6));
}
