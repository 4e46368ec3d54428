#pragma once

// Fitting loop: uniform coordinate sampling, Adam with bias correction, the
// halving learning-rate schedule and the color-spline warmup. Single
// threaded and fully deterministic for a fixed seed.

#include <functional>
#include <optional>

#include "spats/data.hpp"
#include "spats/losses.hpp"

namespace spats {

struct TrainConfig {
  int total_iters = 100000;
  int batch_size = 10000;
  double lr0 = 1e-4;
  std::vector<double> lr_milestones = {0.5, 0.7, 0.8, 0.9};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double color_warmup_fraction = 0.5;
  uint64_t seed = 1;

  // model.n_control == 0 resolves to the frame count when fitting starts.
  ModelConfig model{.n_control = 0};
  LossWeights weights;
  FlowLossMode flow_mode = FlowLossMode::canonical;

  double mask_k = 31.0;        // regularization-mask distance, pixels
  double mask_erode_px = 0.0;  // degrade the guidance mask before training
  double cycle_thresh_px = 1.0;

  int log_every = 100;
  int eval_every = 500;
  int checkpoint_every = 5000;

  void validate() const;
};

// lr0 halved at every passed milestone; milestone m is passed once
// iter >= floor(m * total_iters).
double lr_schedule(int iter, const TrainConfig& cfg);

template <typename S>
struct AdamState {
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
  int64_t step = 0;

  void init(const std::vector<Param<S>*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
    step = 0;
  }
};

// Standard bias-corrected Adam update from accumulated gradients.
template <typename S>
void adam_step(const std::vector<Param<S>*>& params, AdamState<S>& state,
               double lr, const TrainConfig& cfg) {
  state.step += 1;
  const S b1 = S(cfg.adam_beta1), b2 = S(cfg.adam_beta2);
  const S eps = S(cfg.adam_eps);
  const S c1 = S(1) - S(std::pow(cfg.adam_beta1, double(state.step)));
  const S c2 = S(1) - S(std::pow(cfg.adam_beta2, double(state.step)));
  for (size_t i = 0; i < params.size(); ++i) {
    Mat<S>& g = params[i]->grad;
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i].array() =
        b2 * state.v[i].array() + (S(1) - b2) * g.array().square();
    params[i]->value.array() -=
        S(lr) * (state.m[i].array() / c1) /
        ((state.v[i].array() / c2).sqrt() + eps);
  }
}

// Guidance and flow data resampled into per-batch constants.
struct TrainingData {
  const VideoTensor* video = nullptr;
  const FlowSet* flows = nullptr;
  std::vector<Image> alpha_star;  // guidance after optional erosion
  std::vector<Image> m_k;
};

// Uniform over pixel centers x frames; fills the shifted and flow-advected
// partner coordinates. Frame T-1 samples carry valid = 0.
Batch<float> sample_coordinates(Rng& rng, const TrainingData& data, int b);

struct TrainLogRow {
  int iter;
  double lr;
  bool color_spline_on;
  double rec, fl, sm, pv, dc, guide, reg, bound, mxe, sep, total;
};

struct FitResult {
  SceneModel<float> scene;
  std::vector<TrainLogRow> log;
  std::vector<std::pair<int, double>> psnr_history;  // (iter, dB)
  int final_iter = 0;
};

struct FitOptions {
  std::string run_dir;  // empty: keep everything in memory only
  std::string resume_checkpoint;
  std::function<void(const TrainLogRow&)> on_log;
};

// End-to-end fitting per the training procedure. Aborts with NumericError
// (after writing an emergency checkpoint when a run dir is set) if the loss
// goes non-finite.
FitResult fit(const VideoTensor& video, const std::vector<Image>& masks,
              const FlowSet& flows, TrainConfig cfg,
              const FitOptions& opts = {});

// Mean composite PSNR over up to `max_frames` evenly spaced frames.
double eval_psnr(SceneModel<float>& scene, const VideoTensor& video,
                 bool use_color_spline, int max_frames = 4);

double psnr_from_mse(double mse);

// Optimizer/iteration sidecar so fits can resume with the Adam moments
// intact. Layout documented in docs/formats.md.
void save_train_state(const std::string& path, int iter,
                      const AdamState<float>& state);
bool load_train_state(const std::string& path, int* iter,
                      AdamState<float>* state);

}  // namespace spats
