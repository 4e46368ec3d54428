#include "spats/train.hpp"

#include <malloc.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace spats {

void TrainConfig::validate() const {
  if (total_iters < 1 || batch_size < 1)
    throw ConfigError("total_iters and batch_size must be positive");
  if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
  if (!(color_warmup_fraction > 0.0 && color_warmup_fraction < 1.0))
    throw ConfigError("color_warmup_fraction must lie in (0,1)");
  double prev = 0.0;
  for (double m : lr_milestones) {
    if (!(m > prev && m < 1.0))
      throw ConfigError("lr milestones must be strictly increasing in (0,1)");
    prev = m;
  }
  if (!(mask_k >= 1.0)) throw ConfigError("mask_k must be >= 1");
  if (mask_erode_px < 0) throw ConfigError("mask_erode_px must be >= 0");
  weights.validate();
  if (model.n_control != 0) model.validate();
}

double lr_schedule(int iter, const TrainConfig& cfg) {
  int passed = 0;
  for (double m : cfg.lr_milestones)
    if (iter >= int(std::floor(m * cfg.total_iters))) ++passed;
  return cfg.lr0 * std::pow(0.5, passed);
}

Batch<float> sample_coordinates(Rng& rng, const TrainingData& data, int b) {
  const VideoTensor& video = *data.video;
  const int h = video.h(), w = video.w(), t_count = video.t_count();
  const float du = 2.f / float(w);
  const float dv = 2.f / float(h);

  Batch<float> batch;
  batch.x.resize(b, 2);
  batch.x_shift.resize(b, 2);
  batch.x_flow.resize(b, 2);
  batch.flow.resize(b, 2);
  batch.valid.resize(b, 1);
  batch.t0.resize(b);
  batch.t1.resize(b);
  batch.times.resize(b, 1);
  batch.c_star.resize(b, 3);
  batch.alpha_star.resize(b, 1);
  batch.m_k.resize(b, 1);

  for (int s = 0; s < b; ++s) {
    const int k = int(rng.uniform_int(t_count));
    const int i = int(rng.uniform_int(h));
    const int j = int(rng.uniform_int(w));

    const float u = float(pixel_center_u(j, w));
    const float v = float(pixel_center_v(i, h));
    batch.x(s, 0) = u;
    batch.x(s, 1) = v;
    batch.x_shift(s, 0) = u + du;
    batch.x_shift(s, 1) = v + dv;

    float fu = 0.f, fv = 0.f, valid = 0.f;
    float t1 = float(frame_time(k, t_count));
    if (k + 1 < t_count) {
      const Image& flow = data.flows->forward[k];
      fu = flow.at(i, j, 0) * du;  // pixel units -> normalized
      fv = flow.at(i, j, 1) * dv;
      valid = data.flows->validity[k].at(i, j, 0);
      t1 = float(frame_time(k + 1, t_count));
    }
    batch.flow(s, 0) = valid > 0.5f ? fu : 0.f;
    batch.flow(s, 1) = valid > 0.5f ? fv : 0.f;
    batch.x_flow(s, 0) = u + batch.flow(s, 0);
    batch.x_flow(s, 1) = v + batch.flow(s, 1);
    batch.valid(s, 0) = valid > 0.5f ? 1.f : 0.f;
    batch.t0(s) = float(frame_time(k, t_count));
    batch.t1(s) = valid > 0.5f ? t1 : batch.t0(s);
    batch.times(s, 0) = batch.t0(s);

    for (int ch = 0; ch < 3; ++ch)
      batch.c_star(s, ch) = video.frames[k].at(i, j, ch);
    batch.alpha_star(s, 0) = data.alpha_star[k].at(i, j, 0);
    batch.m_k(s, 0) = data.m_k[k].at(i, j, 0);
  }
  return batch;
}

double psnr_from_mse(double mse) {
  if (mse < 1e-12) return 99.0;
  return -10.0 * std::log10(mse);
}

double eval_psnr(SceneModel<float>& scene, const VideoTensor& video,
                 bool use_color_spline, int max_frames) {
  const int t_count = video.t_count();
  const int n_eval = std::min(max_frames, t_count);
  double total = 0.0;
  for (int e = 0; e < n_eval; ++e) {
    const int k = n_eval > 1 ? e * (t_count - 1) / (n_eval - 1) : 0;
    FrameRender fr = render_frame(scene, k, t_count, video.h(), video.w(),
                                  use_color_spline);
    double mse = 0.0;
    const Image& gt = video.frames[k];
    for (size_t idx = 0; idx < gt.v.size(); ++idx) {
      const double d = double(fr.composite.v[idx]) - double(gt.v[idx]);
      mse += d * d;
    }
    total += psnr_from_mse(mse / double(gt.v.size()));
  }
  return total / n_eval;
}

namespace {

void write_log_header(std::ofstream& f) {
  f << "iter,lr,color_spline,rec,fl,sm,pv,dc,guide,reg,bound,mxe,"
       "w_fl,w_ds,w_dc,sep,total\n";
}

void write_log_row(std::ofstream& f, const TrainLogRow& r,
                   const LossWeights& w) {
  f << r.iter << ',' << r.lr << ',' << (r.color_spline_on ? 1 : 0) << ','
    << r.rec << ',' << r.fl << ',' << r.sm << ',' << r.pv << ',' << r.dc
    << ',' << r.guide << ',' << r.reg << ',' << r.bound << ',' << r.mxe << ','
    << w.lambda_fl * r.fl << ',' << w.lambda_ds * (r.sm + r.pv) << ','
    << w.lambda_dc * r.dc << ',' << r.sep << ',' << r.total << '\n';
}

std::string ckpt_name(const std::string& dir, int iter) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06d.spats", iter);
  return dir + "/" + buf;
}

}  // namespace

void save_train_state(const std::string& path, int iter,
                      const AdamState<float>& state) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write train state " + path);
  f.write("SPATS1S", 7);
  int32_t v = int32_t(iter);
  f.write(reinterpret_cast<const char*>(&v), 4);
  int64_t step = state.step;
  f.write(reinterpret_cast<const char*>(&step), 8);
  auto dump = [&](const std::vector<MatF>& ms) {
    for (const MatF& m : ms)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          const float x = m(r, c);
          f.write(reinterpret_cast<const char*>(&x), 4);
        }
  };
  dump(state.m);
  dump(state.v);
}

bool load_train_state(const std::string& path, int* iter,
                      AdamState<float>* state) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  char magic[7];
  f.read(magic, 7);
  if (!f || std::memcmp(magic, "SPATS1S", 7) != 0)
    throw DataError("bad train-state magic in " + path);
  int32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  f.read(reinterpret_cast<char*>(&state->step), 8);
  auto slurp = [&](std::vector<MatF>& ms) {
    for (MatF& m : ms)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          float x = 0;
          f.read(reinterpret_cast<char*>(&x), 4);
          m(r, c) = x;
        }
  };
  slurp(state->m);
  slurp(state->v);
  if (!f) throw DataError("truncated train state " + path);
  *iter = v;
  return true;
}

FitResult fit(const VideoTensor& video, const std::vector<Image>& masks,
              const FlowSet& flows, TrainConfig cfg, const FitOptions& opts) {
  // The tape allocates and frees megabyte-scale buffers every iteration;
  // keep glibc from bouncing them through mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);

  const int t_count = video.t_count();
  if (t_count < 2) throw DataError("video needs at least 2 frames");
  if (int(masks.size()) != t_count)
    throw DataError("mask count does not match frame count");
  if (int(flows.forward.size()) != t_count - 1 ||
      int(flows.backward.size()) != t_count - 1 ||
      int(flows.validity.size()) != t_count - 1)
    throw DataError("flow set does not match frame count");
  for (const Image& m : masks)
    if (m.h != video.h() || m.w != video.w())
      throw DataError("mask size does not match frames");
  for (const Image& f : flows.forward)
    if (f.h != video.h() || f.w != video.w())
      throw DataError("flow size does not match frames");

  if (cfg.model.n_control == 0) cfg.model.n_control = t_count;
  cfg.validate();
  cfg.model.validate();

  TrainingData data;
  data.video = &video;
  data.flows = &flows;
  for (const Image& m : masks) {
    Image guide = cfg.mask_erode_px > 0 ? erode_mask(m, cfg.mask_erode_px) : m;
    data.m_k.push_back(build_regularization_mask(guide, cfg.mask_k));
    data.alpha_star.push_back(std::move(guide));
  }

  FitResult result;
  result.scene = init_scene<float>(cfg.model, cfg.seed);
  auto params = result.scene.params();
  AdamState<float> adam;
  adam.init(params);

  int start_iter = 0;
  if (!opts.resume_checkpoint.empty()) {
    result.scene = load_checkpoint<float>(opts.resume_checkpoint);
    params = result.scene.params();
    adam.init(params);
    load_train_state(opts.resume_checkpoint + ".state", &start_iter, &adam);
  }

  std::ofstream train_csv, eval_csv;
  const bool persist = !opts.run_dir.empty();
  std::string ckpt_dir;
  if (persist) {
    fs::create_directories(opts.run_dir + "/logs");
    ckpt_dir = opts.run_dir + "/checkpoints";
    fs::create_directories(ckpt_dir);
    fs::create_directories(opts.run_dir + "/previews");
    const bool fresh =
        start_iter == 0 || !fs::exists(opts.run_dir + "/logs/train.csv");
    train_csv.open(opts.run_dir + "/logs/train.csv",
                   fresh ? std::ios::trunc : std::ios::app);
    eval_csv.open(opts.run_dir + "/logs/eval.csv",
                  fresh ? std::ios::trunc : std::ios::app);
    if (fresh) {
      write_log_header(train_csv);
      eval_csv << "iter,psnr\n";
    }
  }

  Rng rng(cfg.seed ^ 0x5eed5eed5eedull);
  // Re-sync the sampler stream when resuming so a resumed run continues the
  // exact coordinate sequence.
  for (int it = 0; it < start_iter; ++it)
    for (int s = 0; s < cfg.batch_size * 3; ++s) rng.next_u64();

  const int warmup_end =
      int(std::floor(cfg.color_warmup_fraction * cfg.total_iters));

  auto write_ckpt = [&](int iter) {
    if (!persist) return;
    const std::string path = ckpt_name(ckpt_dir, iter);
    save_checkpoint(path, result.scene);
    save_train_state(path + ".state", iter, adam);
  };

  for (int iter = start_iter; iter < cfg.total_iters; ++iter) {
    const double lr = lr_schedule(iter, cfg);
    const bool color_spline_on = iter >= warmup_end;

    Batch<float> batch = sample_coordinates(rng, data, cfg.batch_size);

    Graph<float> g;
    LossRefs<float> losses;
    try {
      losses = build_total_loss(g, result.scene, batch, cfg.weights,
                                color_spline_on, cfg.flow_mode);
      result.scene.zero_grads();
      g.backward(losses.total);
    } catch (const NumericError& e) {
      if (persist) write_ckpt(iter);
      throw NumericError("aborting at iteration " + std::to_string(iter) +
                         ": " + e.what());
    }
    adam_step(params, adam, lr, cfg);

    const bool log_now = iter % cfg.log_every == 0 ||
                         iter + 1 == cfg.total_iters || iter == warmup_end;
    if (log_now) {
      TrainLogRow row{iter,
                      lr,
                      color_spline_on,
                      double(g.scalar(losses.rec)),
                      double(g.scalar(losses.fl)),
                      double(g.scalar(losses.sm)),
                      double(g.scalar(losses.pv)),
                      double(g.scalar(losses.dc)),
                      double(g.scalar(losses.guide)),
                      double(g.scalar(losses.reg)),
                      double(g.scalar(losses.bound)),
                      double(g.scalar(losses.mxe)),
                      double(g.scalar(losses.sep)),
                      double(g.scalar(losses.total))};
      result.log.push_back(row);
      if (persist) {
        write_log_row(train_csv, row, cfg.weights);
        train_csv.flush();
      }
      if (opts.on_log) opts.on_log(row);
    }

    if (iter % cfg.eval_every == 0 || iter + 1 == cfg.total_iters) {
      const double psnr = eval_psnr(result.scene, video, color_spline_on);
      result.psnr_history.emplace_back(iter, psnr);
      if (persist) {
        eval_csv << iter << ',' << psnr << '\n';
        eval_csv.flush();
        FrameRender fr = render_frame(result.scene, 0, t_count, video.h(),
                                      video.w(), color_spline_on);
        char buf[48];
        std::snprintf(buf, sizeof(buf), "/previews/iter_%06d.png", iter);
        write_png(opts.run_dir + buf, fr.composite);
      }
    }

    if (cfg.checkpoint_every > 0 && iter > 0 && iter % cfg.checkpoint_every == 0)
      write_ckpt(iter);
    result.final_iter = iter + 1;
  }

  if (persist) {
    write_ckpt(cfg.total_iters);
    save_checkpoint(opts.run_dir + "/model.spats", result.scene);
  }
  return result;
}

}  // namespace spats
