// spats: fit layered spline-field video models, render them, and edit the
// result in canonical space.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "spats/config.hpp"
#include "spats/edit.hpp"
#include "spats/synth.hpp"

namespace fs = std::filesystem;
using namespace spats;

namespace {

std::string indexed(const char* prefix, int k, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%05d%s", prefix, k, ext);
  return buf;
}

void parse_frame_range(const std::string& s, int t_count, int* lo, int* hi) {
  *lo = 0;
  *hi = t_count - 1;
  if (s.empty()) return;
  auto colon = s.find(':');
  if (colon == std::string::npos)
    throw ConfigError("frame range must be lo:hi");
  *lo = std::stoi(s.substr(0, colon));
  *hi = std::stoi(s.substr(colon + 1));
  if (*lo < 0 || *hi >= t_count || *lo > *hi)
    throw ConfigError("frame range outside [0," + std::to_string(t_count - 1) +
                      "]");
}

Window parse_window(const std::string& s) {
  if (s.empty()) return {};
  Window w;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf,%lf", &w.u0, &w.v0, &w.u1, &w.v1) != 4)
    throw ConfigError("window must be u0,v0,u1,v1");
  return w;
}

int cmd_synth(const std::string& spec_path, const std::string& out,
              uint64_t seed) {
  SyntheticSceneSpec spec = SyntheticSceneSpec::parse_file(spec_path);
  SyntheticScene scene = synth_scene(spec, seed);
  fs::create_directories(out);
  save_video(out, scene.video);
  for (int k = 0; k < spec.frames; ++k)
    write_png(out + "/" + indexed("mask_", k, ".png"), scene.alpha_gt[k]);
  save_flows(out, scene.flows);
  spec.save_file(out + "/scene_spec.txt");
  std::ofstream b(out + "/gt_brightness.csv");
  b << "frame,brightness\n";
  for (int k = 0; k < spec.frames; ++k)
    b << k << ',' << scene.brightness[k] << '\n';
  std::cout << "wrote " << spec.frames << " frames to " << out << "\n";
  return 0;
}

TrainConfig load_config(const std::string& config_path,
                        const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) apply_train_config(read_kv_file(config_path), &cfg);
  KvMap kv;
  for (const std::string& kvs : overrides) {
    auto eq = kvs.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kvs + "'");
    kv[kvs.substr(0, eq)] = kvs.substr(eq + 1);
  }
  apply_train_config(kv, &cfg);
  return cfg;
}

int cmd_fit(const std::string& data_dir, const std::string& out,
            const std::string& config_path,
            const std::vector<std::string>& overrides,
            const std::string& resume) {
  TrainConfig cfg = load_config(config_path, overrides);
  VideoTensor video = load_video(data_dir);
  std::vector<Image> masks = load_masks(data_dir, video.t_count());
  FlowSet flows = load_flows(data_dir, video.t_count(), cfg.cycle_thresh_px);

  fs::create_directories(out);
  {
    std::ofstream snap(out + "/config.snapshot");
    snap << train_config_to_kv(cfg);
  }
  std::vector<std::string> inputs{data_dir};
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out + "/manifest.json", make_manifest(cfg, inputs));

  FitOptions opts;
  opts.run_dir = out;
  opts.resume_checkpoint = resume;
  opts.on_log = [](const TrainLogRow& r) {
    std::cout << "iter " << r.iter << " lr " << r.lr << " total " << r.total
              << " rec " << r.rec << "\n";
  };
  FitResult res = fit(video, masks, flows, cfg, opts);
  std::cout << "finished " << res.final_iter << " iterations; model at " << out
            << "/model.spats\n";
  return 0;
}

int cmd_render(const std::string& ckpt, const std::string& out,
               const std::string& what, int t_count, int h, int w,
               const std::string& range, const std::string& window_str) {
  SceneModel<float> scene = load_checkpoint<float>(ckpt);
  if (t_count <= 0) t_count = scene.cfg.n_control;
  fs::create_directories(out);
  int lo, hi;
  parse_frame_range(range, t_count, &lo, &hi);

  if (what == "composite" || what == "layers") {
    for (int k = lo; k <= hi; ++k) {
      FrameRender fr = render_frame(scene, k, t_count, h, w);
      if (what == "composite") {
        write_png(out + "/" + indexed("frame_", k, ".png"), fr.composite);
      } else {
        write_png(out + "/" + indexed("fg_", k, ".png"), fr.fg);
        write_png(out + "/" + indexed("bg_", k, ".png"), fr.bg);
        write_png(out + "/" + indexed("alpha_", k, ".png"), fr.alpha);
      }
    }
    return 0;
  }
  if (what == "canonical") {
    Window win = parse_window(window_str);
    for (bool foreground : {true, false}) {
      LayerModel<float>& m = foreground ? scene.fg : scene.bg;
      const char* tag = foreground ? "fg" : "bg";
      for (int k = lo; k <= hi; ++k) {
        CanonicalRender cr =
            render_canonical(m, win, h, w, frame_time(k, t_count));
        if (k == lo) {
          write_png(out + "/canon_base_" + tag + ".png", cr.base);
          write_npy(out + "/canon_base_" + tag + ".npy", cr.base);
        }
        write_npy(out + "/" + indexed(("canon_dlogit_" + std::string(tag) + "_").c_str(), k, ".npy"),
                  cr.delta_logit);
      }
    }
    return 0;
  }
  throw ConfigError("--what must be composite, layers or canonical");
}

int cmd_edit(const std::string& ckpt, const std::string& edited_png,
             const std::string& branch, const std::string& out, int t_count,
             int h, int w, int canon_res, const std::string& window_str,
             bool literal) {
  SceneModel<float> scene = load_checkpoint<float>(ckpt);
  if (t_count <= 0) t_count = scene.cfg.n_control;
  if (branch != "fg" && branch != "bg")
    throw ConfigError("--branch must be fg or bg");
  fs::create_directories(out);

  Window win_fg = window_str.empty()
                      ? canonical_window(scene, true, t_count, h, w)
                      : parse_window(window_str);
  Window win_bg = window_str.empty()
                      ? canonical_window(scene, false, t_count, h, w)
                      : parse_window(window_str);

  Image edited = read_png(edited_png);
  const bool edit_fg = branch == "fg";
  EditedCanonicalSeq fg = make_edited_sequence(
      scene.fg, win_fg, canon_res, canon_res, t_count, edit_fg ? &edited : nullptr);
  EditedCanonicalSeq bg = make_edited_sequence(
      scene.bg, win_bg, canon_res, canon_res, t_count, edit_fg ? nullptr : &edited);

  for (int k = 0; k < t_count; ++k) {
    Image frame = propagate_edit(scene, fg, bg, k, t_count, h, w, literal);
    write_png(out + "/" + indexed("edited_", k, ".png"), frame);
  }
  std::cout << "wrote " << t_count << " edited frames to " << out << "\n";
  return 0;
}

int cmd_motion_edit(const std::string& ckpt, const std::string& spec_path,
                    const std::string& out, int t_count, int h, int w) {
  SceneModel<float> scene = load_checkpoint<float>(ckpt);
  if (t_count <= 0) t_count = scene.cfg.n_control;
  MotionEditSpec spec;
  KvMap kv = read_kv_file(spec_path);
  for (const auto& [key, val] : kv) {
    if (key == "amplify") spec.amplify = std::stod(val);
    else if (key == "offset_every") spec.offset_every = std::stoi(val);
    else if (key == "offset_du") spec.offset_du = std::stod(val);
    else if (key == "offset_dv") spec.offset_dv = std::stod(val);
    else if (key == "selection") spec.selection = read_png(val);
    else throw ConfigError("unknown motion-edit key: " + key);
  }
  spec.validate();
  fs::create_directories(out);

  Image fg_pts = spatial_point_grid(scene.fg, h, w);
  MotionEditResult edited = motion_edit(fg_pts, spec);
  if (edited.no_op)
    std::cerr << "warning: empty selection, motion edit is a no-op\n";
  for (int k = 0; k < t_count; ++k) {
    FrameRender fr =
        render_frame(scene, k, t_count, h, w, true, &edited.points, nullptr);
    write_png(out + "/" + indexed("frame_", k, ".png"), fr.composite);
  }
  std::cout << "wrote " << t_count << " motion-edited frames to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& video_dir, const std::string& flow_dir,
             const std::string& out_json, int n, double cycle_thresh) {
  VideoTensor video = load_video(video_dir);
  FlowSet flows = load_flows(flow_dir, video.t_count(), cycle_thresh);
  WarpConsistency wc = warping_consistency(video.frames, flows, n);
  nlohmann::json j{{"psnr_mean", wc.psnr_mean},
                   {"ssim_mean", wc.ssim_mean},
                   {"n", wc.n},
                   {"valid_fraction", wc.valid_fraction}};
  if (out_json.empty() || out_json == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream f(out_json);
    f << j.dump(2) << "\n";
    std::cout << "psnr " << wc.psnr_mean << " ssim " << wc.ssim_mean << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layered spline-field video fitting and editing"};
  app.require_subcommand(1);

  std::string spec_path, data_dir, out, config_path, resume, ckpt, what,
      range, window_str, edited_png, branch = "fg", video_dir, flow_dir,
      out_json;
  std::vector<std::string> overrides;
  uint64_t seed = 1;
  int t_count = 0, h = 64, w = 64, canon_res = 256, n = 3;
  double cycle_thresh = 1.0;
  bool literal = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  synth->add_option("--spec", spec_path, "scene spec file")->required();
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", seed, "generator seed");

  auto* fit_cmd = app.add_subcommand("fit", "fit a model to a video");
  fit_cmd->add_option("--data", data_dir, "frames/masks/flows directory")
      ->required();
  fit_cmd->add_option("--out", out, "run directory")->required();
  fit_cmd->add_option("--config", config_path, "key-value config file");
  fit_cmd->add_option("--set", overrides, "config override key=value");
  fit_cmd->add_option("--resume", resume, "checkpoint to resume from");

  auto* render = app.add_subcommand("render", "render a checkpoint");
  render->add_option("--checkpoint", ckpt)->required();
  render->add_option("--out", out)->required();
  render->add_option("--what", what, "composite|layers|canonical")->required();
  render->add_option("--t-count", t_count, "frame count (default n_control)");
  render->add_option("--height", h);
  render->add_option("--width", w);
  render->add_option("--frames", range, "lo:hi frame range");
  render->add_option("--window", window_str, "canonical window u0,v0,u1,v1");

  auto* edit = app.add_subcommand("edit", "propagate a canonical edit");
  edit->add_option("--checkpoint", ckpt)->required();
  edit->add_option("--edited", edited_png, "edited canonical base PNG")
      ->required();
  edit->add_option("--branch", branch, "fg|bg");
  edit->add_option("--out", out)->required();
  edit->add_option("--t-count", t_count);
  edit->add_option("--height", h);
  edit->add_option("--width", w);
  edit->add_option("--canon-res", canon_res, "canonical grid resolution");
  edit->add_option("--window", window_str);
  edit->add_flag("--literal-lookup", literal,
                 "sample at S(P_s,t) instead of x + S(P_s,t)");

  auto* motion = app.add_subcommand("motion-edit", "edit spatial control points");
  motion->add_option("--checkpoint", ckpt)->required();
  motion->add_option("--spec", spec_path, "motion edit key-value file")
      ->required();
  motion->add_option("--out", out)->required();
  motion->add_option("--t-count", t_count);
  motion->add_option("--height", h);
  motion->add_option("--width", w);

  auto* eval = app.add_subcommand("eval", "warping-consistency metrics");
  eval->add_option("--video", video_dir, "frame directory")->required();
  eval->add_option("--flows", flow_dir, "flow directory")->required();
  eval->add_option("--out", out_json, "metrics JSON path ('-' for stdout)");
  eval->add_option("--n", n, "warp distance in frames");
  eval->add_option("--cycle-thresh", cycle_thresh);

  try {
    app.parse(argc, argv);
    if (*synth) return cmd_synth(spec_path, out, seed);
    if (*fit_cmd) return cmd_fit(data_dir, out, config_path, overrides, resume);
    if (*render)
      return cmd_render(ckpt, out, what, t_count, h, w, range, window_str);
    if (*edit)
      return cmd_edit(ckpt, edited_png, branch, out, t_count, h, w, canon_res,
                      window_str, literal);
    if (*motion) return cmd_motion_edit(ckpt, spec_path, out, t_count, h, w);
    if (*eval) return cmd_eval(video_dir, flow_dir, out_json, n, cycle_thresh);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
