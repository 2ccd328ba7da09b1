#include "trajfield/commands.hpp"

#include "trajfield/io.hpp"
#include "trajfield/metrics.hpp"
#include "trajfield/model.hpp"
#include "trajfield/server.hpp"
#include "trajfield/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numeric>

#ifndef TRAJFIELD_VERSION
#define TRAJFIELD_VERSION "0.1.0"
#endif

namespace trajfield {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* version_string() { return TRAJFIELD_VERSION; }

std::vector<Pose> orbit_path(const Vec3& target, double radius, int n, double start_az_deg,
                             double sweep_deg, double elevation_deg, double elevation_wobble_deg) {
  std::vector<Pose> out;
  for (int i = 0; i < n; ++i) {
    const double u = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    out.push_back(orbit_pose(target, radius, start_az_deg + sweep_deg * u,
                             elevation_deg + elevation_wobble_deg * std::sin(M_PI * u)));
  }
  return out;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Writes the run manifest; `started` is filled in by the caller at launch.
void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    std::uint64_t seed, const std::string& started) {
  write_json(path, {{"command", command},
                    {"config", config},
                    {"seed", seed},
                    {"version", version_string()},
                    {"threads", omp_get_max_threads()},
                    {"started_at", started},
                    {"finished_at", utc_now()}});
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.png", i);
  return buf;
}

json stats_json(std::size_t i, const FrameStats& s) {
  return {{"frame", i},
          {"samples_total", s.samples_total},
          {"samples_per_ray", s.samples_per_ray_mean},
          {"guided_fraction", s.guided_pixel_fraction},
          {"ms_volume", s.ms_volume},
          {"ms_warp", s.ms_warp},
          {"ms_nn", s.ms_neural},
          {"ms_total", s.ms_total},
          {"buffer_len", s.buffer_len}};
}

json pipeline_json(const PipelineConfig& p) {
  return {{"k", p.channels},          {"l", p.buffer_len},
          {"scale", p.scale},         {"epsilon", p.resolved_epsilon()},
          {"step", p.march.step},     {"min_transmittance", p.march.min_transmittance},
          {"max_samples", p.march.max_samples},
          {"near", p.march.near},     {"far", p.march.far},
          {"opacity_valid", p.opacity_valid},
          {"use_guidance", p.use_guidance},
          {"use_nn", p.use_neural_renderer}};
}

std::vector<FrameOutput> render_sequence(const SceneModel& m, const std::vector<Pose>& poses,
                                         const PipelineConfig& cfg) {
  RenderBuffer buffer(cfg.buffer_len);
  std::vector<FrameOutput> out;
  out.reserve(poses.size());
  for (const Pose& p : poses)
    out.push_back(render_next(m.field, m.occupancy, m.renderer, buffer, p, m.camera, cfg));
  return out;
}

// ---------------------------------------------------------------------------

struct GenSceneArgs {
  std::string preset = "mixed";
  int views = 100;
  std::string out;
  std::uint64_t seed = 0;
  int size = 96;
  double fov = 40.0;
  double radius = 3.2;
  double fine_step = 1.0 / 256.0;
  int path_frames = 0;
};

int cmd_gen_scene(const GenSceneArgs& a, const std::string& started) {
  const AnalyticScene scene = AnalyticScene::preset(a.preset);
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(a.fov, a.size, a.size);
  std::mt19937_64 rng(a.seed);
  const OrbitSampling orbit{a.radius, 10.0, 70.0};
  const Dataset ds = make_dataset(scene, a.views, orbit, intr, a.fine_step, rng);
  const fs::path out(a.out);
  ensure_dir(out);
  save_posed_image_dataset(ds, out);

  if (a.path_frames > 0) {
    const auto poses = orbit_path(scene.bounds.center(), a.radius, a.path_frames, 20.0,
                                  a.path_frames * 1.0, 35.0, 8.0);
    Dataset path;
    path.bounds = ds.bounds;
    path.near = ds.near;
    path.far = ds.far;
    for (const Pose& p : poses) {
      DatasetItem it;
      it.pose = p;
      it.intrinsics = intr;
      it.split = "test";
      it.image = oracle_render(scene, p, intr, a.fine_step, ds.near, ds.far).image;
      path.items.push_back(std::move(it));
    }
    ensure_dir(out / "path");
    save_posed_image_dataset(path, out / "path");
    save_trajectory(poses, out / "path" / "traj.json");
  }

  write_manifest(out / "manifest.json", "gen-scene",
                 {{"preset", a.preset}, {"views", a.views}, {"size", a.size}, {"fov_y", a.fov},
                  {"radius", a.radius}, {"fine_step", a.fine_step}, {"path_frames", a.path_frames},
                  {"near", ds.near}, {"far", ds.far}},
                 a.seed, started);
  std::cout << "wrote " << ds.size() << " views to " << out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string log;
  TrainConfig cfg;
  PipelineConfig pipeline;
  ModelSpec spec;
  int grid = 64;
};

int cmd_train(TrainArgs a, const std::string& started) {
  const Dataset ds = load_posed_image_dataset(a.data);
  a.spec.resolution = {a.grid, a.grid, a.grid};
  // The occupancy grid must divide the field grid.
  const int occ_res = std::gcd(a.grid, a.spec.occupancy_resolution.nx);
  a.spec.occupancy_resolution = {occ_res, occ_res, occ_res};
  const fs::path ckpt(a.out);
  if (ckpt.has_parent_path()) ensure_dir(ckpt.parent_path());
  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());

  const auto t0 = std::chrono::steady_clock::now();
  TrainLog logger = [&](const std::string& phase, int iter, double loss) {
    const double p = loss > 0.0 ? std::min(kPsnrCap, -10.0 * std::log10(loss)) : kPsnrCap;
    log << json{{"phase", phase}, {"iter", iter}, {"loss", loss}, {"psnr", p}}.dump() << '\n';
    if ((iter + 1) % 100 == 0)
      std::cerr << phase << " " << iter + 1 << " loss " << loss << " psnr " << p << "\n";
  };
  SceneModel model = train_model(ds, a.cfg, a.pipeline, a.spec, logger);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_model(model, ckpt);

  const auto train = ds.split("train");
  const double train_psnr = field_psnr(model.field, model.occupancy, train, model.pipeline.march);
  log << json{{"phase", "summary"}, {"train_field_psnr", train_psnr}, {"seconds", secs}}.dump() << '\n';

  const TrainConfig& c = a.cfg;
  write_manifest(fs::path(a.out + ".manifest.json"), "train",
                 {{"data", a.data},
                  {"checkpoint", a.out},
                  {"log", log_path.string()},
                  {"grid", a.grid},
                  {"occupancy_grid", a.spec.occupancy_resolution.nx},
                  {"occupancy_threshold", a.spec.occupancy_threshold},
                  {"pretrain_iters", c.iters_pretrain},
                  {"joint_iters", c.iters_joint},
                  {"lr_field", c.lr_field},
                  {"lr_renderer", c.lr_renderer},
                  {"lr_decay", c.lr_decay},
                  {"beta1", c.beta1},
                  {"beta2", c.beta2},
                  {"adam_eps", c.adam_eps},
                  {"patch", c.patch},
                  {"rays_per_batch", c.rays_per_batch},
                  {"occupancy_interval", c.occupancy_interval},
                  {"seq_max_rotation_deg", c.seq_max_rotation_deg},
                  {"seq_max_translation", c.seq_max_translation},
                  {"distill", c.distill_count},
                  {"joint_guidance", c.joint_guidance},
                  {"random_background", c.random_background},
                  {"pipeline", pipeline_json(model.pipeline)},
                  {"train_field_psnr", train_psnr},
                  {"seconds", secs}},
                 c.seed, started);
  std::cout << "checkpoint " << ckpt.string() << " (train field PSNR " << train_psnr << " dB, "
            << secs << " s)\n";
  return 0;
}

struct RenderArgs {
  std::string ckpt;
  std::string path;
  std::string out;
  std::string stats;
  bool no_guidance = false;
  bool no_nn = false;
  double epsilon = -1.0;
};

int cmd_render_path(const RenderArgs& a, const std::string& started) {
  const SceneModel model = load_model(a.ckpt);
  const auto poses = load_trajectory(a.path);
  if (poses.empty()) throw std::runtime_error("trajectory " + a.path + " is empty");
  PipelineConfig cfg = model.pipeline;
  cfg.use_guidance = !a.no_guidance;
  cfg.use_neural_renderer = !a.no_nn;
  if (a.epsilon >= 0.0) cfg.epsilon = a.epsilon;
  const fs::path out(a.out);
  ensure_dir(out);
  RenderBuffer buffer(cfg.buffer_len);
  json stats = json::array();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const FrameOutput f =
        render_next(model.field, model.occupancy, model.renderer, buffer, poses[i], model.camera, cfg);
    write_png(out / frame_name(i), f.image);
    stats.push_back(stats_json(i, f.stats));
  }
  const fs::path stats_path = a.stats.empty() ? out / "stats.json" : fs::path(a.stats);
  write_json(stats_path, stats);
  write_manifest(out / "manifest.json", "render-path",
                 {{"checkpoint", a.ckpt}, {"path", a.path}, {"frames", poses.size()},
                  {"stats", stats_path.string()}, {"pipeline", pipeline_json(cfg)}},
                 0, started);
  std::cout << "rendered " << poses.size() << " frames to " << out << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string pred;
  std::string data;
  std::string traj;
  std::string out;
  bool no_guidance = false;
  bool no_nn = false;
};

int cmd_eval(const EvalArgs& a, const std::string& started) {
  const Dataset gt = load_posed_image_dataset(a.data);
  std::vector<ImageRGB> pred;
  if (!a.pred.empty()) {
    for (std::size_t i = 0;; ++i) {
      const fs::path p = fs::path(a.pred) / frame_name(i);
      if (!fs::exists(p)) break;
      pred.push_back(read_png(p));
    }
  } else {
    if (a.ckpt.empty() || a.traj.empty())
      throw CLI::ValidationError("eval", "needs --pred DIR or both --ckpt and --traj");
    const SceneModel model = load_model(a.ckpt);
    const auto poses = load_trajectory(a.traj);
    PipelineConfig cfg = model.pipeline;
    cfg.use_guidance = !a.no_guidance;
    cfg.use_neural_renderer = !a.no_nn;
    for (FrameOutput& f : render_sequence(model, poses, cfg)) pred.push_back(std::move(f.image));
  }
  if (pred.size() != gt.size())
    throw std::runtime_error("frame count mismatch: " + std::to_string(pred.size()) +
                             " rendered, " + std::to_string(gt.size()) + " ground-truth images");
  json frames = json::array();
  double sp = 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    // Compare in 8-bit space so renders and PNG round trips agree.
    ImageRGB q = pred[i];
    for (double& v : q.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    if (!q.same_shape(gt.items[i].image))
      throw std::runtime_error("frame " + std::to_string(i) + " size differs from the ground truth");
    const double p = psnr(q, gt.items[i].image);
    const double s = ssim(q, gt.items[i].image);
    frames.push_back({{"frame", i}, {"psnr", p}, {"ssim", s}});
    sp += p;
    ss += s;
  }
  const double n = static_cast<double>(pred.size());
  const json report = {{"frames", frames}, {"mean", {{"psnr", sp / n}, {"ssim", ss / n}}}};
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_json(out, report);
  write_manifest(fs::path(a.out + ".manifest.json"), "eval",
                 {{"checkpoint", a.ckpt}, {"pred", a.pred}, {"data", a.data}, {"traj", a.traj},
                  {"use_guidance", !a.no_guidance}, {"use_nn", !a.no_nn}},
                 0, started);
  std::cout << "mean PSNR " << sp / n << " dB, mean SSIM " << ss / n << "\n";
  return 0;
}

struct BenchArgs {
  std::string ckpt;
  std::string traj;
  std::string out;
};

int cmd_bench(const BenchArgs& a, const std::string& started) {
  const SceneModel model = load_model(a.ckpt);
  const auto poses = load_trajectory(a.traj);
  if (poses.empty()) throw std::runtime_error("trajectory " + a.traj + " is empty");
  PipelineConfig guided = model.pipeline;
  guided.use_guidance = true;
  PipelineConfig unguided = guided;
  unguided.use_guidance = false;

  auto summarize = [](const std::vector<FrameOutput>& frames) {
    json s = {{"ms_volume", 0.0}, {"ms_warp", 0.0}, {"ms_nn", 0.0}, {"ms_total", 0.0},
              {"samples_per_ray", 0.0}, {"samples_per_ray_warm", 0.0}};
    double warm = 0.0;
    int warm_n = 0;
    for (const FrameOutput& f : frames) {
      s["ms_volume"] = s["ms_volume"].get<double>() + f.stats.ms_volume;
      s["ms_warp"] = s["ms_warp"].get<double>() + f.stats.ms_warp;
      s["ms_nn"] = s["ms_nn"].get<double>() + f.stats.ms_neural;
      s["ms_total"] = s["ms_total"].get<double>() + f.stats.ms_total;
      s["samples_per_ray"] = s["samples_per_ray"].get<double>() + f.stats.samples_per_ray_mean;
      if (f.stats.buffer_len > 0) {
        warm += f.stats.samples_per_ray_mean;
        ++warm_n;
      }
    }
    const double n = static_cast<double>(frames.size());
    for (const char* k : {"ms_volume", "ms_warp", "ms_nn", "ms_total", "samples_per_ray"})
      s[k] = s[k].get<double>() / n;
    s["samples_per_ray_warm"] = warm_n ? warm / warm_n : s["samples_per_ray"].get<double>();
    s["cold_guided_fraction"] = frames.front().stats.guided_pixel_fraction;
    return s;
  };
  const json g = summarize(render_sequence(model, poses, guided));
  const json u = summarize(render_sequence(model, poses, unguided));
  const json report = {{"frames", poses.size()}, {"guided", g}, {"unguided", u}};

  std::printf("frames            %zu\n", poses.size());
  std::printf("                  %10s %10s\n", "guided", "unguided");
  for (const char* k : {"ms_volume", "ms_warp", "ms_nn", "ms_total", "samples_per_ray",
                        "samples_per_ray_warm"})
    std::printf("%-18s%10.3f %10.3f\n", k, g[k].get<double>(), u[k].get<double>());
  if (!a.out.empty()) {
    write_json(a.out, report);
    write_manifest(fs::path(a.out + ".manifest.json"), "bench",
                   {{"checkpoint", a.ckpt}, {"traj", a.traj}, {"pipeline", pipeline_json(guided)}}, 0,
                   started);
  }
  return 0;
}

struct ServeArgs {
  std::string ckpt;
  std::string bind = "127.0.0.1:8080";
  int max_res = 512;
  std::string assets;
};

Server* g_server = nullptr;

int cmd_serve(const ServeArgs& a) {
  const SceneModel model = load_model(a.ckpt);
  ServerOptions opt;
  const auto colon = a.bind.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--bind", "expected HOST:PORT");
  opt.bind_address = a.bind.substr(0, colon);
  opt.port = static_cast<std::uint16_t>(std::stoi(a.bind.substr(colon + 1)));
  opt.max_res = a.max_res;
  opt.assets_dir = a.assets;
  Server server(model, opt);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "serving on ws://" << opt.bind_address << ":" << server.port() << "/render"
            << std::endl;
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Voxel feature field renderer with buffer-guided sampling and a neural upsampler"};
  app.set_version_flag("--version", std::string(version_string()));
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Cap on worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  const std::vector<std::string> presets = AnalyticScene::preset_names();

  GenSceneArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-scene", "Render a procedural scene into a posed image dataset");
  gen_cmd->add_option("--preset", gen.preset, "Scene preset")->check(CLI::IsMember(presets))->capture_default_str();
  gen_cmd->add_option("--views", gen.views, "Number of orbit views")->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--fov", gen.fov, "Vertical field of view, degrees")->check(CLI::Range(1.0, 170.0))->capture_default_str();
  gen_cmd->add_option("--radius", gen.radius, "Orbit radius")->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--fine-step", gen.fine_step, "Oracle march step")->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--path-frames", gen.path_frames, "Also write a smooth N-frame orbit to OUT/path")
      ->check(CLI::NonNegativeNumber)->capture_default_str();

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Pretrain the field and train field + renderer jointly");
  tr_cmd->add_option("--data", tr.data, "Dataset directory with transforms.json")->required();
  tr_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  tr_cmd->add_option("--log", tr.log, "Line-delimited JSON log (default: CKPT.log.jsonl)");
  tr_cmd->add_option("--pretrain-iters", tr.cfg.iters_pretrain)->check(CLI::NonNegativeNumber)->capture_default_str();
  tr_cmd->add_option("--joint-iters", tr.cfg.iters_joint)->check(CLI::NonNegativeNumber)->capture_default_str();
  tr_cmd->add_option("--k", tr.pipeline.channels, "Feature channels")->check(CLI::Range(3, 64))->capture_default_str();
  tr_cmd->add_option("--l", tr.pipeline.buffer_len, "Preceding frames")->check(CLI::Range(0, 8))->capture_default_str();
  tr_cmd->add_option("--scale", tr.pipeline.scale, "Low-res downsample factor")->check(CLI::Range(1, 16))->capture_default_str();
  tr_cmd->add_option("--epsilon", tr.pipeline.epsilon, "Guidance half-width (default 5% of the depth range)");
  tr_cmd->add_option("--distill", tr.cfg.distill_count, "Pseudo views to synthesize")->check(CLI::NonNegativeNumber)->capture_default_str();
  tr_cmd->add_option("--seed", tr.cfg.seed)->capture_default_str();
  tr_cmd->add_option("--grid", tr.grid, "Voxel grid side")->check(CLI::Range(2, 512))->capture_default_str();
  tr_cmd->add_option("--patch", tr.cfg.patch, "Joint training patch side")->capture_default_str();
  tr_cmd->add_option("--rays", tr.cfg.rays_per_batch, "Pretraining rays per batch")->check(CLI::PositiveNumber)->capture_default_str();
  tr_cmd->add_option("--lr-field", tr.cfg.lr_field)->capture_default_str();
  tr_cmd->add_option("--lr-renderer", tr.cfg.lr_renderer)->capture_default_str();
  tr_cmd->add_option("--lr-decay", tr.cfg.lr_decay, "Final learning rate as a fraction of the initial one")
      ->check(CLI::Range(1e-6, 1.0))
      ->capture_default_str();
  bool no_joint_guidance = false;
  tr_cmd->add_flag("--no-joint-guidance", no_joint_guidance, "Full-range sampling during joint training");
  tr_cmd->add_flag("--random-background", tr.cfg.random_background,
                   "Composite RGBA targets over a random color per ray during pretraining");

  RenderArgs rp;
  auto* rp_cmd = app.add_subcommand("render-path", "Render a camera trajectory through one pipeline");
  rp_cmd->add_option("--ckpt", rp.ckpt)->required();
  rp_cmd->add_option("--path", rp.path, "JSON list of 4x4 camera-to-world matrices")->required();
  rp_cmd->add_option("--out", rp.out, "Output directory")->required();
  rp_cmd->add_option("--stats", rp.stats, "Per-frame stats JSON (default: OUT/stats.json)");
  rp_cmd->add_option("--epsilon", rp.epsilon, "Override the guidance half-width");
  rp_cmd->add_flag("--no-guidance", rp.no_guidance);
  rp_cmd->add_flag("--no-nn", rp.no_nn);

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "PSNR/SSIM of rendered frames against ground truth");
  ev_cmd->add_option("--ckpt", ev.ckpt);
  ev_cmd->add_option("--pred", ev.pred, "Directory of frame_%05d.png to score instead of rendering");
  ev_cmd->add_option("--data", ev.data, "Ground-truth dataset directory, frames in trajectory order")->required();
  ev_cmd->add_option("--traj", ev.traj);
  ev_cmd->add_option("--out", ev.out, "Report JSON")->required();
  ev_cmd->add_flag("--no-guidance", ev.no_guidance);
  ev_cmd->add_flag("--no-nn", ev.no_nn);

  BenchArgs bn;
  auto* bn_cmd = app.add_subcommand("bench", "Phase timings and samples per ray with and without guidance");
  bn_cmd->add_option("--ckpt", bn.ckpt)->required();
  bn_cmd->add_option("--traj", bn.traj)->required();
  bn_cmd->add_option("--out", bn.out, "Optional JSON report");

  ServeArgs sv;
  auto* sv_cmd = app.add_subcommand("serve", "Stream frames over WebSocket");
  sv_cmd->add_option("--ckpt", sv.ckpt)->required();
  sv_cmd->add_option("--bind", sv.bind, "HOST:PORT")->capture_default_str();
  sv_cmd->add_option("--max-res", sv.max_res)->check(CLI::Range(4, 4096))->capture_default_str();
  sv_cmd->add_option("--assets", sv.assets, "Static files served on GET");

  const std::string started = utc_now();
  try {
    app.parse(argc, argv);
    if (threads > 0) omp_set_num_threads(threads);
    if (*gen_cmd) return cmd_gen_scene(gen, started);
    if (*tr_cmd) {
      tr.cfg.joint_guidance = !no_joint_guidance;
      tr.cfg.validate(tr.pipeline.scale);
      return cmd_train(tr, started);
    }
    if (*rp_cmd) return cmd_render_path(rp, started);
    if (*ev_cmd) return cmd_eval(ev, started);
    if (*bn_cmd) return cmd_bench(bn, started);
    if (*sv_cmd) return cmd_serve(sv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace trajfield
