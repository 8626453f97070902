// kinesplat command-line front end.

#include "kinesplat/alignment.hpp"
#include "kinesplat/errors.hpp"
#include "kinesplat/evaluator.hpp"
#include "kinesplat/gaussian_edit.hpp"
#include "kinesplat/image.hpp"
#include "kinesplat/metrics.hpp"
#include "kinesplat/rasterizer.hpp"
#include "kinesplat/splat_store.hpp"
#include "kinesplat/synthesizer.hpp"

#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace fs = std::filesystem;
using namespace kinesplat;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runs an input-loading step; any failure is a configuration error.
template <typename F>
auto load(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw ConfigFailure(what + ": " + e.what());
  }
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ConfigFailure("no such file: '" + path + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, text);
}

Eigen::Vector3f parse_background(const std::vector<float>& values) {
  if (values.empty()) return Eigen::Vector3f::Zero();
  if (values.size() != 3) throw ConfigFailure("--background takes exactly 3 values");
  return {values[0], values[1], values[2]};
}

struct RenderArgs {
  std::string scene, camera, output, depth;
  std::vector<float> background;
};

void cmd_render(const RenderArgs& a) {
  require_file(a.scene);
  require_file(a.camera);
  const GaussianScene scene = load("scene", [&] { return load_splat_file(a.scene); });
  const CameraModel camera = load("camera", [&] { return load_camera_file(a.camera); });
  RenderOptions options;
  options.background = parse_background(a.background);

  spdlog::info("rendering {} Gaussians at {}x{}", scene.size(), camera.width, camera.height);
  const RenderOutput out = render(scene, camera, options);
  if (fs::path(a.output).has_parent_path()) fs::create_directories(fs::path(a.output).parent_path());
  write_png(out.rgb, a.output);
  if (!a.depth.empty()) write_pfm(out.depth, a.depth);
  spdlog::info("wrote {}", a.output);
}

struct ReplayArgs {
  std::string job, output_dir;
};

void cmd_replay(const ReplayArgs& a) {
  require_file(a.job);
  SynthesisJob job = load("job", [&] { return load_synthesis_job(a.job); });
  if (!a.output_dir.empty()) job.output_dir = fs::absolute(a.output_dir);
  load("job", [&] {
    validate_job(job);
    return 0;
  });
  const DatasetManifest manifest = replay(job);
  spdlog::info("wrote {} records to {}", manifest.records.size(), job.output_dir.string());
  std::cout << manifest.manifest_hash << "\n";
}

struct ComposeArgs {
  std::string script, input, output;
};

void cmd_compose(const ComposeArgs& a) {
  require_file(a.script);
  std::map<std::string, GaussianScene> preloaded;
  if (!a.input.empty()) {
    require_file(a.input);
    preloaded["main"] = load("input", [&] { return load_splat_file(a.input); });
  }
  const std::string text = load("script", [&] { return read_file_bytes(a.script); });
  const fs::path base_dir = fs::absolute(a.script).parent_path();
  CompositionResult result = load("script", [&] { return run_composition(text, base_dir, preloaded); });
  if (!a.output.empty()) {
    const auto it = result.scenes.find("main");
    if (it == result.scenes.end()) throw ConfigFailure("--output needs a scene named 'main'");
    save_splat_file(it->second, a.output);
    spdlog::info("wrote {} Gaussians to {}", it->second.size(), a.output);
  }
  for (const auto& [path, name] : result.saves) spdlog::info("saved '{}' to {}", name, path.string());
}

struct AlignArgs {
  std::string observations, weights, gs_mask, sim_mask, report;
  int max_shift = 20;
};

void cmd_align(const AlignArgs& a) {
  nlohmann::json report;
  const bool pairs = !a.observations.empty();
  const bool masks = !a.gs_mask.empty() || !a.sim_mask.empty();
  if (pairs == masks) throw ConfigFailure("give either --observations or both --gs-mask and --sim-mask");
  if (pairs) {
    require_file(a.observations);
    if (!a.weights.empty() && a.weights != "uniform" && a.weights != "distal") {
      throw ConfigFailure("--weights must be 'uniform' or 'distal'");
    }
    auto obs = load("observations", [&] { return parse_observations(read_file_bytes(a.observations)); });
    if (obs.empty()) throw ConfigFailure("observations: no records");
    if (!a.weights.empty()) {
      std::size_t joints = 0;
      for (const auto& o : obs) joints = std::max(joints, static_cast<std::size_t>(o.joint_index) + 1);
      const auto w = a.weights == "uniform" ? uniform_weights(joints) : distal_weights(joints);
      for (auto& o : obs) o.weight = w[static_cast<std::size_t>(o.joint_index)];
    }
    const FrameEstimate estimate = estimate_frame_transform(obs);
    for (const auto& warning : estimate.warnings) spdlog::warn("{}", warning);
    report = nlohmann::json::parse(frame_estimate_to_json(estimate));
  } else {
    require_file(a.gs_mask);
    require_file(a.sim_mask);
    if (a.max_shift < 0) throw ConfigFailure("--max-shift must be non-negative");
    const Mask gs = load("gs mask", [&] { return read_mask_png(a.gs_mask); });
    const Mask sim = load("sim mask", [&] { return read_mask_png(a.sim_mask); });
    LayoutConfig config;
    config.max_shift = a.max_shift;
    const LayoutShift shift = layout_shift(gs, sim, config);
    report = {{"dx", shift.dx}, {"dy", shift.dy}, {"iou", shift.iou}};
  }
  const std::string text = report.dump(2) + "\n";
  if (a.report.empty()) std::cout << text;
  else write_text(a.report, text);
}

struct LocalizeArgs {
  std::string scene, camera, observed, output;
  int budget = 200;
  int levels = 3;
};

void cmd_localize(const LocalizeArgs& a) {
  for (const auto& f : {a.scene, a.camera, a.observed}) require_file(f);
  if (a.budget < 1 || a.levels < 1) throw ConfigFailure("--budget and --levels must be positive");
  const GaussianScene scene = load("scene", [&] { return load_splat_file(a.scene); });
  const CameraModel camera = load("camera", [&] { return load_camera_file(a.camera); });
  const Image observed = load("observed image", [&] { return read_png(a.observed); });
  if (observed.width != camera.width || observed.height != camera.height) {
    throw ConfigFailure("observed image size does not match the camera resolution");
  }
  LocalizeOptions options;
  options.budget = a.budget;
  options.pyramid_levels = a.levels;
  const LocalizeResult result = localize_camera(scene, observed, camera, options);
  spdlog::info("residual {:.6f} -> {:.6f} after {} iterations", result.initial_residual, result.residual,
               result.iterations);
  CameraModel refined = camera;
  refined.pose = result.pose;
  nlohmann::json report = nlohmann::json::parse(camera_to_json_text(refined));
  report["initial_residual"] = result.initial_residual;
  report["residual"] = result.residual;
  report["iterations"] = result.iterations;
  report["converged"] = result.converged;
  const std::string text = report.dump(2) + "\n";
  if (a.output.empty()) std::cout << text;
  else write_text(a.output, text);
}

struct ServeArgs {
  std::string config, address = "127.0.0.1", transcripts = "transcripts";
  int port = 0;
  int max_sessions = 0;
};

EvaluatorServer* g_server = nullptr;

void cmd_serve(const ServeArgs& a) {
  require_file(a.config);
  if (a.port < 0 || a.port > 65535) throw ConfigFailure("--port out of range");
  EpisodeConfig config = load("config", [&] { return load_episode_config(a.config); });
  ServerOptions options;
  options.address = a.address;
  options.port = static_cast<std::uint16_t>(a.port);
  options.max_sessions = a.max_sessions;
  options.transcript_dir = a.transcripts;
  EvaluatorServer server(std::move(config), options);
  const auto port = load("bind", [&] { return server.bind(); });
  std::cout << port << std::endl;
  spdlog::info("serving on {}:{}", a.address, port);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  server.run();
  g_server = nullptr;
}

struct MetricsArgs {
  std::string a, b, diff_dir, json;
};

void cmd_metrics(const MetricsArgs& m) {
  const bool dirs = fs::is_directory(m.a) && fs::is_directory(m.b);
  if (!dirs) {
    require_file(m.a);
    require_file(m.b);
  }
  MetricReport report;
  if (dirs) {
    std::optional<fs::path> diff;
    if (!m.diff_dir.empty()) diff = m.diff_dir;
    report = compare_sequence(m.a, m.b, diff);
  } else {
    const Image a = load("image a", [&] { return read_png(m.a); });
    const Image b = load("image b", [&] { return read_png(m.b); });
    if (!a.same_shape(b)) throw ConfigFailure("images differ in size");
    report = compare(a, b);
    report.frames.front().name = fs::path(m.a).filename().string();
  }
  std::cout << report_to_table(report);
  if (!m.json.empty()) write_text(m.json, report_to_json(report) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kinematic Gaussian-splat scene engine"};
  app.require_subcommand(1);

  int threads = 0;
  unsigned seed = 0;
  std::string log_level = "info";
  app.add_option("--threads", threads, "Worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "Seed; every subcommand is deterministic, accepted for scripting");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  std::function<void()> action;

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "Render one frame of a splat scene");
  render_cmd->add_option("--scene", render_args.scene, "Splat PLY file")->required();
  render_cmd->add_option("--camera", render_args.camera, "Camera JSON (intrinsics + pose)")->required();
  render_cmd->add_option("--output,-o", render_args.output, "Output PNG")->required();
  render_cmd->add_option("--depth", render_args.depth, "Optional depth PFM");
  render_cmd->add_option("--background", render_args.background, "Background RGB in [0,1]")->expected(3);
  render_cmd->callback([&] { action = [&] { cmd_render(render_args); }; });

  ReplayArgs replay_args;
  auto* replay_cmd = app.add_subcommand("replay", "Replay a trajectory job into an image dataset");
  replay_cmd->add_option("--job", replay_args.job, "Synthesis job JSON")->required();
  replay_cmd->add_option("--output-dir", replay_args.output_dir, "Override the job's output directory");
  replay_cmd->callback([&] { action = [&] { cmd_replay(replay_args); }; });

  ComposeArgs compose_args;
  auto* compose_cmd = app.add_subcommand("compose", "Run a scene composition script");
  compose_cmd->add_option("--script", compose_args.script, "Composition script JSON")->required();
  compose_cmd->add_option("--input", compose_args.input, "Scene preloaded under the name 'main'");
  compose_cmd->add_option("--output", compose_args.output, "Where to save the scene named 'main'");
  compose_cmd->callback([&] { action = [&] { cmd_compose(compose_args); }; });

  AlignArgs align_args;
  auto* align_cmd = app.add_subcommand("align", "Estimate the sim-to-splat frame or a layout shift");
  align_cmd->add_option("--observations", align_args.observations, "Per-joint transform pairs JSON");
  align_cmd->add_option("--weights", align_args.weights, "Override per-record weights: uniform or distal");
  align_cmd->add_option("--gs-mask", align_args.gs_mask, "Top-down mask rendered from the splat scene");
  align_cmd->add_option("--sim-mask", align_args.sim_mask, "Top-down mask from the simulator");
  align_cmd->add_option("--max-shift", align_args.max_shift, "Search radius in pixels (default 20)");
  align_cmd->add_option("--report", align_args.report, "Write the JSON report here instead of stdout");
  align_cmd->callback([&] { action = [&] { cmd_align(align_args); }; });

  LocalizeArgs localize_args;
  auto* localize_cmd = app.add_subcommand("localize", "Refine a camera pose against an observed image");
  localize_cmd->add_option("--scene", localize_args.scene, "Splat PLY file")->required();
  localize_cmd->add_option("--camera", localize_args.camera, "Initial camera JSON")->required();
  localize_cmd->add_option("--observed", localize_args.observed, "Observed PNG")->required();
  localize_cmd->add_option("--budget", localize_args.budget, "Iteration budget (default 200)");
  localize_cmd->add_option("--levels", localize_args.levels, "Pyramid levels (default 3)");
  localize_cmd->add_option("--output,-o", localize_args.output, "Refined camera JSON (default stdout)");
  localize_cmd->callback([&] { action = [&] { cmd_localize(localize_args); }; });

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Run the closed-loop evaluation server");
  serve_cmd->add_option("--config", serve_args.config, "Episode config JSON")->required();
  serve_cmd->add_option("--address", serve_args.address, "Listen address (default 127.0.0.1)");
  serve_cmd->add_option("--port", serve_args.port, "Listen port, 0 for ephemeral (printed on stdout)");
  serve_cmd->add_option("--transcripts", serve_args.transcripts, "Transcript directory");
  serve_cmd->add_option("--max-sessions", serve_args.max_sessions, "Exit after this many episodes (0 = never)");
  serve_cmd->callback([&] { action = [&] { cmd_serve(serve_args); }; });

  MetricsArgs metrics_args;
  auto* metrics_cmd = app.add_subcommand("metrics", "Compare two images or two frame directories");
  metrics_cmd->add_option("a", metrics_args.a, "Image or directory")->required();
  metrics_cmd->add_option("b", metrics_args.b, "Image or directory")->required();
  metrics_cmd->add_option("--diff-dir", metrics_args.diff_dir, "Write |a-b| images here (directories only)");
  metrics_cmd->add_option("--json", metrics_args.json, "Write the JSON report here");
  metrics_cmd->callback([&] { action = [&] { cmd_metrics(metrics_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  auto logger = spdlog::stderr_color_mt("kinesplat");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));
  if (threads > 0) omp_set_num_threads(threads);
  spdlog::debug("seed {}", seed);

  try {
    action();
  } catch (const ConfigFailure& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return 0;
}
