#include "kinesplat/synthesizer.hpp"

#include "kinesplat/alignment.hpp"
#include "kinesplat/errors.hpp"
#include "kinesplat/image.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kinesplat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<double> row_major_vec(const SimilarityTransform& t) {
  const auto a = t.to_row_major();
  return {a.begin(), a.end()};
}

SimilarityTransform transform_json(const json& j, const std::string& where) {
  try {
    return SimilarityTransform::from_row_major(j.get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : fs::absolute(base_dir / path).lexically_normal();
}

CameraModel camera_json(const json& j) { return camera_from_json_text(j.dump()); }

json camera_to_json(const CameraModel& cam) { return json::parse(camera_to_json_text(cam)); }

std::string frame_name(std::size_t frame, std::size_t camera, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%06zu_cam%zu.%s", frame, camera, ext);
  return buf;
}

}  // namespace

Trajectory parse_trajectory(std::string_view jsonl) {
  Trajectory traj;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "trajectory line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    TrajectoryFrame frame;
    try {
      frame.timestamp = j.at("timestamp").get<double>();
      frame.joints.angles = j.at("joints").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (j.contains("objects")) {
      for (const auto& [id, pose] : j["objects"].items()) {
        frame.object_poses[id] = transform_json(pose, where + " object '" + id + "'");
      }
    }
    if (!traj.frames.empty()) {
      if (!(frame.timestamp > traj.frames.back().timestamp)) {
        throw ParseError(where + ": timestamps must be strictly increasing");
      }
      if (frame.joints.size() != traj.frames.front().joints.size()) {
        throw ParseError(where + ": joint vector length changes");
      }
    }
    traj.frames.push_back(std::move(frame));
  }
  return traj;
}

Trajectory load_trajectory_file(const fs::path& path) {
  return parse_trajectory(read_file_bytes(path));
}

std::string trajectory_to_jsonl(const Trajectory& trajectory) {
  std::string out;
  for (const auto& f : trajectory.frames) {
    json j = {{"timestamp", f.timestamp}, {"joints", f.joints.angles}};
    json objects = json::object();
    for (const auto& [id, pose] : f.object_poses) objects[id] = row_major_vec(pose);
    if (!f.object_poses.empty()) j["objects"] = objects;
    out += j.dump() + "\n";
  }
  return out;
}

SimilarityTransform look_at_pose(const Vec3& position, const Vec3& target) {
  const Vec3 forward = target - position;
  if (!(forward.norm() > 0.0)) throw DimensionError("look-at target coincides with the camera");
  const Vec3 z = forward.normalized();
  Vec3 up(0.0, 0.0, 1.0);
  if (z.cross(up).norm() < 1e-9) up = Vec3(0.0, 1.0, 0.0);
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return SimilarityTransform::from_linear(r, position);
}

std::vector<CameraModel> novel_view_sweep(const CameraModel& intrinsics, const OrbitSpec& orbit) {
  if (!(orbit.radius > 0.0) || !std::isfinite(orbit.radius)) {
    throw DimensionError("orbit radius must be positive");
  }
  if (orbit.count < 1) throw DimensionError("orbit needs at least one camera");
  std::vector<CameraModel> cams;
  for (int i = 0; i < orbit.count; ++i) {
    const double azimuth = 2.0 * std::numbers::pi * i / orbit.count;
    const Vec3 offset(std::cos(orbit.elevation) * std::cos(azimuth),
                      std::cos(orbit.elevation) * std::sin(azimuth), std::sin(orbit.elevation));
    CameraModel cam = intrinsics;
    cam.pose = look_at_pose(orbit.center + orbit.radius * offset, orbit.center);
    cams.push_back(cam);
  }
  return cams;
}

SynthesisJob parse_synthesis_job(std::string_view json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("job config: ") + e.what());
  }
  SynthesisJob job;
  try {
    job.base_scene = resolve(base_dir, j.at("base_scene").get<std::string>());
    job.chain = resolve(base_dir, j.at("chain").get<std::string>());
    job.labels = resolve(base_dir, j.at("labels").get<std::string>());
    job.trajectory = resolve(base_dir, j.at("trajectory").get<std::string>());
    job.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    for (const auto& c : j.value("cameras", json::array())) job.cameras.push_back(camera_json(c));
    if (j.contains("orbit")) {
      const json& o = j["orbit"];
      OrbitSpec orbit;
      const auto center = o.value("center", std::vector<double>{0.0, 0.0, 0.0});
      if (center.size() != 3) throw ParseError("job config: orbit center needs 3 values");
      orbit.center = Vec3(center[0], center[1], center[2]);
      orbit.radius = o.at("radius").get<double>();
      orbit.elevation = o.value("elevation_deg", 0.0) * std::numbers::pi / 180.0;
      orbit.count = o.value("count", 1);
      CameraModel intr = camera_json(o.at("intrinsics"));
      for (auto& cam : novel_view_sweep(intr, orbit)) job.cameras.push_back(cam);
    }
    const json object_specs = j.value("objects", json::object());
    for (const auto& [id, obj] : object_specs.items()) {
      ObjectSource src;
      src.scene = resolve(base_dir, obj.at("scene").get<std::string>());
      const auto anchor = obj.value("anchor", std::vector<double>{0.0, 0.0, 0.0});
      if (anchor.size() != 3) throw ParseError("job config: object '" + id + "' anchor needs 3 values");
      src.anchor.center = Vec3(anchor[0], anchor[1], anchor[2]);
      job.objects[id] = src;
    }
    if (j.contains("scene_swap")) {
      SceneSwap swap;
      swap.scene = resolve(base_dir, j["scene_swap"].at("scene").get<std::string>());
      if (j["scene_swap"].contains("transform")) {
        swap.transform = transform_json(j["scene_swap"]["transform"], "job config scene_swap");
      }
      job.scene_swap = swap;
    }
    if (j.contains("gs_from_sim")) job.gs_from_sim = transform_json(j["gs_from_sim"], "job config gs_from_sim");
    if (j.contains("canonical")) job.canonical = JointState{j["canonical"].get<std::vector<double>>()};
    if (j.contains("background")) {
      const auto bg = j["background"].get<std::vector<float>>();
      if (bg.size() != 3) throw ParseError("job config: background needs 3 values");
      job.background = Eigen::Vector3f(bg[0], bg[1], bg[2]);
    }
    job.write_depth = j.value("write_depth", true);
  } catch (const json::exception& e) {
    throw ParseError(std::string("job config: ") + e.what());
  }
  if (job.cameras.empty()) throw JobError("job config defines no cameras");
  return job;
}

SynthesisJob load_synthesis_job(const fs::path& path) {
  return parse_synthesis_job(read_file_bytes(path), fs::absolute(path).parent_path());
}

std::string synthesis_job_to_json(const SynthesisJob& job) {
  json cams = json::array();
  for (const auto& c : job.cameras) cams.push_back(camera_to_json(c));
  json objects = json::object();
  for (const auto& [id, src] : job.objects) {
    objects[id] = {{"scene", src.scene.string()},
                   {"anchor", {src.anchor.center.x(), src.anchor.center.y(), src.anchor.center.z()}}};
  }
  json j = {{"base_scene", job.base_scene.string()},
            {"chain", job.chain.string()},
            {"labels", job.labels.string()},
            {"trajectory", job.trajectory.string()},
            {"output_dir", job.output_dir.string()},
            {"cameras", cams},
            {"objects", objects},
            {"gs_from_sim", row_major_vec(job.gs_from_sim)},
            {"background", {job.background.x(), job.background.y(), job.background.z()}},
            {"write_depth", job.write_depth}};
  if (job.canonical) j["canonical"] = job.canonical->angles;
  if (job.scene_swap) {
    j["scene_swap"] = {{"scene", job.scene_swap->scene.string()},
                       {"transform", row_major_vec(job.scene_swap->transform)}};
  }
  return j.dump(2);
}

void validate_job(const SynthesisJob& job) {
  std::vector<std::string> missing;
  auto check = [&](const fs::path& p) {
    if (!fs::is_regular_file(p)) missing.push_back(p.string());
  };
  check(job.base_scene);
  check(job.chain);
  check(job.labels);
  check(job.trajectory);
  for (const auto& [id, src] : job.objects) check(src.scene);
  if (job.scene_swap) check(job.scene_swap->scene);
  if (!missing.empty()) {
    std::string msg = "synthesis job references missing files:";
    for (const auto& m : missing) msg += " " + m;
    throw JobError(msg);
  }
  if (job.cameras.empty()) throw JobError("synthesis job has no cameras");
  for (const auto& c : job.cameras) c.validate();
}

GaussianScene FrameComposer::compose(
    const JointState& joints, const std::map<std::string, SimilarityTransform>& object_poses) const {
  GaussianScene scene = drive_scene(base, chain, canonical, joints);
  if (scene_swap) {
    GaussianScene arm = scene;
    std::erase_if(arm.gaussians, [](const Gaussian& g) { return g.joint_label.value_or(0) == 0; });
    MergeOptions opts;
    opts.pad_sh = true;
    scene = merge_scenes(arm, scene_swap->first, scene_swap->second, opts);
  }
  for (const auto& [id, pose_sim] : object_poses) {
    const auto it = objects.find(id);
    if (it == objects.end()) throw JobError("trajectory references unknown object '" + id + "'");
    const auto& [object, anchor] = it->second;
    const SimilarityTransform pose = express_object(pose_sim, gs_from_sim);
    GaussianScene placed;
    if (pose.is_rigid(1e-9)) {
      placed = transform_object(object, anchor, pose.linear(), pose.translation() - anchor.center);
    } else {
      placed = transform_scene(object, pose * SimilarityTransform::from_translation(-anchor.center));
    }
    MergeOptions opts;
    opts.pad_sh = true;
    scene = merge_scenes(scene, placed, SimilarityTransform::identity(), opts);
  }
  return scene;
}

FrameComposer make_composer(const SynthesisJob& job) {
  FrameComposer composer;
  composer.chain = load_chain_file(job.chain);
  composer.base = bind_labels(load_splat_file(job.base_scene), load_label_file(job.labels), composer.chain);
  composer.canonical = job.canonical.value_or(JointState::zeros(composer.chain.joint_count()));
  if (composer.canonical.size() != composer.chain.joint_count()) {
    throw JobError("canonical joint state length does not match the chain");
  }
  for (const auto& [id, src] : job.objects) {
    composer.objects[id] = {load_splat_file(src.scene), src.anchor};
  }
  if (job.scene_swap) {
    composer.scene_swap = std::make_pair(load_splat_file(job.scene_swap->scene), job.scene_swap->transform);
  }
  composer.gs_from_sim = job.gs_from_sim;
  return composer;
}

namespace {

json record_to_json(const ManifestRecord& r, const DatasetManifest& m) {
  json poses = json::object();
  for (const auto& [id, pose] : r.object_poses) poses[id] = row_major_vec(pose);
  json violations = json::array();
  for (const auto& v : r.limit_violations) {
    violations.push_back({{"joint", v.joint}, {"value", v.value}, {"min", v.limits.min}, {"max", v.limits.max}});
  }
  json j = {{"frame", r.frame},
            {"timestamp", r.timestamp},
            {"camera", r.camera},
            {"image", r.image},
            {"joint_state", r.joints.angles},
            {"object_poses", poses},
            {"flagged", !r.limit_violations.empty()},
            {"limit_violations", violations},
            {"config_hash", m.config_hash},
            {"engine_version", m.engine_version}};
  j["depth"] = r.depth.empty() ? json(nullptr) : json(r.depth);
  return j;
}

}  // namespace

DatasetManifest replay(const SynthesisJob& job) {
  validate_job(job);
  const FrameComposer composer = make_composer(job);
  const Trajectory traj = load_trajectory_file(job.trajectory);
  for (std::size_t k = 0; k < traj.frames.size(); ++k) {
    if (traj.frames[k].joints.size() != composer.chain.joint_count()) {
      throw JobError("trajectory frame " + std::to_string(k) + " has " +
                     std::to_string(traj.frames[k].joints.size()) + " joints, chain has " +
                     std::to_string(composer.chain.joint_count()));
    }
    for (const auto& [id, pose] : traj.frames[k].object_poses) {
      if (!composer.objects.contains(id)) {
        throw JobError("trajectory frame " + std::to_string(k) + " references unknown object '" + id + "'");
      }
    }
  }

  const std::string resolved = synthesis_job_to_json(job);
  DatasetManifest manifest;
  // The destination does not change what is rendered, so it stays out of the hash.
  SynthesisJob hashed = job;
  hashed.output_dir.clear();
  manifest.config_hash = sha256_hex(synthesis_job_to_json(hashed));
  fs::create_directories(job.output_dir);

  const std::size_t cams = job.cameras.size();
  manifest.records.resize(traj.frames.size() * cams);
  RenderOptions options;
  options.background = job.background;

  std::string first_error;
  const auto frame_count = static_cast<std::ptrdiff_t>(traj.frames.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t fk = 0; fk < frame_count; ++fk) {
    const auto k = static_cast<std::size_t>(fk);
    try {
      const TrajectoryFrame& frame = traj.frames[k];
      const GaussianScene scene = composer.compose(frame.joints, frame.object_poses);
      const auto violations = check_limits(composer.chain, frame.joints);
      for (std::size_t m = 0; m < cams; ++m) {
        const RenderOutput out = render(scene, job.cameras[m], options);
        ManifestRecord& rec = manifest.records[k * cams + m];
        rec.frame = k;
        rec.timestamp = frame.timestamp;
        rec.camera = m;
        rec.image = frame_name(k, m, "png");
        write_png(out.rgb, job.output_dir / rec.image);
        if (job.write_depth) {
          rec.depth = frame_name(k, m, "pfm");
          write_pfm(out.depth, job.output_dir / rec.depth);
        }
        rec.joints = frame.joints;
        rec.object_poses = frame.object_poses;
        rec.limit_violations = violations;
      }
    } catch (const std::exception& e) {
#pragma omp critical(replay_error)
      if (first_error.empty()) first_error = "frame " + std::to_string(k) + ": " + e.what();
    }
  }
  if (!first_error.empty()) throw JobError(first_error);

  std::string text;
  for (const auto& r : manifest.records) text += record_to_json(r, manifest).dump() + "\n";
  write_file_bytes(job.output_dir / "manifest.jsonl", text);
  write_file_bytes(job.output_dir / "job_config_resolved.json", resolved + "\n");
  manifest.manifest_hash = sha256_hex(text);
  return manifest;
}

}  // namespace kinesplat
