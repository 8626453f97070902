#pragma once

#include "kinesplat/gaussian_edit.hpp"
#include "kinesplat/kinematics.hpp"
#include "kinesplat/rasterizer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kinesplat {

inline constexpr const char* kEngineVersion = "0.3.0";

struct TrajectoryFrame {
  double timestamp = 0.0;
  JointState joints;
  std::map<std::string, SimilarityTransform> object_poses;  // sim frame
};

struct Trajectory {
  std::vector<TrajectoryFrame> frames;
};

/// Newline-delimited JSON: {"timestamp": t, "joints": [...], "objects": {id: [16]}}.
Trajectory parse_trajectory(std::string_view jsonl);
Trajectory load_trajectory_file(const std::filesystem::path& path);
std::string trajectory_to_jsonl(const Trajectory& trajectory);

struct ObjectSource {
  std::filesystem::path scene;
  ObjectAnchor anchor;
};

struct SceneSwap {
  std::filesystem::path scene;
  SimilarityTransform transform;
};

struct OrbitSpec {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  double elevation = 0.0;  // radians above the xy plane
  int count = 1;
};

/// Everything needed to replay a trajectory. Paths are absolute once
/// resolved by load_synthesis_job.
struct SynthesisJob {
  std::filesystem::path base_scene;
  std::filesystem::path chain;
  std::filesystem::path labels;
  std::filesystem::path trajectory;
  std::vector<CameraModel> cameras;
  std::map<std::string, ObjectSource> objects;
  std::optional<SceneSwap> scene_swap;
  SimilarityTransform gs_from_sim;
  std::optional<JointState> canonical;  // zero state when absent
  Eigen::Vector3f background = Eigen::Vector3f::Zero();
  bool write_depth = true;
  std::filesystem::path output_dir;
};

SynthesisJob parse_synthesis_job(std::string_view json_text, const std::filesystem::path& base_dir);
SynthesisJob load_synthesis_job(const std::filesystem::path& path);
std::string synthesis_job_to_json(const SynthesisJob& job);

/// Checks every referenced file exists; throws JobError listing what is missing.
void validate_job(const SynthesisJob& job);

struct ManifestRecord {
  std::size_t frame = 0;
  double timestamp = 0.0;
  std::size_t camera = 0;
  std::string image;  // relative to output_dir
  std::string depth;  // empty when depth output is disabled
  JointState joints;
  std::map<std::string, SimilarityTransform> object_poses;
  std::vector<LimitViolation> limit_violations;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::string config_hash;
  std::string engine_version = kEngineVersion;
  std::string manifest_hash;  // SHA-256 of manifest.jsonl as written
};

/// Cameras on a circular orbit around `orbit.center`, evenly spaced azimuths
/// starting at +x, all looking at the centre.
std::vector<CameraModel> novel_view_sweep(const CameraModel& intrinsics, const OrbitSpec& orbit);

/// Camera at `position` looking at `target`, world up +z.
SimilarityTransform look_at_pose(const Vec3& position, const Vec3& target);

/// Composes one trajectory frame: driven arm, placed objects, optional
/// background swap. Exposed for tests and the evaluator.
struct FrameComposer {
  GaussianScene base;  // labels bound
  MdhChain chain;
  JointState canonical;
  std::map<std::string, std::pair<GaussianScene, ObjectAnchor>> objects;
  std::optional<std::pair<GaussianScene, SimilarityTransform>> scene_swap;
  SimilarityTransform gs_from_sim;

  GaussianScene compose(const JointState& joints,
                        const std::map<std::string, SimilarityTransform>& object_poses) const;
};

FrameComposer make_composer(const SynthesisJob& job);

/// Renders every frame from every camera into job.output_dir and writes
/// manifest.jsonl and job_config_resolved.json.
DatasetManifest replay(const SynthesisJob& job);

}  // namespace kinesplat
