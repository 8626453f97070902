// On-disk fixture: a three-joint toy arm standing on a textured table, a
// small cube object, a camera, a trajectory, a synthesis job and an
// evaluator episode config.
#pragma once

#include "kinesplat/image.hpp"
#include "kinesplat/kinematics.hpp"
#include "kinesplat/rasterizer.hpp"
#include "kinesplat/splat_store.hpp"
#include "kinesplat/synthesizer.hpp"

#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

namespace testing_support {

inline const char* kArmChain =
    "# beta a d theta_offset min max\n"
    "0 0 0.3 0 -3.0 3.0\n"
    "1.5707963267948966 0.3 0 0 -3.0 3.0\n"
    "0 0.25 0 0 -2.0 2.0\n";

struct ArmFixture {
  std::filesystem::path dir;
  std::filesystem::path scene, chain, labels, camera, object, trajectory, job, episode;
  kinesplat::CameraModel cam;
  std::size_t frames = 0;
};

inline kinesplat::Gaussian blob(const kinesplat::Vec3& p, double size, const kinesplat::Vec3& rgb,
                                double logit = 3.0) {
  kinesplat::Gaussian g;
  g.mean = p;
  g.log_scale = kinesplat::Vec3::Constant(std::log(size));
  g.opacity_logit = logit;
  for (int c = 0; c < 3; ++c) g.sh[c] = (rgb[c] - 0.5) / 0.28209479177387814;
  return g;
}

inline ArmFixture write_arm_fixture(const std::filesystem::path& dir, std::size_t frames = 4,
                                    int step_budget = 10) {
  using kinesplat::Vec3;
  namespace fs = std::filesystem;
  ArmFixture f;
  f.dir = dir;
  f.frames = frames;
  f.scene = dir / "scene.ply";
  f.chain = dir / "arm.chain";
  f.labels = dir / "arm.labels";
  f.camera = dir / "camera.json";
  f.object = dir / "cube.ply";
  f.trajectory = dir / "trajectory.jsonl";
  f.job = dir / "job.json";
  f.episode = dir / "episode.json";
  fs::create_directories(dir);

  kinesplat::write_file_bytes(f.chain, kArmChain);
  const kinesplat::MdhChain chain = kinesplat::parse_chain(kArmChain);
  const auto frames0 = kinesplat::forward_kinematics(chain, kinesplat::JointState::zeros(3));

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  kinesplat::GaussianScene scene;
  std::vector<int> labels;
  for (int i = 0; i < 900; ++i) {  // table
    const Vec3 p(-0.4 + 1.4 * u(rng), -0.6 + 1.2 * u(rng), 0.0);
    scene.gaussians.push_back(blob(p, 0.02, Vec3(u(rng), u(rng), 0.3 + 0.4 * u(rng))));
    labels.push_back(0);
  }
  Vec3 start = Vec3::Zero();
  const Vec3 link_colors[3] = {Vec3(0.9, 0.1, 0.1), Vec3(0.1, 0.9, 0.1), Vec3(0.95, 0.95, 0.2)};
  for (int k = 0; k < 3; ++k) {
    const Vec3 end = frames0[static_cast<std::size_t>(k)].translation();
    for (int i = 0; i < 40; ++i) {
      const double s = (i + 0.5) / 40.0;
      scene.gaussians.push_back(blob(start + s * (end - start), 0.015, link_colors[k]));
      labels.push_back(k + 1);
    }
    start = end;
  }
  kinesplat::save_splat_file(scene, f.scene);
  kinesplat::save_label_file(labels, f.labels);

  kinesplat::GaussianScene cube;
  for (int i = 0; i < 60; ++i) {
    const Vec3 p(0.04 * (u(rng) - 0.5), 0.04 * (u(rng) - 0.5), 0.04 * (u(rng) - 0.5));
    cube.gaussians.push_back(blob(p, 0.008, Vec3(0.2, 0.3, 1.0), 4.0));
  }
  kinesplat::save_splat_file(cube, f.object);

  f.cam.width = 96;
  f.cam.height = 72;
  f.cam.fx = f.cam.fy = 90.0;
  f.cam.cx = 48.0;
  f.cam.cy = 36.0;
  f.cam.pose = kinesplat::look_at_pose(Vec3(0.3, -1.3, 0.7), Vec3(0.3, 0.0, 0.15));
  kinesplat::write_file_bytes(f.camera, kinesplat::camera_to_json_text(f.cam));

  kinesplat::Trajectory traj;
  for (std::size_t k = 0; k < frames; ++k) {
    kinesplat::TrajectoryFrame fr;
    fr.timestamp = 0.1 * static_cast<double>(k);
    const double t = static_cast<double>(k);
    fr.joints.angles = {0.2 * t, -0.1 * t, 0.3 * t};
    fr.object_poses["cube"] = kinesplat::SimilarityTransform::from_translation(Vec3(0.5, 0.2 + 0.02 * t, 0.02));
    traj.frames.push_back(fr);
  }
  kinesplat::write_file_bytes(f.trajectory, kinesplat::trajectory_to_jsonl(traj));

  const nlohmann::json camera = nlohmann::json::parse(kinesplat::camera_to_json_text(f.cam));
  nlohmann::json job = {{"base_scene", "scene.ply"},
                        {"chain", "arm.chain"},
                        {"labels", "arm.labels"},
                        {"trajectory", "trajectory.jsonl"},
                        {"output_dir", "out"},
                        {"cameras", nlohmann::json::array({camera})},
                        {"objects", {{"cube", {{"scene", "cube.ply"}, {"anchor", {0, 0, 0}}}}}},
                        {"background", {0.05, 0.05, 0.05}}};
  kinesplat::write_file_bytes(f.job, job.dump(2));

  nlohmann::json episode = {
      {"scene", "scene.ply"},
      {"chain", "arm.chain"},
      {"labels", "arm.labels"},
      {"camera", camera},
      {"initial", {0.0, 0.0, 0.0}},
      {"step_budget", step_budget},
      {"workspace", {{"min", {-1.0, -1.0, -0.5}}, {"max", {1.0, 1.0, 1.5}}, {"table_z", 0.1}}},
      {"objects",
       {{"cube",
         {{"scene", "cube.ply"}, {"anchor", {0, 0, 0}}, {"pose", {1, 0, 0, 0.5, 0, 1, 0, 0.2, 0, 0, 1, 0.02, 0, 0, 0, 1}}}}}}};
  kinesplat::write_file_bytes(f.episode, episode.dump(2));
  return f;
}

}  // namespace testing_support
