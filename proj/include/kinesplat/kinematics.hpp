#pragma once

#include "kinesplat/splat_store.hpp"
#include "kinesplat/transform.hpp"

#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace kinesplat {

struct JointLimits {
  double min = 0.0;
  double max = 0.0;
};

/// Modified DH parameters of one joint: twist about x, link length,
/// link offset along z and the constant part of the joint angle.
struct MdhJoint {
  double beta = 0.0;
  double a = 0.0;
  double d = 0.0;
  double theta_offset = 0.0;
  std::optional<JointLimits> limits;
};

/// Serial chain ordered base to end effector.
class MdhChain {
 public:
  MdhChain() = default;
  explicit MdhChain(std::vector<MdhJoint> joints);

  std::size_t joint_count() const { return joints_.size(); }
  const std::vector<MdhJoint>& joints() const { return joints_; }
  const MdhJoint& joint(std::size_t i) const { return joints_.at(i); }

 private:
  std::vector<MdhJoint> joints_;
};

/// Variable part of each joint angle, radians.
struct JointState {
  std::vector<double> angles;

  std::size_t size() const { return angles.size(); }
  static JointState zeros(std::size_t joint_count) {
    return {std::vector<double>(joint_count, 0.0)};
  }
  bool operator==(const JointState&) const = default;
};

struct LimitViolation {
  std::size_t joint = 0;  // zero-based
  double value = 0.0;
  JointLimits limits;
};

/// Chain file: one row per joint, `beta a d theta_offset [theta_min theta_max]`.
/// Blank lines and `#` comments are ignored.
MdhChain parse_chain(std::string_view text);
MdhChain load_chain_file(const std::filesystem::path& path);

/// The per-link homogeneous matrix with θ = theta_offset + angle.
SimilarityTransform link_transform(const MdhJoint& joint, double angle);

/// Cumulative products T1, T1·T2, …; the last entry is base-to-end-effector.
std::vector<SimilarityTransform> forward_kinematics(const MdhChain& chain,
                                                    const JointState& state);

/// Reports joints outside their configured limits. Nothing is clamped.
std::vector<LimitViolation> check_limits(const MdhChain& chain, const JointState& state);

/// Attaches sidecar labels (0 = static, 1..J = joint) to a scene.
GaussianScene bind_labels(const GaussianScene& scene, const std::vector<int>& labels,
                          const MdhChain& chain);

/// Count of Gaussians per label, index 0..J.
std::vector<std::size_t> label_histogram(const GaussianScene& scene, std::size_t joint_count);

/// Moves every labelled Gaussian rigidly by FK_k(target)·FK_k(canonical)⁻¹.
GaussianScene drive_scene(const GaussianScene& scene, const MdhChain& chain,
                          const JointState& canonical, const JointState& target);

/// Heuristic label generator: assigns each Gaussian to the nearest link
/// segment (joint k-1 origin to joint k origin) at the canonical pose, or 0
/// when farther than `max_distance`. Not a segmentation method, only a
/// convenience for producing sidecar files.
std::vector<int> nearest_link_labels(const GaussianScene& scene, const MdhChain& chain,
                                     const JointState& canonical, double max_distance);

}  // namespace kinesplat
