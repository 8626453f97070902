#include "kinesplat/kinematics.hpp"

#include "kinesplat/errors.hpp"
#include "kinesplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

namespace kinesplat {

MdhChain::MdhChain(std::vector<MdhJoint> joints) : joints_(std::move(joints)) {
  if (joints_.empty()) throw DimensionError("kinematic chain needs at least one joint");
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const MdhJoint& j = joints_[i];
    if (!std::isfinite(j.beta) || !std::isfinite(j.a) || !std::isfinite(j.d) ||
        !std::isfinite(j.theta_offset)) {
      throw DimensionError("joint " + std::to_string(i + 1) + " has non-finite parameters");
    }
    if (std::abs(j.beta) > std::numbers::pi) {
      throw DimensionError("joint " + std::to_string(i + 1) + " twist |beta| exceeds pi");
    }
    if (j.limits && !(j.limits->min <= j.limits->max)) {
      throw DimensionError("joint " + std::to_string(i + 1) + " has min limit above max");
    }
  }
}

MdhChain parse_chain(std::string_view text) {
  std::vector<MdhJoint> joints;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::vector<double> values;
    std::string token;
    while (row >> token) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw ParseError("chain line " + std::to_string(line_no) + ": '" + token +
                         "' is not a number");
      }
    }
    if (values.empty()) continue;
    if (values.size() != 4 && values.size() != 6) {
      throw ParseError("chain line " + std::to_string(line_no) +
                       ": expected 'beta a d theta_offset [theta_min theta_max]', got " +
                       std::to_string(values.size()) + " values");
    }
    MdhJoint joint{values[0], values[1], values[2], values[3], std::nullopt};
    if (values.size() == 6) joint.limits = JointLimits{values[4], values[5]};
    joints.push_back(joint);
  }
  if (joints.empty()) throw ParseError("chain file defines no joints");
  return MdhChain(std::move(joints));
}

MdhChain load_chain_file(const std::filesystem::path& path) {
  return parse_chain(read_file_bytes(path));
}

SimilarityTransform link_transform(const MdhJoint& joint, double angle) {
  const double theta = joint.theta_offset + angle;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cb = std::cos(joint.beta), sb = std::sin(joint.beta);
  Mat4 m;
  m << ct, -st * cb,  st * sb, joint.a * ct,
       st,  ct * cb, -ct * sb, joint.a * st,
      0.0,       sb,       cb, joint.d,
      0.0,      0.0,      0.0, 1.0;
  return SimilarityTransform(m);
}

namespace {

void require_state(const MdhChain& chain, const JointState& state, const char* what) {
  if (state.size() != chain.joint_count()) {
    throw DimensionError(std::string(what) + " has " + std::to_string(state.size()) +
                         " joint values, chain has " + std::to_string(chain.joint_count()));
  }
  for (double v : state.angles)
    if (!std::isfinite(v)) throw DimensionError(std::string(what) + " has a non-finite angle");
}

}  // namespace

std::vector<SimilarityTransform> forward_kinematics(const MdhChain& chain,
                                                    const JointState& state) {
  require_state(chain, state, "joint state");
  std::vector<SimilarityTransform> frames;
  frames.reserve(chain.joint_count());
  SimilarityTransform acc;
  for (std::size_t i = 0; i < chain.joint_count(); ++i) {
    acc = acc * link_transform(chain.joint(i), state.angles[i]);
    frames.push_back(acc);
  }
  return frames;
}

std::vector<LimitViolation> check_limits(const MdhChain& chain, const JointState& state) {
  require_state(chain, state, "joint state");
  std::vector<LimitViolation> out;
  for (std::size_t i = 0; i < chain.joint_count(); ++i) {
    const auto& limits = chain.joint(i).limits;
    const double v = state.angles[i];
    if (limits && (v < limits->min || v > limits->max)) out.push_back({i, v, *limits});
  }
  return out;
}

GaussianScene bind_labels(const GaussianScene& scene, const std::vector<int>& labels,
                          const MdhChain& chain) {
  if (labels.size() != scene.size()) {
    throw BindingError("label sidecar has " + std::to_string(labels.size()) +
                       " entries, scene has " + std::to_string(scene.size()) + " Gaussians");
  }
  const int max_label = static_cast<int>(chain.joint_count());
  GaussianScene out = scene;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > max_label) {
      throw BindingError("label " + std::to_string(labels[i]) + " at Gaussian " +
                         std::to_string(i) + " outside 0.." + std::to_string(max_label));
    }
    out.gaussians[i].joint_label = labels[i];
  }
  return out;
}

std::vector<std::size_t> label_histogram(const GaussianScene& scene, std::size_t joint_count) {
  std::vector<std::size_t> counts(joint_count + 1, 0);
  for (const auto& g : scene.gaussians) {
    if (!g.joint_label) continue;
    const auto k = static_cast<std::size_t>(*g.joint_label);
    if (k >= counts.size()) throw BindingError("label exceeds joint count");
    ++counts[k];
  }
  return counts;
}

GaussianScene drive_scene(const GaussianScene& scene, const MdhChain& chain,
                          const JointState& canonical, const JointState& target) {
  if (!scene.empty() && !scene.has_labels()) {
    throw BindingError("scene has no joint labels; call bind_labels before drive_scene");
  }
  const auto from = forward_kinematics(chain, canonical);
  const auto to = forward_kinematics(chain, target);

  const std::size_t joints = chain.joint_count();
  std::vector<Mat3> rotations(joints + 1, Mat3::Identity());
  std::vector<Vec3> translations(joints + 1, Vec3::Zero());
  std::vector<Quat> quats(joints + 1, Quat::Identity());
  for (std::size_t k = 0; k < joints; ++k) {
    const SimilarityTransform motion = to[k] * from[k].inverse();
    rotations[k + 1] = motion.linear();
    translations[k + 1] = motion.translation();
    quats[k + 1] = Quat(rotations[k + 1]).normalized();
  }

  GaussianScene out = scene;
  for (auto& g : out.gaussians) {
    const int label = *g.joint_label;
    if (label < 0 || static_cast<std::size_t>(label) > joints) {
      throw BindingError("label " + std::to_string(label) + " exceeds chain joint count");
    }
    if (label == 0) continue;
    g.mean = rotations[label] * g.mean + translations[label];
    g.rotation = (quats[label] * g.rotation).normalized();
  }
  return out;
}

std::vector<int> nearest_link_labels(const GaussianScene& scene, const MdhChain& chain,
                                     const JointState& canonical, double max_distance) {
  const auto frames = forward_kinematics(chain, canonical);
  std::vector<Vec3> origins{Vec3::Zero()};
  for (const auto& f : frames) origins.push_back(f.translation());

  std::vector<int> labels(scene.size(), 0);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Vec3& p = scene.gaussians[i].mean;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < origins.size(); ++k) {
      const Vec3 a = origins[k - 1], ab = origins[k] - a;
      const double len2 = ab.squaredNorm();
      const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const double dist = (a + t * ab - p).norm();
      if (dist < best && dist <= max_distance) {
        best = dist;
        labels[i] = static_cast<int>(k);
      }
    }
  }
  return labels;
}

}  // namespace kinesplat
