#pragma once

#include "kinesplat/image.hpp"
#include "kinesplat/rasterizer.hpp"
#include "kinesplat/splat_store.hpp"
#include "kinesplat/transform.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace kinesplat {

/// One joint's pose as predicted by MDH FK in the Gaussian scene and as
/// reported by the simulator.
struct FramePairObservation {
  int joint_index = 0;
  SimilarityTransform gs_pose;
  SimilarityTransform sim_pose;
  double weight = 1.0;
};

struct FrameEstimateOptions {
  double max_rotation_residual_deg = 5.0;
  double max_translation_residual = 0.05;  // meters
};

struct JointResidual {
  int joint_index = 0;
  double rotation_deg = 0.0;
  double translation = 0.0;
};

struct FrameEstimate {
  /// Maps Gaussian-scene coordinates into simulator coordinates.
  SimilarityTransform sim_from_gs;
  std::vector<JointResidual> residuals;
  std::vector<std::string> warnings;  // empty when all candidates agree
  bool consistent() const { return warnings.empty(); }
};

/// Weighted average of the per-joint candidates sim_pose · gs_pose⁻¹:
/// chordal quaternion mean (sign-aligned to the first candidate) and
/// arithmetic mean of translations.
FrameEstimate estimate_frame_transform(const std::vector<FramePairObservation>& observations,
                                       const FrameEstimateOptions& options = {});

/// Uniform weights, or weights growing linearly towards the end effector.
std::vector<double> uniform_weights(std::size_t joint_count);
std::vector<double> distal_weights(std::size_t joint_count);

/// gs_from_obj = gs_from_sim · sim_from_obj.
SimilarityTransform express_object(const SimilarityTransform& sim_from_obj,
                                   const SimilarityTransform& gs_from_sim);

/// Observation file: JSON array of {joint, T_gs[16], T_sim[16], w}.
std::vector<FramePairObservation> parse_observations(std::string_view json_text);
std::string frame_estimate_to_json(const FrameEstimate& estimate);

struct LayoutConfig {
  double bev_height = 1.6;
  double alpha_threshold = 0.5;
  int max_shift = 20;
};

struct LayoutShift {
  int dx = 0;
  int dy = 0;
  double iou = 0.0;
};

/// Integer shift of `gs_mask` that best overlaps `sim_mask` within
/// ±max_shift. Ties: smallest |shift|, then smallest dx, then smallest dy.
LayoutShift layout_shift(const Mask& gs_mask, const Mask& sim_mask, const LayoutConfig& config);

/// Downward-looking camera `height` meters above `base`, image x along +x world.
CameraModel bev_camera(const Vec3& base, double height, double fx, double fy, int width,
                       int height_px);

struct LocalizeOptions {
  int budget = 200;               // optimisation iterations across all levels
  int pyramid_levels = 3;
  double rotation_step_deg = 0.5;
  double translation_step = 0.005;  // meters
  double min_rotation_step_deg = 1e-3;
  double min_translation_step = 1e-5;
  // A level also ends once an accepted step gains less than this fraction,
  // or the residual drops under residual_floor.
  double min_relative_improvement = 1e-3;
  double residual_floor = 1e-6;
};

struct LocalizeResult {
  SimilarityTransform pose;
  double residual = 0.0;          // mean L1 at full resolution
  double initial_residual = 0.0;
  bool converged = false;
  int iterations = 0;
  struct Accepted {
    int level = 0;  // 0 = full resolution
    double residual = 0.0;
  };
  std::vector<Accepted> accepted;  // non-increasing within each level
};

/// Photometric camera localisation with the scene frozen. Coarse-to-fine
/// over an image pyramid; each iteration tries a Gauss-Newton step built
/// from central-difference directional derivatives on the 6-dim tangent
/// space, then falls back to ± coordinate perturbations, halving the steps
/// when nothing improves. Only strictly improving poses are accepted.
LocalizeResult localize_camera(const GaussianScene& scene, const Image& observed,
                               const CameraModel& initial, const LocalizeOptions& options = {});

/// Mean |render − observed| over all pixels and channels.
double photometric_residual(const GaussianScene& scene, const CameraModel& camera,
                            const Image& observed);

/// Right-perturbation pose ⊕ (ω, v): R·Exp(ω), t + R·v.
SimilarityTransform perturb_pose(const SimilarityTransform& pose, const Eigen::Matrix<double, 6, 1>& xi);

}  // namespace kinesplat
