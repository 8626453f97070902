#pragma once

#include "kinesplat/image.hpp"
#include "kinesplat/splat_store.hpp"
#include "kinesplat/transform.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>

#include <Eigen/Core>

namespace kinesplat {

inline constexpr int kTileSize = 16;
inline constexpr double kNearPlane = 0.01;
inline constexpr double kDilation = 0.3;  // px², added to the cov2d diagonal
inline constexpr float kAlphaMin = 1.0f / 255.0f;
inline constexpr float kAlphaMax = 0.99f;
inline constexpr float kTransmittanceMin = 1e-4f;

/// Pinhole camera, OpenCV axes (x right, y down, z forward). Pixel (u, v)
/// has its centre at (u + 0.5, v + 0.5).
struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  SimilarityTransform pose;  // world-from-camera, rigid

  /// Throws DimensionError / InvalidTransformError on bad intrinsics or pose.
  void validate() const;
  Vec3 center() const { return pose.translation(); }
  /// Same pose, intrinsics and resolution divided by `factor`.
  CameraModel downscaled(int factor) const;
};

CameraModel camera_from_json_text(std::string_view text);
std::string camera_to_json_text(const CameraModel& camera);
CameraModel load_camera_file(const std::filesystem::path& path);

/// Screen-space footprint of one Gaussian. Stored in float because it
/// feeds the compositing loop directly.
struct SplatFragment {
  Eigen::Vector2f mean2d;
  Eigen::Matrix2f cov2d;
  Eigen::Vector3f conic;  // upper triangle of cov2d⁻¹: (a, b, c)
  float depth = 0.0f;
  float opacity = 0.0f;
  Eigen::Vector3f color;  // clamped to [0, 1]
  Eigen::Vector2f extent = Eigen::Vector2f::Zero();  // half-widths beyond which alpha < 1/255, px
  std::uint32_t index = 0;
};

/// EWA projection. Returns nullopt when the Gaussian is behind the near
/// plane, its 3σ box misses the image, or it can never reach alpha 1/255.
std::optional<SplatFragment> project_gaussian(const Gaussian& g, int sh_degree,
                                              const CameraModel& camera);

/// Falloff shared by every compositor: o·exp(−½ δᵀΣ⁻¹δ) capped at 0.99,
/// zero below 1/255. `conic` is the upper triangle (a, b, c) of Σ⁻¹.
inline float splat_power(float mean_x, float mean_y, float conic_a, float conic_b, float conic_c,
                         float px, float py) {
  const float dx = px - mean_x;
  const float dy = py - mean_y;
  return -0.5f * (conic_a * dx * dx + conic_c * dy * dy) - conic_b * dx * dy;
}

inline float alpha_from_power(float power, float opacity) {
  if (power > 0.0f) return 0.0f;
  float alpha = opacity * std::exp(power);
  if (alpha > kAlphaMax) alpha = kAlphaMax;
  return alpha < kAlphaMin ? 0.0f : alpha;
}

inline float splat_alpha(float mean_x, float mean_y, float conic_a, float conic_b, float conic_c,
                         float opacity, float px, float py) {
  return alpha_from_power(splat_power(mean_x, mean_y, conic_a, conic_b, conic_c, px, py), opacity);
}

inline float alpha_of(const SplatFragment& frag, float px, float py) {
  return splat_alpha(frag.mean2d.x(), frag.mean2d.y(), frag.conic.x(), frag.conic.y(),
                     frag.conic.z(), frag.opacity, px, py);
}

struct RenderOptions {
  Eigen::Vector3f background = Eigen::Vector3f::Zero();
};

struct RenderOutput {
  Image rgb;    // 3 channels
  Image depth;  // 1 channel, alpha-weighted expected depth, 0 where alpha == 0
  Image alpha;  // 1 channel
};

/// Projects every Gaussian and sorts the survivors by (depth, index).
std::vector<SplatFragment> project_scene(const GaussianScene& scene, const CameraModel& camera);

RenderOutput render(const GaussianScene& scene, const CameraModel& camera,
                    const RenderOptions& options = {});

/// accumulated alpha > threshold.
Mask render_mask(const GaussianScene& scene, const CameraModel& camera, double alpha_threshold);

}  // namespace kinesplat
