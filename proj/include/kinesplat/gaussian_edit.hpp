#pragma once

#include "kinesplat/splat_store.hpp"
#include "kinesplat/transform.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace kinesplat {

/// Relative tolerance on the diagonal of RRᵀ when checking uniform scale.
inline constexpr double kUniformScaleTolerance = 1e-6;

struct RatioDecomposition {
  double ratio = 1.0;
  Mat3 rotation = Mat3::Identity();
};

/// Splits the linear block into ratio r = sqrt((RRᵀ)₀₀) and R / r.
/// Throws DecompositionError for non-uniform scale or shear and
/// InvalidTransformError for r <= 0 or reflections.
RatioDecomposition decompose_ratio(const SimilarityTransform& transform);

/// Applies a similarity to every Gaussian: means by the full scaled block,
/// log-scales shifted by ln r, orientations pre-multiplied by R / r.
/// SH coefficients are not rotated.
GaussianScene transform_scene(const GaussianScene& scene, const SimilarityTransform& transform);

struct ObjectAnchor {
  Vec3 center = Vec3::Zero();
};

/// Rotates about the anchor and translates: μ' = R(μ − μ₀) + μ₀ + t.
GaussianScene transform_object(const GaussianScene& scene, const ObjectAnchor& anchor,
                               const Mat3& rotation, const Vec3& translation);

struct MergeOptions {
  bool pad_sh = false;
  /// Label remap for the addition; unmapped labels become 0.
  std::optional<std::map<int, int>> label_remap;
};

/// Transforms `addition` and appends it after `base`.
GaussianScene merge_scenes(const GaussianScene& base, const GaussianScene& addition,
                           const SimilarityTransform& transform, const MergeOptions& options = {});

/// Transform file: sixteen row-major numbers, or `tx ty tz qw qx qy qz r`.
SimilarityTransform parse_transform(std::string_view text);
SimilarityTransform load_transform_file(const std::filesystem::path& path);

/// Scenes produced by a composition script. `saves` is only written by
/// run_composition once every step has succeeded.
struct CompositionResult {
  std::map<std::string, GaussianScene> scenes;
  std::map<std::filesystem::path, std::string> saves;  // path -> scene name
};

/// Executes a JSON composition script (ordered load/transform/
/// transform_object/merge/save steps). Relative paths resolve against
/// `base_dir`. `preloaded` seeds named scenes before the first step.
CompositionResult run_composition(std::string_view script_json,
                                  const std::filesystem::path& base_dir,
                                  std::map<std::string, GaussianScene> preloaded = {});

}  // namespace kinesplat
