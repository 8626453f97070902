#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <span>

namespace kinesplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

/// 4x4 homogeneous transform whose linear block may carry a uniform scale.
///
/// Construction only enforces the exact (0,0,0,1) bottom row. Whether the
/// linear block really is a positively scaled rotation is checked where it
/// matters (see decompose_ratio in gaussian_edit.hpp).
class SimilarityTransform {
 public:
  SimilarityTransform() : matrix_(Mat4::Identity()) {}
  explicit SimilarityTransform(const Mat4& matrix);

  static SimilarityTransform identity() { return {}; }
  static SimilarityTransform from_linear(const Mat3& linear, const Vec3& translation);
  static SimilarityTransform from_rotation(const Quat& rotation, const Vec3& translation,
                                           double ratio = 1.0);
  static SimilarityTransform from_translation(const Vec3& translation);

  /// Row-major 16 values.
  static SimilarityTransform from_row_major(std::span<const double> values);
  std::array<double, 16> to_row_major() const;

  const Mat4& matrix() const { return matrix_; }
  Mat3 linear() const { return matrix_.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return matrix_.topRightCorner<3, 1>(); }

  Vec3 apply(const Vec3& point) const { return linear() * point + translation(); }

  SimilarityTransform operator*(const SimilarityTransform& rhs) const;
  SimilarityTransform inverse() const;

  /// True when the linear block is orthonormal with det +1 within `tol`.
  bool is_rigid(double tol = 1e-9) const;

 private:
  Mat4 matrix_;
};

/// Largest absolute entry of RᵀR − I.
double orthonormality_error(const Mat3& r);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace kinesplat
