#include "kinesplat/transform.hpp"

#include "kinesplat/errors.hpp"

#include <algorithm>
#include <cmath>

namespace kinesplat {

SimilarityTransform::SimilarityTransform(const Mat4& matrix) : matrix_(matrix) {
  if (matrix(3, 0) != 0.0 || matrix(3, 1) != 0.0 || matrix(3, 2) != 0.0 || matrix(3, 3) != 1.0) {
    throw InvalidTransformError("homogeneous transform must have bottom row (0, 0, 0, 1)");
  }
  if (!matrix.allFinite()) throw InvalidTransformError("transform has non-finite entries");
}

SimilarityTransform SimilarityTransform::from_linear(const Mat3& linear, const Vec3& translation) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = linear;
  m.topRightCorner<3, 1>() = translation;
  return SimilarityTransform(m);
}

SimilarityTransform SimilarityTransform::from_rotation(const Quat& rotation,
                                                       const Vec3& translation, double ratio) {
  return from_linear(ratio * rotation.normalized().toRotationMatrix(), translation);
}

SimilarityTransform SimilarityTransform::from_translation(const Vec3& translation) {
  return from_linear(Mat3::Identity(), translation);
}

SimilarityTransform SimilarityTransform::from_row_major(std::span<const double> values) {
  if (values.size() != 16) {
    throw ParseError("expected 16 row-major values, got " + std::to_string(values.size()));
  }
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = values[static_cast<std::size_t>(r * 4 + c)];
  return SimilarityTransform(m);
}

std::array<double, 16> SimilarityTransform::to_row_major() const {
  std::array<double, 16> out{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[static_cast<std::size_t>(r * 4 + c)] = matrix_(r, c);
  return out;
}

SimilarityTransform SimilarityTransform::operator*(const SimilarityTransform& rhs) const {
  Mat4 m = matrix_ * rhs.matrix_;
  m.row(3) << 0.0, 0.0, 0.0, 1.0;
  return SimilarityTransform(m);
}

SimilarityTransform SimilarityTransform::inverse() const {
  const Mat3 inv = linear().inverse();
  return from_linear(inv, -inv * translation());
}

bool SimilarityTransform::is_rigid(double tol) const {
  const Mat3 r = linear();
  return orthonormality_error(r) < tol && r.determinant() > 0.0;
}

double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  // atan2 form stays accurate near 0 and π.
  const Vec3 axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (rel.trace() - 1.0));
}

}  // namespace kinesplat
