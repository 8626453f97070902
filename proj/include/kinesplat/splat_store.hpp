#pragma once

#include "kinesplat/transform.hpp"

#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace kinesplat {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kDefaultShDegree = 0;

/// Number of SH coefficients per channel for degree D: (D+1)².
constexpr int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

/// One 3D Gaussian in the standard splat parameterization.
///
/// SH coefficients are stored basis-major, `sh[3 * k + c]` for basis function
/// k and colour channel c, so `sh.size() == 3 * (D + 1)²`.
struct Gaussian {
  Vec3 mean = Vec3::Zero();
  Quat rotation = Quat::Identity();  // (w, x, y, z), unit norm
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  std::vector<double> sh = std::vector<double>(3, 0.0);
  Vec3 normal = Vec3::Zero();  // carried through file round trips, otherwise unused
  std::optional<int> joint_label;

  double opacity() const;
  Mat3 rotation_matrix() const;
};

enum class FrameId { gs, sim, world };

std::string_view to_string(FrameId frame);
FrameId frame_from_string(std::string_view name);

struct GaussianScene {
  std::vector<Gaussian> gaussians;
  int sh_degree = kDefaultShDegree;
  FrameId frame = FrameId::gs;

  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }

  /// True when every Gaussian carries a joint label.
  bool has_labels() const;

  /// Throws if any Gaussian's SH array disagrees with `sh_degree`.
  void validate() const;
};

/// Σ = R(q)·diag(exp(2·s))·R(q)ᵀ.
Mat3 covariance_of(const Gaussian& g);

/// Raw SH colour (with the +0.5 DC offset) seen from `view_dir`. Not clamped.
Vec3 eval_sh_color(const Gaussian& g, int sh_degree, const Vec3& view_dir);

/// Reads a binary little-endian splat point-cloud file.
GaussianScene load_splat_file(const std::filesystem::path& path);

/// Parses an in-memory splat file; `load_splat_file` is a thin wrapper.
GaussianScene parse_splat(std::string_view bytes);

void save_splat_file(const GaussianScene& scene, const std::filesystem::path& path);
std::string serialize_splat(const GaussianScene& scene);

/// Label sidecar: one integer per line, same order as the splat file.
std::vector<int> load_label_file(const std::filesystem::path& path);
void save_label_file(const std::vector<int>& labels, const std::filesystem::path& path);

/// Zero-pads every Gaussian's SH array up to `degree`.
GaussianScene pad_sh_degree(const GaussianScene& scene, int degree);

}  // namespace kinesplat
