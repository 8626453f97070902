#pragma once

#include "kinesplat/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace kinesplat {

inline constexpr double kPsnrCap = 100.0;

struct FrameMetrics {
  std::string name;
  double l1 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  double l1 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<FrameMetrics> frames;
};

double mean_l1(const Image& a, const Image& b);
double mean_squared_error(const Image& a, const Image& b);
/// 10·log10(1 / MSE) on [0, 1] data, capped at 100 dB.
double psnr(const Image& a, const Image& b);
/// Gaussian-window SSIM (11×11, σ = 1.5, C1 = 0.01², C2 = 0.03²) over the
/// valid region, averaged over channels.
double ssim(const Image& a, const Image& b);

MetricReport compare(const Image& a, const Image& b);

/// Compares same-named PNG frames of two directories. Writes |a − b|
/// images into `diff_dir` when given.
MetricReport compare_sequence(const std::filesystem::path& dir_a,
                              const std::filesystem::path& dir_b,
                              const std::optional<std::filesystem::path>& diff_dir = std::nullopt);

/// Mean Euclidean pixel distance between corresponding annotated points.
double keypoint_distance(const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b);

std::string report_to_json(const MetricReport& report);
std::string report_to_table(const MetricReport& report);

}  // namespace kinesplat
