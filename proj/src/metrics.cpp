#include "kinesplat/metrics.hpp"

#include "kinesplat/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kinesplat {

namespace fs = std::filesystem;

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("image shapes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                         "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + "x" + std::to_string(b.channels));
  }
  if (a.data.empty()) throw DimensionError("images are empty");
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable valid-region filter of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int width, int height,
                                 const std::array<double, kWindow>& w) {
  const int ow = width - kWindow + 1;
  const int oh = height - kWindow + 1;
  std::vector<double> horiz(static_cast<std::size_t>(ow) * height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[k] * plane[static_cast<std::size_t>(y) * width + x + k];
      horiz[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[k] * horiz[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double mean_l1(const Image& a, const Image& b) {
  require_same_shape(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    sum += std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
  }
  return sum / static_cast<double>(a.data.size());
}

double mean_squared_error(const Image& a, const Image& b) {
  require_same_shape(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
  const double mse = mean_squared_error(a, b);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.width < kWindow || a.height < kWindow) {
    throw MetricError("SSIM needs images of at least 11x11 pixels");
  }
  const auto w = gaussian_window();
  const std::size_t n = static_cast<std::size_t>(a.width) * a.height;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a.data[i * a.channels + c];
      pb[i] = b.data[i * b.channels + c];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, a.width, a.height, w);
    const auto mu_b = filter_valid(pb, a.width, a.height, w);
    const auto e_aa = filter_valid(paa, a.width, a.height, w);
    const auto e_bb = filter_valid(pbb, a.width, a.height, w);
    const auto e_ab = filter_valid(pab, a.width, a.height, w);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      sum += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / a.channels;
}

MetricReport compare(const Image& a, const Image& b) {
  MetricReport r;
  r.l1 = mean_l1(a, b);
  r.psnr = psnr(a, b);
  r.ssim = ssim(a, b);
  r.frames.push_back({"", r.l1, r.psnr, r.ssim});
  return r;
}

MetricReport compare_sequence(const fs::path& dir_a, const fs::path& dir_b,
                              const std::optional<fs::path>& diff_dir) {
  for (const auto& d : {dir_a, dir_b}) {
    if (!fs::is_directory(d)) throw IoError("not a directory: '" + d.string() + "'");
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw MetricError("no PNG frames in '" + dir_a.string() + "'");
  std::vector<std::string> missing;
  for (const auto& name : names) {
    if (!fs::is_regular_file(dir_b / name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string msg = "frames missing from '" + dir_b.string() + "':";
    for (const auto& m : missing) msg += " " + m;
    throw MetricError(msg);
  }
  if (diff_dir) fs::create_directories(*diff_dir);

  MetricReport report;
  for (const auto& name : names) {
    const Image a = read_png(dir_a / name);
    const Image b = read_png(dir_b / name);
    FrameMetrics f{name, mean_l1(a, b), psnr(a, b), ssim(a, b)};
    report.l1 += f.l1;
    report.psnr += f.psnr;
    report.ssim += f.ssim;
    report.frames.push_back(std::move(f));
    if (diff_dir) {
      Image diff(a.width, a.height, a.channels);
      for (std::size_t i = 0; i < a.data.size(); ++i) diff.data[i] = std::abs(a.data[i] - b.data[i]);
      write_png(diff, *diff_dir / name);
    }
  }
  const double count = static_cast<double>(report.frames.size());
  report.l1 /= count;
  report.psnr /= count;
  report.ssim /= count;
  return report;
}

double keypoint_distance(const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b) {
  if (a.size() != b.size()) throw DimensionError("keypoint sets differ in size");
  if (a.empty()) throw MetricError("no keypoints given");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).norm();
  return sum / static_cast<double>(a.size());
}

std::string report_to_json(const MetricReport& report) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : report.frames) {
    frames.push_back({{"name", f.name}, {"l1", f.l1}, {"psnr", f.psnr}, {"ssim", f.ssim}});
  }
  return nlohmann::json{{"l1", report.l1}, {"psnr", report.psnr}, {"ssim", report.ssim}, {"frames", frames}}
      .dump(2);
}

std::string report_to_table(const MetricReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %10s %10s %8s\n", "frame", "L1", "PSNR", "SSIM");
  out << line;
  for (const auto& f : report.frames) {
    std::snprintf(line, sizeof line, "%-28s %10.6f %10.4f %8.5f\n", f.name.c_str(), f.l1, f.psnr, f.ssim);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-28s %10.6f %10.4f %8.5f\n", "mean", report.l1, report.psnr, report.ssim);
  out << line;
  return out.str();
}

}  // namespace kinesplat
