#include "kinesplat/rasterizer.hpp"

#include "kinesplat/errors.hpp"
#include "kinesplat/image.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace kinesplat {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw DimensionError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DimensionError("camera resolution must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    throw DimensionError("camera principal point must lie inside the image");
  }
  if (!pose.is_rigid(1e-6)) throw InvalidTransformError("camera pose must be rigid");
}

CameraModel CameraModel::downscaled(int factor) const {
  CameraModel out = *this;
  out.fx /= factor;
  out.fy /= factor;
  out.cx /= factor;
  out.cy /= factor;
  out.width = width / factor;
  out.height = height / factor;
  return out;
}

CameraModel camera_from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("camera file: ") + e.what());
  }
  try {
    CameraModel cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    if (j.contains("pose")) {
      cam.pose = SimilarityTransform::from_row_major(j.at("pose").get<std::vector<double>>());
    }
    cam.validate();
    return cam;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("camera file: ") + e.what());
  }
}

CameraModel load_camera_file(const std::filesystem::path& path) {
  return camera_from_json_text(read_file_bytes(path));
}

std::string camera_to_json_text(const CameraModel& camera) {
  const auto pose = camera.pose.to_row_major();
  nlohmann::json j = {{"fx", camera.fx},         {"fy", camera.fy},
                      {"cx", camera.cx},         {"cy", camera.cy},
                      {"width", camera.width},   {"height", camera.height},
                      {"pose", std::vector<double>(pose.begin(), pose.end())}};
  return j.dump(2);
}

std::optional<SplatFragment> project_gaussian(const Gaussian& g, int sh_degree,
                                              const CameraModel& camera) {
  const Mat3 world_to_cam = camera.pose.linear().transpose();
  const Vec3 center = camera.pose.translation();
  const Vec3 p = world_to_cam * (g.mean - center);
  const double z = p.z();
  if (!(z > kNearPlane)) return std::nullopt;

  const double opacity = g.opacity();
  if (!(opacity >= static_cast<double>(kAlphaMin))) return std::nullopt;

  Eigen::Matrix<double, 2, 3> jac;
  jac << camera.fx / z, 0.0, -camera.fx * p.x() / (z * z),
         0.0, camera.fy / z, -camera.fy * p.y() / (z * z);
  const Eigen::Matrix<double, 2, 3> jw = jac * world_to_cam;
  Eigen::Matrix2d cov = jw * covariance_of(g) * jw.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += kDilation;
  cov(1, 1) += kDilation;

  const Vec2 mean2d(camera.fx * p.x() / z + camera.cx, camera.fy * p.y() / z + camera.cy);
  const double det = cov.determinant();
  if (!(det > 0.0) || !mean2d.allFinite()) return std::nullopt;
  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));

  const double r3 = 3.0 * std::sqrt(lambda_max);
  if (mean2d.x() + r3 < 0.0 || mean2d.x() - r3 > camera.width || mean2d.y() + r3 < 0.0 ||
      mean2d.y() - r3 > camera.height) {
    return std::nullopt;
  }

  // Outside the box of half-widths sqrt(c Σxx), sqrt(c Σyy) the Mahalanobis
  // power exceeds c and alpha drops under 1/255. The small margin absorbs
  // the float rounding of the conic.
  const double cutoff_power = std::max(0.0, 2.0 * std::log(opacity / static_cast<double>(kAlphaMin)));
  const Vec2 extent(std::sqrt(cov(0, 0) * cutoff_power) * 1.001 + 0.01,
                    std::sqrt(cov(1, 1) * cutoff_power) * 1.001 + 0.01);

  const Eigen::Matrix2d inv = cov.inverse();
  const Vec3 dir = (g.mean - center).normalized();
  const Vec3 color = eval_sh_color(g, sh_degree, dir).cwiseMax(0.0).cwiseMin(1.0);

  SplatFragment frag;
  frag.mean2d = mean2d.cast<float>();
  frag.cov2d = cov.cast<float>();
  frag.conic = Eigen::Vector3f(static_cast<float>(inv(0, 0)), static_cast<float>(inv(0, 1)),
                               static_cast<float>(inv(1, 1)));
  frag.depth = static_cast<float>(z);
  frag.opacity = static_cast<float>(opacity);
  frag.color = color.cast<float>();
  frag.extent = extent.cast<float>();
  return frag;
}

std::vector<SplatFragment> project_scene(const GaussianScene& scene, const CameraModel& camera) {
  camera.validate();
  scene.validate();
  const auto n = static_cast<std::ptrdiff_t>(scene.size());
  std::vector<std::optional<SplatFragment>> projected(scene.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    projected[static_cast<std::size_t>(i)] =
        project_gaussian(scene.gaussians[static_cast<std::size_t>(i)], scene.sh_degree, camera);
  }
  std::vector<SplatFragment> frags;
  frags.reserve(scene.size());
  for (std::size_t i = 0; i < projected.size(); ++i) {
    if (!projected[i]) continue;
    projected[i]->index = static_cast<std::uint32_t>(i);
    frags.push_back(*projected[i]);
  }
  std::sort(frags.begin(), frags.end(), [](const SplatFragment& a, const SplatFragment& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
  });
  return frags;
}

namespace {

// Compact copy of what the per-pixel loop reads, in depth order.
struct PackedSplat {
  float mean_x, mean_y;
  float conic_a, conic_b, conic_c;
  float opacity;
  float r, g, b;
  float depth;
  float power_floor;  // below this alpha is certainly under kAlphaMin
  double span_cutoff;  // padded -2 * power_floor
};

}  // namespace

RenderOutput render(const GaussianScene& scene, const CameraModel& camera,
                    const RenderOptions& options) {
  const std::vector<SplatFragment> frags = project_scene(scene, camera);
  const int width = camera.width, height = camera.height;
  const int tiles_x = (width + kTileSize - 1) / kTileSize;
  const int tiles_y = (height + kTileSize - 1) / kTileSize;
  const std::size_t tile_count = static_cast<std::size_t>(tiles_x) * tiles_y;

  std::vector<PackedSplat> packed(frags.size());
  struct Rect {
    int x0, x1, y0, y1;      // pixels
    int tx0, tx1, ty0, ty1;  // tiles
  };
  std::vector<Rect> rects(frags.size());
  std::vector<std::uint32_t> offsets(tile_count + 1, 0);
  for (std::size_t i = 0; i < frags.size(); ++i) {
    const SplatFragment& f = frags[i];
    packed[i] = {f.mean2d.x(), f.mean2d.y(), f.conic.x(), f.conic.y(), f.conic.z(),
                 f.opacity,    f.color.x(),  f.color.y(), f.color.z(), f.depth,
                 std::log(kAlphaMin / f.opacity) - 1e-3f, 0.0};
    packed[i].span_cutoff = -2.0 * packed[i].power_floor + 0.01;
    // Pixel centres (u + 0.5) within the cutoff extent.
    const int x0 = std::max(0, static_cast<int>(std::ceil(f.mean2d.x() - f.extent.x() - 0.5f)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(f.mean2d.x() + f.extent.x() - 0.5f)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(f.mean2d.y() - f.extent.y() - 0.5f)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(f.mean2d.y() + f.extent.y() - 0.5f)));
    if (x0 > x1 || y0 > y1) {
      rects[i] = {1, 0, 1, 0, 1, 0, 1, 0};
      continue;
    }
    rects[i] = {x0, x1, y0, y1, x0 / kTileSize, x1 / kTileSize, y0 / kTileSize, y1 / kTileSize};
    for (int ty = rects[i].ty0; ty <= rects[i].ty1; ++ty)
      for (int tx = rects[i].tx0; tx <= rects[i].tx1; ++tx)
        ++offsets[static_cast<std::size_t>(ty) * tiles_x + tx + 1];
  }
  for (std::size_t t = 0; t < tile_count; ++t) offsets[t + 1] += offsets[t];
  // Filling in depth order keeps every tile list sorted by (depth, index).
  std::vector<std::uint32_t> lists(offsets.back());
  std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
  for (std::size_t i = 0; i < frags.size(); ++i) {
    for (int ty = rects[i].ty0; ty <= rects[i].ty1; ++ty)
      for (int tx = rects[i].tx0; tx <= rects[i].tx1; ++tx)
        lists[cursor[static_cast<std::size_t>(ty) * tiles_x + tx]++] = static_cast<std::uint32_t>(i);
  }

  RenderOutput out{Image(width, height, 3), Image(width, height, 1), Image(width, height, 1)};
  const Eigen::Vector3f bg = options.background;
  const auto tiles = static_cast<std::ptrdiff_t>(tile_count);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t t = 0; t < tiles; ++t) {
    const int tx = static_cast<int>(t % tiles_x), ty = static_cast<int>(t / tiles_x);
    const std::uint32_t begin = offsets[static_cast<std::size_t>(t)];
    const std::uint32_t end = offsets[static_cast<std::size_t>(t) + 1];
    const int px0 = tx * kTileSize, py0 = ty * kTileSize;
    const int px_end = std::min(width, px0 + kTileSize);
    const int py_end = std::min(height, py0 + kTileSize);

    // Splat-major traversal: each pixel still sees the fragments in depth
    // order, but only the pixels inside a fragment's box are visited.
    constexpr int kPixels = kTileSize * kTileSize;
    float transmittance[kPixels], r[kPixels], g[kPixels], b[kPixels], d[kPixels];
    bool done[kPixels];
    std::fill_n(transmittance, kPixels, 1.0f);
    std::fill_n(r, kPixels, 0.0f);
    std::fill_n(g, kPixels, 0.0f);
    std::fill_n(b, kPixels, 0.0f);
    std::fill_n(d, kPixels, 0.0f);
    std::fill_n(done, kPixels, false);
    int active = (px_end - px0) * (py_end - py0);

    for (std::uint32_t k = begin; k < end && active > 0; ++k) {
      const std::uint32_t idx = lists[k];
      const PackedSplat& s = packed[idx];
      const Rect& rect = rects[idx];
      const int x_begin = std::max(px0, rect.x0), x_end = std::min(px_end - 1, rect.x1);
      const int y_begin = std::max(py0, rect.y0), y_end = std::min(py_end - 1, rect.y1);
      for (int py = y_begin; py <= y_end; ++py) {
        const float cy = static_cast<float>(py) + 0.5f;
        float powers[kTileSize];
        const int row = x_end - x_begin + 1;
#pragma omp simd
        for (int q = 0; q < row; ++q) {
          const float cx = static_cast<float>(x_begin + q) + 0.5f;
          powers[q] = splat_power(s.mean_x, s.mean_y, s.conic_a, s.conic_b, s.conic_c, cx, cy);
        }
        for (int px = x_begin; px <= x_end; ++px) {
          const int j = (py - py0) * kTileSize + (px - px0);
          const float power = powers[px - x_begin];
          if (power < s.power_floor || done[j]) continue;
          const float alpha = alpha_from_power(power, s.opacity);
          if (alpha == 0.0f) continue;
          const float next = transmittance[j] * (1.0f - alpha);
          if (next < kTransmittanceMin) {
            done[j] = true;
            --active;
            continue;
          }
          const float w = alpha * transmittance[j];
          r[j] += s.r * w;
          g[j] += s.g * w;
          b[j] += s.b * w;
          d[j] += s.depth * w;
          transmittance[j] = next;
        }
      }
    }

    for (int py = py0; py < py_end; ++py) {
      for (int px = px0; px < px_end; ++px) {
        const int j = (py - py0) * kTileSize + (px - px0);
        const float acc = 1.0f - transmittance[j];
        out.rgb.at(px, py, 0) = r[j] + transmittance[j] * bg.x();
        out.rgb.at(px, py, 1) = g[j] + transmittance[j] * bg.y();
        out.rgb.at(px, py, 2) = b[j] + transmittance[j] * bg.z();
        out.alpha.at(px, py) = acc;
        out.depth.at(px, py) = acc > 0.0f ? d[j] / acc : 0.0f;
      }
    }
  }
  return out;
}

Mask render_mask(const GaussianScene& scene, const CameraModel& camera, double alpha_threshold) {
  if (!(alpha_threshold > 0.0 && alpha_threshold < 1.0)) {
    throw DimensionError("mask alpha threshold must lie in (0, 1)");
  }
  const RenderOutput rendered = render(scene, camera);
  Mask mask(camera.width, camera.height);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    mask.bits[i] = rendered.alpha.data[i] > alpha_threshold ? 1 : 0;
  }
  return mask;
}

}  // namespace kinesplat
