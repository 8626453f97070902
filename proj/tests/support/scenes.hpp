// Random scene and camera generators shared by the tests.
#pragma once

#include "kinesplat/rasterizer.hpp"
#include "kinesplat/splat_store.hpp"

#include <cmath>
#include <random>

namespace testing_support {

using kinesplat::CameraModel;
using kinesplat::Gaussian;
using kinesplat::GaussianScene;
using kinesplat::Quat;
using kinesplat::Vec3;

inline Quat random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q;
}

/// Pinhole camera at the origin looking down +z.
inline CameraModel make_camera(int width, int height, double fov_deg = 60.0) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov_deg * 3.14159265358979323846 / 180.0);
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  return cam;
}

struct SceneParams {
  std::size_t count = 500;
  int sh_degree = 0;
  double z_min = 2.0, z_max = 6.0;
  double spread = 0.6;  // |x|,|y| <= spread * z
  double log_scale_min = std::log(0.01), log_scale_max = std::log(0.2);
  double logit_min = -3.0, logit_max = 4.0;
};

/// Gaussians scattered in the frustum of make_camera().
inline GaussianScene random_scene(std::mt19937_64& rng, const SceneParams& p = {}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto lerp = [&](double a, double b) { return a + (b - a) * u(rng); };
  GaussianScene scene;
  scene.sh_degree = p.sh_degree;
  const std::size_t coeffs = 3 * static_cast<std::size_t>(kinesplat::sh_basis_count(p.sh_degree));
  for (std::size_t i = 0; i < p.count; ++i) {
    Gaussian g;
    const double z = lerp(p.z_min, p.z_max);
    g.mean = Vec3(lerp(-p.spread, p.spread) * z, lerp(-p.spread, p.spread) * z, z);
    g.rotation = random_rotation(rng);
    g.log_scale = Vec3(lerp(p.log_scale_min, p.log_scale_max), lerp(p.log_scale_min, p.log_scale_max),
                       lerp(p.log_scale_min, p.log_scale_max));
    g.opacity_logit = lerp(p.logit_min, p.logit_max);
    g.sh.assign(coeffs, 0.0);
    for (int c = 0; c < 3; ++c) g.sh[c] = lerp(-1.5, 1.5);
    for (std::size_t k = 3; k < coeffs; ++k) g.sh[k] = lerp(-0.3, 0.3);
    scene.gaussians.push_back(std::move(g));
  }
  return scene;
}

/// Rounds every parameter to float so file round trips are lossless.
inline GaussianScene float_exact(GaussianScene scene) {
  auto f = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (auto& g : scene.gaussians) {
    for (int i = 0; i < 3; ++i) {
      g.mean[i] = f(g.mean[i]);
      g.log_scale[i] = f(g.log_scale[i]);
      g.normal[i] = f(g.normal[i]);
    }
    g.rotation = Quat(f(g.rotation.w()), f(g.rotation.x()), f(g.rotation.y()), f(g.rotation.z()));
    g.opacity_logit = f(g.opacity_logit);
    for (auto& v : g.sh) v = f(v);
  }
  return scene;
}

}  // namespace testing_support

namespace testing_support {

/// Cluttered, strongly textured scene for photometric tests: a tilted
/// back wall and floor of small opaque splats plus blobs at mixed depths,
/// all in front of make_camera().
inline GaussianScene textured_scene(std::mt19937_64& rng, std::size_t count) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GaussianScene scene;
  scene.sh_degree = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Gaussian g;
    const double kind = u(rng);
    if (kind < 0.4) {  // back wall, z between 2.2 and 2.8 depending on x
      const double x = -1.6 + 3.2 * u(rng), y = -1.2 + 2.4 * u(rng);
      g.mean = Vec3(x, y, 2.5 + 0.2 * x);
    } else if (kind < 0.7) {  // floor
      const double x = -1.4 + 2.8 * u(rng), z = 0.8 + 1.8 * u(rng);
      g.mean = Vec3(x, 0.45 * z, z);
    } else {  // clutter
      const double z = 0.7 + 1.6 * u(rng);
      g.mean = Vec3((-0.5 + u(rng)) * 1.1 * z, (-0.5 + u(rng)) * 0.8 * z, z);
    }
    g.rotation = random_rotation(rng);
    const double s = std::log(0.006 + 0.02 * u(rng));
    g.log_scale = Vec3(s, s + 0.4 * (u(rng) - 0.5), s + 0.4 * (u(rng) - 0.5));
    g.opacity_logit = 1.0 + 3.0 * u(rng);
    for (int c = 0; c < 3; ++c) g.sh[c] = (u(rng) - 0.5) * 3.0;
    scene.gaussians.push_back(std::move(g));
  }
  return scene;
}

}  // namespace testing_support
