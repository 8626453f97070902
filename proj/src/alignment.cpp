#include "kinesplat/alignment.hpp"

#include "kinesplat/errors.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

namespace kinesplat {
namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

bool bitwise_equal(const SimilarityTransform& a, const SimilarityTransform& b) {
  return a.matrix() == b.matrix();
}

}  // namespace

FrameEstimate estimate_frame_transform(const std::vector<FramePairObservation>& observations,
                                       const FrameEstimateOptions& options) {
  if (observations.empty()) throw EstimationError("no joint observations to average");
  double total = 0.0;
  for (const auto& o : observations) {
    if (!(o.weight >= 0.0) || !std::isfinite(o.weight)) {
      throw EstimationError("joint " + std::to_string(o.joint_index) + " has a negative weight");
    }
    if (!o.gs_pose.is_rigid(1e-6) || !o.sim_pose.is_rigid(1e-6)) {
      throw InvalidTransformError("joint " + std::to_string(o.joint_index) +
                                  " observation is not a rigid transform");
    }
    total += o.weight;
  }
  if (!(total > 0.0)) throw EstimationError("observation weights sum to zero");

  std::vector<SimilarityTransform> candidates;
  candidates.reserve(observations.size());
  for (const auto& o : observations) candidates.push_back(o.sim_pose * o.gs_pose.inverse());

  FrameEstimate estimate;
  // When every weighted candidate is the same matrix, return it untouched.
  const SimilarityTransform* consensus = nullptr;
  bool all_same = true;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (observations[i].weight == 0.0) continue;
    if (!consensus) consensus = &candidates[i];
    else if (!bitwise_equal(*consensus, candidates[i])) all_same = false;
  }
  if (all_same) {
    estimate.sim_from_gs = *consensus;
  } else {
    const Quat reference(candidates.front().linear());
    Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
    Vec3 t_sum = Vec3::Zero();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double w = observations[i].weight;
      Quat q(candidates[i].linear());
      if (q.coeffs().dot(reference.coeffs()) < 0.0) q.coeffs() = -q.coeffs();
      q_sum += w * q.coeffs();
      t_sum += w * candidates[i].translation();
    }
    if (!(q_sum.norm() > 0.0)) throw EstimationError("weighted rotation mean is degenerate");
    Quat mean;
    mean.coeffs() = q_sum.normalized();
    estimate.sim_from_gs = SimilarityTransform::from_rotation(mean, t_sum / total);
  }

  const Mat3 r_mean = estimate.sim_from_gs.linear();
  const Vec3 t_mean = estimate.sim_from_gs.translation();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    JointResidual res{observations[i].joint_index,
                      rotation_angle_between(candidates[i].linear(), r_mean) * kDegPerRad,
                      (candidates[i].translation() - t_mean).norm()};
    if (res.rotation_deg > options.max_rotation_residual_deg ||
        res.translation > options.max_translation_residual) {
      estimate.warnings.push_back("joint " + std::to_string(res.joint_index) +
                                  " candidate disagrees with the mean by " +
                                  std::to_string(res.rotation_deg) + " deg / " +
                                  std::to_string(res.translation) + " m");
    }
    estimate.residuals.push_back(res);
  }
  return estimate;
}

std::vector<double> uniform_weights(std::size_t joint_count) {
  return std::vector<double>(joint_count, 1.0);
}

std::vector<double> distal_weights(std::size_t joint_count) {
  std::vector<double> w(joint_count);
  for (std::size_t i = 0; i < joint_count; ++i) w[i] = static_cast<double>(i + 1);
  return w;
}

SimilarityTransform express_object(const SimilarityTransform& sim_from_obj,
                                   const SimilarityTransform& gs_from_sim) {
  return gs_from_sim * sim_from_obj;
}

std::vector<FramePairObservation> parse_observations(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("observation file: ") + e.what());
  }
  if (j.is_object() && j.contains("observations")) j = j["observations"];
  if (!j.is_array()) throw ParseError("observation file: expected an array of records");
  std::vector<FramePairObservation> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      const auto& rec = j[i];
      FramePairObservation o;
      o.joint_index = rec.at("joint").get<int>();
      o.gs_pose = SimilarityTransform::from_row_major(rec.at("T_gs").get<std::vector<double>>());
      o.sim_pose = SimilarityTransform::from_row_major(rec.at("T_sim").get<std::vector<double>>());
      o.weight = rec.value("w", 1.0);
      out.push_back(o);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("observation record " + std::to_string(i) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("observation record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::string frame_estimate_to_json(const FrameEstimate& estimate) {
  const auto fwd = estimate.sim_from_gs.to_row_major();
  const auto inv = estimate.sim_from_gs.inverse().to_row_major();
  nlohmann::json residuals = nlohmann::json::array();
  for (const auto& r : estimate.residuals) {
    residuals.push_back(
        {{"joint", r.joint_index}, {"rotation_deg", r.rotation_deg}, {"translation_m", r.translation}});
  }
  nlohmann::json j = {{"sim_from_gs", std::vector<double>(fwd.begin(), fwd.end())},
                      {"gs_from_sim", std::vector<double>(inv.begin(), inv.end())},
                      {"residuals", residuals},
                      {"consistent", estimate.consistent()},
                      {"warnings", estimate.warnings}};
  return j.dump(2);
}

LayoutShift layout_shift(const Mask& gs_mask, const Mask& sim_mask, const LayoutConfig& config) {
  if (gs_mask.width != sim_mask.width || gs_mask.height != sim_mask.height) {
    throw DimensionError("layout masks differ in size");
  }
  if (config.max_shift < 0) throw AlignmentError("max_shift must be non-negative");
  const std::size_t sim_count = sim_mask.count();
  if (gs_mask.count() == 0 || sim_count == 0) throw AlignmentError("layout mask is empty");

  const int w = gs_mask.width, h = gs_mask.height, m = config.max_shift;
  const int side = 2 * m + 1;
  struct Score {
    long long inter = 0;
    long long uni = 1;
  };
  std::vector<Score> scores(static_cast<std::size_t>(side) * side);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < side * side; ++s) {
    const int dx = s % side - m, dy = s / side - m;
    long long inter = 0, shifted = 0;
    for (int y = 0; y < h; ++y) {
      const int ty = y + dy;
      if (ty < 0 || ty >= h) continue;
      for (int x = 0; x < w; ++x) {
        if (!gs_mask.at(x, y)) continue;
        const int tx = x + dx;
        if (tx < 0 || tx >= w) continue;
        ++shifted;
        if (sim_mask.at(tx, ty)) ++inter;
      }
    }
    scores[static_cast<std::size_t>(s)] = {inter, shifted + static_cast<long long>(sim_count) - inter};
  }

  int best = -1;
  for (int s = 0; s < side * side; ++s) {
    if (best < 0) {
      best = s;
      continue;
    }
    const Score& a = scores[static_cast<std::size_t>(s)];
    const Score& b = scores[static_cast<std::size_t>(best)];
    const long long lhs = a.inter * b.uni, rhs = b.inter * a.uni;  // exact IoU comparison
    if (lhs != rhs) {
      if (lhs > rhs) best = s;
      continue;
    }
    const int dx = s % side - m, dy = s / side - m;
    const int bx = best % side - m, by = best / side - m;
    const int n = dx * dx + dy * dy, bn = bx * bx + by * by;
    if (n < bn || (n == bn && (dx < bx || (dx == bx && dy < by)))) best = s;
  }
  const Score& sc = scores[static_cast<std::size_t>(best)];
  return {best % side - m, best / side - m,
          static_cast<double>(sc.inter) / static_cast<double>(sc.uni)};
}

CameraModel bev_camera(const Vec3& base, double height, double fx, double fy, int width,
                       int height_px) {
  if (!(height > 0.0)) throw DimensionError("BEV camera height must be positive");
  Mat3 r;
  r.col(0) = Vec3(1.0, 0.0, 0.0);
  r.col(1) = Vec3(0.0, -1.0, 0.0);
  r.col(2) = Vec3(0.0, 0.0, -1.0);
  CameraModel cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height_px;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height_px;
  cam.pose = SimilarityTransform::from_linear(r, base + Vec3(0.0, 0.0, height));
  cam.validate();
  return cam;
}

SimilarityTransform perturb_pose(const SimilarityTransform& pose,
                                 const Eigen::Matrix<double, 6, 1>& xi) {
  const Vec3 omega = xi.head<3>();
  const double angle = omega.norm();
  Mat3 delta = Mat3::Identity();
  if (angle > 0.0) delta = Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
  const Mat3 r = pose.linear();
  return SimilarityTransform::from_linear(r * delta, pose.translation() + r * xi.tail<3>());
}

namespace {

Image downsample2(const Image& in) {
  Image out(in.width / 2, in.height / 2, in.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < in.channels; ++c) {
        out.at(x, y, c) = 0.25f * (in.at(2 * x, 2 * y, c) + in.at(2 * x + 1, 2 * y, c) +
                                   in.at(2 * x, 2 * y + 1, c) + in.at(2 * x + 1, 2 * y + 1, c));
      }
  return out;
}

double mean_abs_diff(const Image& a, const Image& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(double(a.data[i]) - b.data[i]);
  return sum / static_cast<double>(a.data.size());
}

Eigen::VectorXd image_difference(const Image& a, const Image& b) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(a.data.size()));
  for (std::size_t i = 0; i < a.data.size(); ++i) r[static_cast<Eigen::Index>(i)] = double(a.data[i]) - b.data[i];
  return r;
}

Image render_at(const GaussianScene& scene, CameraModel cam, const SimilarityTransform& pose) {
  cam.pose = pose;
  return render(scene, cam).rgb;
}

}  // namespace

double photometric_residual(const GaussianScene& scene, const CameraModel& camera,
                            const Image& observed) {
  if (observed.width != camera.width || observed.height != camera.height || observed.channels != 3) {
    throw DimensionError("observed image does not match the camera resolution");
  }
  const double r = mean_abs_diff(render(scene, camera).rgb, observed);
  if (!std::isfinite(r)) throw AlignmentError("photometric residual is not finite");
  return r;
}

LocalizeResult localize_camera(const GaussianScene& scene, const Image& observed,
                               const CameraModel& initial, const LocalizeOptions& options) {
  initial.validate();
  const int levels = std::max(1, options.pyramid_levels);
  std::vector<Image> pyramid{observed};
  for (int l = 1; l < levels; ++l) pyramid.push_back(downsample2(pyramid.back()));

  LocalizeResult result;
  result.initial_residual = photometric_residual(scene, initial, observed);
  SimilarityTransform pose = initial.pose;
  constexpr double kRadPerDeg = std::numbers::pi / 180.0;

  bool finest_converged = false;
  for (int level = levels - 1; level >= 0; --level) {
    const CameraModel cam = initial.downscaled(1 << level);
    const Image& target = pyramid[static_cast<std::size_t>(level)];
    if (target.width != cam.width || target.height != cam.height) {
      throw DimensionError("image pyramid level does not match the camera");
    }
    const double scale = std::ldexp(1.0, -(levels - 1 - level));
    Eigen::Matrix<double, 6, 1> steps;
    steps << Vec3::Constant(options.rotation_step_deg * kRadPerDeg * scale),
        Vec3::Constant(options.translation_step * scale);

    auto residual = [&](const SimilarityTransform& p, Image* rendered = nullptr) {
      Image img = render_at(scene, cam, p);
      const double r = mean_abs_diff(img, target);
      if (!std::isfinite(r)) throw AlignmentError("photometric residual is not finite");
      if (rendered) *rendered = std::move(img);
      return r;
    };

    Image current_img;
    double current = residual(pose, &current_img);
    result.accepted.push_back({level, current});
    bool level_converged = false;
    bool stalled = false;
    auto accept = [&](const SimilarityTransform& p, double f, Image&& img) {
      stalled = current - f < options.min_relative_improvement * current;
      pose = p;
      current = f;
      current_img = std::move(img);
      result.accepted.push_back({level, current});
    };
    while (result.iterations < options.budget) {
      if (stalled || current <= options.residual_floor ||
          (steps[0] < options.min_rotation_step_deg * kRadPerDeg &&
           steps[3] < options.min_translation_step)) {
        level_converged = true;
        break;
      }
      ++result.iterations;

      // Central differences along each tangent axis; the same renders are the
      // ± coordinate candidates.
      const Eigen::VectorXd r0 = image_difference(current_img, target);
      Eigen::MatrixXd jac(r0.size(), 6);
      double best_probe = current;
      SimilarityTransform best_probe_pose = pose;
      Image best_probe_img;
      for (int i = 0; i < 6; ++i) {
        Eigen::Matrix<double, 6, 1> xi = Eigen::Matrix<double, 6, 1>::Zero();
        xi[i] = steps[i];
        const SimilarityTransform plus = perturb_pose(pose, xi);
        const SimilarityTransform minus = perturb_pose(pose, -xi);
        Image img_plus, img_minus;
        const double f_plus = residual(plus, &img_plus);
        const double f_minus = residual(minus, &img_minus);
        jac.col(i) = (image_difference(img_plus, img_minus)) / (2.0 * steps[i]);
        if (f_plus < best_probe) {
          best_probe = f_plus;
          best_probe_pose = plus;
          best_probe_img = std::move(img_plus);
        }
        if (f_minus < best_probe) {
          best_probe = f_minus;
          best_probe_pose = minus;
          best_probe_img = std::move(img_minus);
        }
      }

      Eigen::Matrix<double, 6, 6> normal = jac.transpose() * jac;
      normal.diagonal() *= 1.0 + 1e-3;
      normal.diagonal().array() += 1e-12;
      const Eigen::Matrix<double, 6, 1> delta = -normal.ldlt().solve(jac.transpose() * r0);
      if (delta.allFinite()) {
        const SimilarityTransform candidate = perturb_pose(pose, delta);
        Image img;
        const double f = residual(candidate, &img);
        if (f < current && f <= best_probe) {
          accept(candidate, f, std::move(img));
          continue;
        }
      }
      if (best_probe < current) {
        accept(best_probe_pose, best_probe, std::move(best_probe_img));
        continue;
      }
      steps *= 0.5;
    }
    if (level == 0) finest_converged = level_converged;
  }

  result.converged = finest_converged;
  CameraModel final_cam = initial;
  final_cam.pose = pose;
  result.residual = photometric_residual(scene, final_cam, observed);
  if (result.residual > result.initial_residual) {
    result.pose = initial.pose;
    result.residual = result.initial_residual;
  } else {
    result.pose = pose;
  }
  return result;
}

}  // namespace kinesplat
