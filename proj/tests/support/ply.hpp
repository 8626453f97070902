// Independent splat PLY writer: header text and channel-major f_rest exactly
// as splat training tools emit them.
#pragma once

#include <Eigen/Core>

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace testing_support {

inline std::string write_ply(const std::vector<std::vector<float>>& rows, int rest_count) {
  std::string h = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(rows.size()) + "\n";
  for (const char* n : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"})
    h += std::string("property float ") + n + "\n";
  for (int i = 0; i < rest_count; ++i) h += "property float f_rest_" + std::to_string(i) + "\n";
  for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    h += std::string("property float ") + n + "\n";
  h += "end_header\n";
  for (const auto& r : rows) {
    if (r.size() != static_cast<std::size_t>(17 + rest_count)) throw std::invalid_argument("row width");
    h.append(reinterpret_cast<const char*>(r.data()), r.size() * sizeof(float));
  }
  return h;
}

/// Random vertex row with a unit quaternion in the last four slots.
inline std::vector<float> random_row(std::mt19937_64& rng, int rest_count) {
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  std::vector<float> r(17 + rest_count);
  for (auto& v : r) v = u(rng);
  const std::size_t q = r.size() - 4;
  Eigen::Vector4f qv(r[q], r[q + 1], r[q + 2], r[q + 3]);
  qv.normalize();
  for (int i = 0; i < 4; ++i) r[q + i] = qv[i];
  return r;
}

}  // namespace testing_support
