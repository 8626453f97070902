#include "kinesplat/splat_store.hpp"

#include "kinesplat/errors.hpp"
#include "kinesplat/image.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>
#include <string>

namespace kinesplat {
namespace {

static_assert(std::endian::native == std::endian::little,
              "splat files are little-endian; big-endian hosts need byte swapping");

constexpr std::string_view kEndHeader = "end_header\n";
constexpr double kQuatNormTolerance = 1e-6;

// SH basis constants (real SH, Condon-Shortley phase) as used by splat renderers.
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                          0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};

int rest_count(int degree) { return 3 * (sh_basis_count(degree) - 1); }

std::vector<std::string> property_names(int degree) {
  std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  for (int i = 0; i < rest_count(degree); ++i) names.push_back("f_rest_" + std::to_string(i));
  names.push_back("opacity");
  for (int i = 0; i < 3; ++i) names.push_back("scale_" + std::to_string(i));
  for (int i = 0; i < 4; ++i) names.push_back("rot_" + std::to_string(i));
  return names;
}

std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) words.push_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

[[noreturn]] void header_error(int line_no, std::string_view line, const std::string& why) {
  throw ParseError("splat header line " + std::to_string(line_no) + " ('" + std::string(line) +
                   "'): " + why);
}

struct Header {
  std::size_t vertex_count = 0;
  std::vector<std::string> properties;
  std::size_t body_offset = 0;
};

Header parse_header(std::string_view bytes) {
  const std::size_t end = bytes.find(kEndHeader);
  if (end == std::string_view::npos) throw ParseError("splat header: missing 'end_header'");
  Header header;
  header.body_offset = end + kEndHeader.size();

  std::string_view text = bytes.substr(0, end);
  int line_no = 0;
  bool saw_vertex = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const auto words = split_words(line);
    if (line_no == 1) {
      if (line != "ply") header_error(line_no, line, "expected magic 'ply'");
      continue;
    }
    if (line_no == 2) {
      if (words.size() != 3 || words[0] != "format") header_error(line_no, line, "expected format line");
      if (words[1] != "binary_little_endian") {
        header_error(line_no, line, "only binary_little_endian is supported");
      }
      if (words[2] != "1.0") header_error(line_no, line, "unsupported format version");
      continue;
    }
    if (words.empty()) header_error(line_no, line, "empty header line");
    if (words[0] == "comment" || words[0] == "obj_info") continue;
    if (words[0] == "element") {
      if (saw_vertex) header_error(line_no, line, "only a single 'vertex' element is supported");
      if (words.size() != 3 || words[1] != "vertex") {
        header_error(line_no, line, "expected 'element vertex <count>'");
      }
      std::size_t count = 0;
      auto [p, ec] = std::from_chars(words[2].data(), words[2].data() + words[2].size(), count);
      if (ec != std::errc() || p != words[2].data() + words[2].size()) {
        header_error(line_no, line, "vertex count is not a non-negative integer");
      }
      header.vertex_count = count;
      saw_vertex = true;
      continue;
    }
    if (words[0] == "property") {
      if (!saw_vertex) header_error(line_no, line, "property before 'element vertex'");
      if (words.size() != 3) header_error(line_no, line, "expected 'property <type> <name>'");
      if (words[1] != "float" && words[1] != "float32") {
        throw UnsupportedLayoutError("splat header line " + std::to_string(line_no) +
                                     ": property '" + std::string(words[2]) +
                                     "' has type '" + std::string(words[1]) + "', expected float");
      }
      header.properties.emplace_back(words[2]);
      continue;
    }
    header_error(line_no, line, "unrecognised header keyword");
  }
  if (line_no < 2) throw ParseError("splat header: missing format line");
  if (!saw_vertex) throw ParseError("splat header: missing 'element vertex'");
  return header;
}

int infer_degree(const std::vector<std::string>& properties) {
  int rest = 0;
  for (const auto& p : properties)
    if (p.rfind("f_rest_", 0) == 0) ++rest;
  for (int degree = 0; degree <= kMaxShDegree; ++degree) {
    if (rest_count(degree) != rest) continue;
    const auto expected = property_names(degree);
    if (expected.size() != properties.size()) break;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (expected[i] != properties[i]) {
        throw UnsupportedLayoutError("splat property " + std::to_string(i) + " is '" +
                                     properties[i] + "', expected '" + expected[i] + "'");
      }
    }
    return degree;
  }
  throw UnsupportedLayoutError("splat layout with " + std::to_string(properties.size()) +
                               " properties (" + std::to_string(rest) +
                               " f_rest) matches no SH degree 0-3");
}

float read_float(const char* p) {
  float v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

void append_float(std::string& out, double v) {
  const float f = static_cast<float>(v);
  char buf[sizeof f];
  std::memcpy(buf, &f, sizeof f);
  out.append(buf, sizeof f);
}

}  // namespace

double Gaussian::opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }

Mat3 Gaussian::rotation_matrix() const { return rotation.normalized().toRotationMatrix(); }

std::string_view to_string(FrameId frame) {
  switch (frame) {
    case FrameId::gs: return "gs";
    case FrameId::sim: return "sim";
    case FrameId::world: return "world";
  }
  return "gs";
}

FrameId frame_from_string(std::string_view name) {
  if (name == "gs") return FrameId::gs;
  if (name == "sim") return FrameId::sim;
  if (name == "world") return FrameId::world;
  throw ParseError("unknown frame id '" + std::string(name) + "'");
}

bool GaussianScene::has_labels() const {
  if (gaussians.empty()) return false;
  for (const auto& g : gaussians)
    if (!g.joint_label) return false;
  return true;
}

void GaussianScene::validate() const {
  if (sh_degree < 0 || sh_degree > kMaxShDegree) {
    throw UnsupportedLayoutError("SH degree " + std::to_string(sh_degree) + " not in 0-3");
  }
  const std::size_t expected = 3 * static_cast<std::size_t>(sh_basis_count(sh_degree));
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    if (gaussians[i].sh.size() != expected) {
      throw UnsupportedLayoutError("Gaussian " + std::to_string(i) + " has " +
                                   std::to_string(gaussians[i].sh.size()) +
                                   " SH coefficients, scene degree needs " +
                                   std::to_string(expected));
    }
  }
}

Mat3 covariance_of(const Gaussian& g) {
  const Mat3 r = g.rotation_matrix();
  const Vec3 variances = (2.0 * g.log_scale).array().exp();
  return r * variances.asDiagonal() * r.transpose();
}

Vec3 eval_sh_color(const Gaussian& g, int sh_degree, const Vec3& view_dir) {
  const auto& sh = g.sh;
  auto coef = [&](int k) { return Vec3(sh[3 * k], sh[3 * k + 1], sh[3 * k + 2]); };

  Vec3 result = kC0 * coef(0);
  if (sh_degree >= 1) {
    const double x = view_dir.x(), y = view_dir.y(), z = view_dir.z();
    result += -kC1 * y * coef(1) + kC1 * z * coef(2) - kC1 * x * coef(3);
    if (sh_degree >= 2) {
      const double xx = x * x, yy = y * y, zz = z * z;
      const double xy = x * y, yz = y * z, xz = x * z;
      result += kC2[0] * xy * coef(4) + kC2[1] * yz * coef(5) +
                kC2[2] * (2.0 * zz - xx - yy) * coef(6) + kC2[3] * xz * coef(7) +
                kC2[4] * (xx - yy) * coef(8);
      if (sh_degree >= 3) {
        result += kC3[0] * y * (3.0 * xx - yy) * coef(9) + kC3[1] * xy * z * coef(10) +
                  kC3[2] * y * (4.0 * zz - xx - yy) * coef(11) +
                  kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * coef(12) +
                  kC3[4] * x * (4.0 * zz - xx - yy) * coef(13) +
                  kC3[5] * z * (xx - yy) * coef(14) + kC3[6] * x * (xx - 3.0 * yy) * coef(15);
      }
    }
  }
  return result + Vec3::Constant(0.5);
}

GaussianScene parse_splat(std::string_view bytes) {
  const Header header = parse_header(bytes);
  const int degree = infer_degree(header.properties);
  const std::size_t stride = header.properties.size() * sizeof(float);
  const std::size_t body = bytes.size() - header.body_offset;
  if (body < header.vertex_count * stride) {
    const std::size_t complete = body / stride;
    throw TruncationError("splat body truncated: vertex " + std::to_string(complete) +
                              " of " + std::to_string(header.vertex_count) +
                              " incomplete at byte offset " + std::to_string(bytes.size()) +
                              " (expected " +
                              std::to_string(header.body_offset + header.vertex_count * stride) +
                              " bytes)",
                          bytes.size());
  }

  const int rest = rest_count(degree);
  const int basis = sh_basis_count(degree);
  GaussianScene scene;
  scene.sh_degree = degree;
  scene.gaussians.resize(header.vertex_count);
  const char* base = bytes.data() + header.body_offset;
  for (std::size_t i = 0; i < header.vertex_count; ++i) {
    const char* p = base + i * stride;
    auto f = [&](int k) { return static_cast<double>(read_float(p + 4 * k)); };
    Gaussian& g = scene.gaussians[i];
    g.mean = Vec3(f(0), f(1), f(2));
    g.normal = Vec3(f(3), f(4), f(5));
    g.sh.assign(3 * static_cast<std::size_t>(basis), 0.0);
    for (int c = 0; c < 3; ++c) g.sh[c] = f(6 + c);
    // f_rest is channel-major in the file: all R coefficients, then G, then B.
    const int per_channel = basis - 1;
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < basis; ++k) g.sh[3 * k + c] = f(9 + c * per_channel + (k - 1));
    const int o = 9 + rest;
    g.opacity_logit = f(o);
    g.log_scale = Vec3(f(o + 1), f(o + 2), f(o + 3));
    Quat q(f(o + 4), f(o + 5), f(o + 6), f(o + 7));
    const double norm = q.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw ParseError("splat vertex " + std::to_string(i) + " has a degenerate quaternion");
    }
    // Already-unit quaternions keep their stored bits so save(load(x)) == x.
    if (std::abs(norm - 1.0) > kQuatNormTolerance) q.coeffs() /= norm;
    g.rotation = q;
  }
  return scene;
}

GaussianScene load_splat_file(const std::filesystem::path& path) {
  return parse_splat(read_file_bytes(path));
}

std::string serialize_splat(const GaussianScene& scene) {
  if (scene.empty()) throw Error("empty scene");
  scene.validate();
  const int degree = scene.sh_degree;
  const auto names = property_names(degree);

  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                    std::to_string(scene.size()) + "\n";
  for (const auto& name : names) out += "property float " + name + "\n";
  out += kEndHeader;
  out.reserve(out.size() + scene.size() * names.size() * sizeof(float));

  const int basis = sh_basis_count(degree);
  for (const auto& g : scene.gaussians) {
    for (int k = 0; k < 3; ++k) append_float(out, g.mean[k]);
    for (int k = 0; k < 3; ++k) append_float(out, g.normal[k]);
    for (int c = 0; c < 3; ++c) append_float(out, g.sh[c]);
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < basis; ++k) append_float(out, g.sh[3 * k + c]);
    append_float(out, g.opacity_logit);
    for (int k = 0; k < 3; ++k) append_float(out, g.log_scale[k]);
    append_float(out, g.rotation.w());
    append_float(out, g.rotation.x());
    append_float(out, g.rotation.y());
    append_float(out, g.rotation.z());
  }
  return out;
}

void save_splat_file(const GaussianScene& scene, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_splat(scene));
}

std::vector<int> load_label_file(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  std::vector<int> labels;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty label line");
    }
    int value = 0;
    auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), value);
    if (ec != std::errc() || p != line.data() + line.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": '" + line +
                       "' is not an integer label");
    }
    labels.push_back(value);
  }
  return labels;
}

void save_label_file(const std::vector<int>& labels, const std::filesystem::path& path) {
  std::string out;
  for (int l : labels) out += std::to_string(l) + "\n";
  write_file_bytes(path, out);
}

GaussianScene pad_sh_degree(const GaussianScene& scene, int degree) {
  if (degree < scene.sh_degree || degree > kMaxShDegree) {
    throw UnsupportedLayoutError("cannot pad SH degree " + std::to_string(scene.sh_degree) +
                                 " to " + std::to_string(degree));
  }
  GaussianScene out = scene;
  out.sh_degree = degree;
  for (auto& g : out.gaussians) g.sh.resize(3 * static_cast<std::size_t>(sh_basis_count(degree)), 0.0);
  return out;
}

}  // namespace kinesplat
