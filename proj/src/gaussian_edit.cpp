#include "kinesplat/gaussian_edit.hpp"

#include "kinesplat/errors.hpp"
#include "kinesplat/image.hpp"
#include "kinesplat/kinematics.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kinesplat {

RatioDecomposition decompose_ratio(const SimilarityTransform& transform) {
  const Mat3 linear = transform.linear();
  const Mat3 gram = linear * linear.transpose();
  const double d0 = gram(0, 0);
  if (!(d0 > 0.0)) throw InvalidTransformError("transform ratio must be positive");
  for (int i = 1; i < 3; ++i) {
    if (std::abs(gram(i, i) - d0) > kUniformScaleTolerance * d0) {
      throw DecompositionError("non-uniform scale: diag(RRᵀ) = (" + std::to_string(gram(0, 0)) +
                               ", " + std::to_string(gram(1, 1)) + ", " +
                               std::to_string(gram(2, 2)) + ")");
    }
  }
  if (linear.determinant() < 0.0) {
    throw InvalidTransformError("transform contains a reflection (det < 0)");
  }
  RatioDecomposition out;
  out.ratio = std::sqrt(d0);
  // Rigid inputs built in floating point land within an ulp or two of 1.
  if (std::abs(out.ratio - 1.0) < 1e-12) out.ratio = 1.0;
  out.rotation = linear / out.ratio;
  if (orthonormality_error(out.rotation) >= kUniformScaleTolerance) {
    throw DecompositionError("linear block is not a scaled rotation (shear present)");
  }
  return out;
}

GaussianScene transform_scene(const GaussianScene& scene, const SimilarityTransform& transform) {
  const RatioDecomposition parts = decompose_ratio(transform);
  const Mat3 linear = transform.linear();
  const Vec3 t = transform.translation();
  const Quat q_norm = Quat(parts.rotation).normalized();
  const double log_ratio = std::log(parts.ratio);

  GaussianScene out = scene;
  for (auto& g : out.gaussians) {
    g.mean = linear * g.mean + t;
    if (parts.ratio != 1.0) g.log_scale.array() += log_ratio;
    g.rotation = (q_norm * g.rotation).normalized();
  }
  return out;
}

GaussianScene transform_object(const GaussianScene& scene, const ObjectAnchor& anchor,
                               const Mat3& rotation, const Vec3& translation) {
  if (orthonormality_error(rotation) >= kUniformScaleTolerance || rotation.determinant() <= 0.0) {
    throw InvalidTransformError("object rotation must be orthonormal with det +1");
  }
  const Quat q = Quat(rotation).normalized();
  GaussianScene out = scene;
  for (auto& g : out.gaussians) {
    g.mean = rotation * (g.mean - anchor.center) + anchor.center + translation;
    g.rotation = (q * g.rotation).normalized();
  }
  return out;
}

GaussianScene merge_scenes(const GaussianScene& base, const GaussianScene& addition,
                           const SimilarityTransform& transform, const MergeOptions& options) {
  if (addition.empty()) return base;
  GaussianScene lhs = base;
  GaussianScene rhs = transform_scene(addition, transform);
  if (lhs.sh_degree != rhs.sh_degree) {
    if (!options.pad_sh) {
      throw MergeError("cannot merge SH degree " + std::to_string(rhs.sh_degree) + " into degree " +
                       std::to_string(lhs.sh_degree) + " without padding");
    }
    const int degree = std::max(lhs.sh_degree, rhs.sh_degree);
    lhs = pad_sh_degree(lhs, degree);
    rhs = pad_sh_degree(rhs, degree);
  }
  const bool labelled = base.empty() ? addition.has_labels() : base.has_labels();
  for (auto& g : rhs.gaussians) {
    if (!labelled) {
      g.joint_label.reset();
      continue;
    }
    int label = 0;
    if (options.label_remap && g.joint_label) {
      if (auto it = options.label_remap->find(*g.joint_label); it != options.label_remap->end()) {
        label = it->second;
      }
    }
    g.joint_label = label;
  }
  lhs.gaussians.insert(lhs.gaussians.end(), std::make_move_iterator(rhs.gaussians.begin()),
                       std::make_move_iterator(rhs.gaussians.end()));
  return lhs;
}

SimilarityTransform parse_transform(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<double> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::string token;
    while (row >> token) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw ParseError("transform line " + std::to_string(line_no) + ": '" + token +
                         "' is not a number");
      }
    }
  }
  if (values.size() == 16) return SimilarityTransform::from_row_major(values);
  if (values.size() == 8) {
    const Quat q(values[3], values[4], values[5], values[6]);
    if (!(q.norm() > 0.0)) throw ParseError("compact transform has a zero quaternion");
    if (!(values[7] > 0.0)) throw ParseError("compact transform ratio must be positive");
    return SimilarityTransform::from_rotation(q, Vec3(values[0], values[1], values[2]), values[7]);
  }
  throw ParseError("transform needs 16 (row-major 4x4) or 8 (tx ty tz qw qx qy qz r) numbers, got " +
                   std::to_string(values.size()));
}

SimilarityTransform load_transform_file(const std::filesystem::path& path) {
  return parse_transform(read_file_bytes(path));
}

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::vector<double> numbers(const json& value, std::size_t n, const std::string& where) {
  if (!value.is_array() || value.size() != n) {
    throw ParseError(where + ": expected an array of " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (const auto& v : value) {
    if (!v.is_number()) throw ParseError(where + ": expected numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

// {"matrix": [16]} | {"compact": [8]} | {"file": path}; absent means identity.
SimilarityTransform transform_from(const json& step, const fs::path& base_dir,
                                   const std::string& where) {
  if (!step.contains("transform")) return SimilarityTransform::identity();
  const json& t = step.at("transform");
  if (t.contains("matrix")) return SimilarityTransform::from_row_major(numbers(t["matrix"], 16, where));
  if (t.contains("compact")) {
    const auto v = numbers(t["compact"], 8, where);
    if (!(v[7] > 0.0)) throw ParseError(where + ": compact ratio must be positive");
    return SimilarityTransform::from_rotation(Quat(v[3], v[4], v[5], v[6]), Vec3(v[0], v[1], v[2]),
                                              v[7]);
  }
  if (t.contains("file")) return load_transform_file(resolve(base_dir, t["file"].get<std::string>()));
  throw ParseError(where + ": transform needs 'matrix', 'compact' or 'file'");
}

Mat3 rotation_from(const json& value, const std::string& where) {
  if (value.is_array() && value.size() == 4) {
    const auto q = numbers(value, 4, where);
    return Quat(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
  }
  const auto v = numbers(value, 9, where);
  Mat3 r;
  for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = v[static_cast<std::size_t>(i)];
  return r;
}

std::string str_field(const json& step, const char* key, const std::string& where) {
  if (!step.contains(key) || !step[key].is_string()) {
    throw ParseError(where + ": missing string field '" + key + "'");
  }
  return step[key].get<std::string>();
}

// Checks structure, names and input files before any scene is touched.
void validate_script(const json& steps, const fs::path& base_dir, std::set<std::string> names) {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const json& step = steps[i];
    const std::string where = "composition step " + std::to_string(i);
    if (!step.is_object()) throw ParseError(where + ": expected an object");
    const std::string op = str_field(step, "op", where);
    auto need_scene = [&](const char* key, const char* fallback) {
      const std::string name = step.value(key, std::string(fallback));
      if (!names.contains(name)) throw ParseError(where + ": unknown scene '" + name + "'");
    };
    auto check_file = [&](const std::string& p) {
      if (!fs::exists(resolve(base_dir, p))) throw IoError(where + ": missing input '" + p + "'");
    };
    if (step.contains("transform") && step["transform"].contains("file")) {
      check_file(step["transform"]["file"].get<std::string>());
    }
    if (op == "load") {
      check_file(str_field(step, "path", where));
      if (step.contains("labels")) check_file(str_field(step, "labels", where));
      if (step.contains("labels") != step.contains("chain")) {
        throw ParseError(where + ": 'labels' and 'chain' must be given together");
      }
      if (step.contains("chain")) check_file(str_field(step, "chain", where));
      names.insert(str_field(step, "name", where));
    } else if (op == "transform") {
      need_scene("scene", "main");
    } else if (op == "transform_object") {
      need_scene("scene", "main");
      numbers(step.value("anchor", json::array({0, 0, 0})), 3, where);
      numbers(step.value("translation", json::array({0, 0, 0})), 3, where);
      if (step.contains("rotation")) rotation_from(step["rotation"], where);
    } else if (op == "merge") {
      need_scene("base", "main");
      need_scene("addition", "");
      names.insert(step.value("into", step.value("base", std::string("main"))));
    } else if (op == "save") {
      need_scene("scene", "main");
      str_field(step, "path", where);
    } else {
      throw ParseError(where + ": unknown op '" + op + "'");
    }
  }
}

}  // namespace

CompositionResult run_composition(std::string_view script_json, const fs::path& base_dir,
                                  std::map<std::string, GaussianScene> preloaded) {
  json script;
  try {
    script = json::parse(script_json);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("composition script: ") + e.what());
  }
  const json steps = script.is_array() ? script : script.value("steps", json::array());
  if (!steps.is_array()) throw ParseError("composition script: 'steps' must be an array");

  std::set<std::string> names;
  for (const auto& [name, scene] : preloaded) names.insert(name);
  validate_script(steps, base_dir, names);

  CompositionResult result;
  result.scenes = std::move(preloaded);
  std::vector<std::pair<fs::path, GaussianScene>> pending;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const json& step = steps[i];
    const std::string where = "composition step " + std::to_string(i);
    const std::string op = step["op"].get<std::string>();
    if (op == "load") {
      GaussianScene scene = load_splat_file(resolve(base_dir, step["path"].get<std::string>()));
      if (step.contains("labels")) {
        const MdhChain chain = load_chain_file(resolve(base_dir, step["chain"].get<std::string>()));
        scene = bind_labels(scene, load_label_file(resolve(base_dir, step["labels"].get<std::string>())),
                            chain);
      }
      result.scenes[step["name"].get<std::string>()] = std::move(scene);
    } else if (op == "transform") {
      auto& scene = result.scenes.at(step.value("scene", std::string("main")));
      scene = transform_scene(scene, transform_from(step, base_dir, where));
    } else if (op == "transform_object") {
      auto& scene = result.scenes.at(step.value("scene", std::string("main")));
      const auto anchor = numbers(step.value("anchor", json::array({0, 0, 0})), 3, where);
      const auto t = numbers(step.value("translation", json::array({0, 0, 0})), 3, where);
      const Mat3 r = step.contains("rotation") ? rotation_from(step["rotation"], where)
                                               : Mat3::Identity();
      scene = transform_object(scene, {Vec3(anchor[0], anchor[1], anchor[2])}, r,
                               Vec3(t[0], t[1], t[2]));
    } else if (op == "merge") {
      const std::string base_name = step.value("base", std::string("main"));
      MergeOptions options;
      options.pad_sh = step.value("pad_sh", false);
      GaussianScene merged =
          merge_scenes(result.scenes.at(base_name),
                       result.scenes.at(step["addition"].get<std::string>()),
                       transform_from(step, base_dir, where), options);
      result.scenes[step.value("into", base_name)] = std::move(merged);
    } else if (op == "save") {
      const fs::path path = resolve(base_dir, step["path"].get<std::string>());
      const std::string name = step.value("scene", std::string("main"));
      if (result.scenes.at(name).empty()) throw Error(where + ": empty scene");
      pending.emplace_back(path, result.scenes.at(name));
      result.saves[path] = name;
    }
  }
  for (const auto& [path, scene] : pending) save_splat_file(scene, path);
  return result;
}

}  // namespace kinesplat
