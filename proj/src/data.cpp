#include "nvs/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "nvs/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace nvs {

namespace {

struct Hit {
  double t = -1;
  Vec3 normal = {0, 0, 0};
  const Primitive* prim = nullptr;
};

bool hit_sphere(const Primitive& p, const Vec3& o, const Vec3& d, Hit& hit) {
  Vec3 oc = o - p.position;
  double r = p.size[0];
  double b = dot(oc, d);
  double c = dot(oc, oc) - r * r;
  double disc = b * b - c;
  if (disc < 0) return false;
  double s = std::sqrt(disc);
  double t = -b - s;
  if (t < 1e-6) t = -b + s;
  if (t < 1e-6) return false;
  hit.t = t;
  Vec3 point = o + (t * d);
  hit.normal = normalized(point - p.position);
  return true;
}

bool hit_cuboid(const Primitive& p, const Vec3& o, const Vec3& d, Hit& hit) {
  double t_near = -1e30, t_far = 1e30;
  int near_axis = 0;
  for (int a = 0; a < 3; ++a) {
    double lo = p.position[a] - p.size[a], hi = p.position[a] + p.size[a];
    if (std::fabs(d[a]) < 1e-12) {
      if (o[a] < lo || o[a] > hi) return false;
      continue;
    }
    double t0 = (lo - o[a]) / d[a], t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return false;
  }
  double t = t_near >= 1e-6 ? t_near : t_far;
  if (t < 1e-6 || t_near > t_far) return false;
  hit.t = t;
  Vec3 point = o + (t * d);
  Vec3 n = {0, 0, 0};
  n[near_axis] = point[near_axis] > p.position[near_axis] ? 1.0 : -1.0;
  hit.normal = n;
  return true;
}

bool hit_ground(const Primitive& p, const Vec3& o, const Vec3& d, Hit& hit) {
  if (std::fabs(d[1]) < 1e-12) return false;
  double t = (p.position[1] - o[1]) / d[1];
  if (t < 1e-6) return false;
  Vec3 point = o + (t * d);
  if (std::fabs(point[0] - p.position[0]) > p.size[0] ||
      std::fabs(point[2] - p.position[2]) > p.size[2])
    return false;
  hit.t = t;
  hit.normal = {0, 1, 0};
  return true;
}

Vec3 surface_albedo(const Primitive& p, const Vec3& point) {
  if (!p.checker) return p.albedo;
  double k = p.checker_scale;
  long parity = static_cast<long>(std::floor(point[0] * k)) +
                static_cast<long>(std::floor(point[1] * k)) +
                static_cast<long>(std::floor(point[2] * k));
  return (parity % 2 + 2) % 2 == 0 ? p.albedo : p.albedo2;
}

// Camera-to-world look-at with +y world-up appearing at the top of the
// image (camera axes: x right, y down, z forward).
Mat3 look_at_rotation(const Vec3& eye, const Vec3& target) {
  Vec3 z = normalized(target - eye);
  Vec3 y_approx = {0, -1, 0};
  Vec3 x = cross(y_approx, z);
  if (norm(x) < 1e-9) x = {1, 0, 0};  // looking straight up or down
  x = normalized(x);
  Vec3 y = cross(z, x);
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    r[i][0] = x[i];
    r[i][1] = y[i];
    r[i][2] = z[i];
  }
  return r;
}

CameraIntrinsics default_intrinsics(int resolution) {
  CameraIntrinsics intr;
  intr.width = resolution;
  intr.height = resolution;
  // 60 degree horizontal field of view
  intr.fx = intr.fy = 0.5 * resolution / std::tan(std::numbers::pi / 6.0);
  intr.cx = resolution / 2.0;
  intr.cy = resolution / 2.0;
  return intr;
}

}  // namespace

SceneSpec generate_scene(std::uint64_t seed) {
  Rng rng = Rng(seed).fork(seed_tag::kSceneGen);
  SceneSpec scene;
  scene.seed = seed;
  scene.background = {rng.uniform(0.02, 0.45), rng.uniform(0.02, 0.45),
                      rng.uniform(0.02, 0.45)};
  double lx = rng.uniform(-1, 1), ly = rng.uniform(0.3, 1), lz = rng.uniform(-1, 1);
  scene.light_dir = normalized(Vec3{lx, ly, lz});

  int count = 3 + static_cast<int>(rng.uniform_index(6));  // 3..8
  bool with_ground = rng.uniform() < 0.5;
  for (int i = 0; i < count; ++i) {
    Primitive prim;
    if (i == 0 && with_ground) {
      prim.kind = PrimitiveKind::GroundPlane;
      prim.position = {0, rng.uniform(-0.45, -0.25), 0};
      double half = rng.uniform(0.45, 0.6);
      prim.size = {half, 0, half};
    } else {
      prim.kind = rng.uniform() < 0.5 ? PrimitiveKind::Cuboid : PrimitiveKind::Sphere;
      double max_center = 0.55;
      prim.position = {rng.uniform(-max_center, max_center), rng.uniform(-0.4, 0.4),
                       rng.uniform(-max_center, max_center)};
      double room = 1.0 - norm(prim.position);
      double ext = rng.uniform(0.08, std::min(0.35, room * 0.9));
      if (prim.kind == PrimitiveKind::Sphere) {
        prim.size = {ext, ext, ext};
      } else {
        // random aspect with the corner diagonal capped at ext
        Vec3 u = {rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4)};
        prim.size = (ext / norm(u)) * u;
      }
    }
    prim.albedo = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
    prim.checker = rng.uniform() < 0.5;
    prim.checker_scale = rng.uniform(3.0, 8.0);
    prim.albedo2 = {rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
    scene.primitives.push_back(prim);
  }
  return scene;
}

Image render_oracle_view(const SceneSpec& scene, const CameraModel& cam, int height, int width) {
  cam.pose.validate();
  cam.intrinsics.validate();
  Image img(height, width, 3);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      Vec3 o, d;
      pixel_ray(cam.pose, cam.intrinsics, u + 0.5, v + 0.5, o, d);
      Hit best;
      for (const Primitive& p : scene.primitives) {
        Hit h;
        bool ok = false;
        switch (p.kind) {
          case PrimitiveKind::Sphere: ok = hit_sphere(p, o, d, h); break;
          case PrimitiveKind::Cuboid: ok = hit_cuboid(p, o, d, h); break;
          case PrimitiveKind::GroundPlane: ok = hit_ground(p, o, d, h); break;
        }
        if (ok && (best.prim == nullptr || h.t < best.t)) {
          best = h;
          best.prim = &p;
        }
      }
      Vec3 color = scene.background;
      if (best.prim) {
        Vec3 point = o + (best.t * d);
        Vec3 n = dot(best.normal, d) > 0 ? (-1.0 * best.normal) : best.normal;
        double diffuse = std::max(0.0, dot(n, scene.light_dir));
        Vec3 albedo = surface_albedo(*best.prim, point);
        double shade = std::min(1.0, diffuse + 0.1);
        color = shade * albedo;
      }
      for (int c = 0; c < 3; ++c)
        img.at(v, u, c) = static_cast<float>(std::clamp(color[c], 0.0, 1.0));
    }
  }
  quantize_u8(img);
  return img;
}

SampleMode parse_sample_mode(const std::string& s) {
  if (s == "object") return SampleMode::Object;
  if (s == "scene") return SampleMode::Scene;
  throw ConfigError("unknown sample mode '" + s + "' (object | scene)");
}

std::string to_string(SampleMode m) { return m == SampleMode::Object ? "object" : "scene"; }

namespace {

CameraModel object_mode_camera(Rng& rng, int resolution) {
  double az = rng.uniform(0, 2 * std::numbers::pi);
  double el = rng.uniform(-std::numbers::pi / 3.0, std::numbers::pi / 3.0);
  Vec3 eye = {2.0 * std::cos(el) * std::cos(az), 2.0 * std::sin(el),
              2.0 * std::cos(el) * std::sin(az)};
  CameraModel cam;
  cam.intrinsics = default_intrinsics(resolution);
  cam.pose.rotation = look_at_rotation(eye, {0, 0, 0});
  cam.pose.translation = eye;
  return cam;
}

CameraModel arc_camera(double t, double theta0, double span, double radius, double y0,
                       const Vec3& look_jitter, int resolution) {
  double theta = theta0 + span * t;
  Vec3 eye = {radius * std::cos(theta), y0, radius * std::sin(theta)};
  CameraModel cam;
  cam.intrinsics = default_intrinsics(resolution);
  cam.pose.rotation = look_at_rotation(eye, look_jitter);
  cam.pose.translation = eye;
  return cam;
}

}  // namespace

SceneExample sample_example(const SceneSpec& scene, SampleMode mode, int n_inputs, int m_targets,
                            std::uint64_t seed, int resolution) {
  if (n_inputs < 1 || m_targets < 1)
    throw ConfigError("sample_example: need at least one input and one target view");
  Rng rng = Rng(seed).fork(seed_tag::kViewSampling);
  SceneExample ex;
  if (mode == SampleMode::Object) {
    for (int i = 0; i < n_inputs; ++i) {
      CameraModel cam = object_mode_camera(rng, resolution);
      ex.inputs.push_back({render_oracle_view(scene, cam, resolution, resolution), cam});
    }
    for (int i = 0; i < m_targets; ++i) {
      CameraModel cam = object_mode_camera(rng, resolution);
      ex.targets.push_back({render_oracle_view(scene, cam, resolution, resolution), cam});
    }
  } else {
    double theta0 = rng.uniform(0, 2 * std::numbers::pi);
    double span = rng.uniform(0.4, 0.9);  // radians along the arc
    double radius = rng.uniform(1.6, 2.0);
    double y0 = rng.uniform(-0.1, 0.4);
    Vec3 look = {rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)};
    auto at = [&](double t) { return arc_camera(t, theta0, span, radius, y0, look, resolution); };
    for (int i = 0; i < n_inputs; ++i) {
      double t = n_inputs == 1 ? 0.0 : static_cast<double>(i) / (n_inputs - 1);
      CameraModel cam = at(t);
      ex.inputs.push_back({render_oracle_view(scene, cam, resolution, resolution), cam});
    }
    for (int j = 0; j < m_targets; ++j) {
      // interleave between input positions, jittered off the exact knots
      double t = (j + 0.5) / m_targets + rng.uniform(-0.2, 0.2) / m_targets;
      t = std::clamp(t, 0.01, 0.99);
      CameraModel cam = at(t);
      ex.targets.push_back({render_oracle_view(scene, cam, resolution, resolution), cam});
    }
  }
  return ex;
}

namespace {

json camera_json(const View& view, const std::string& image_name, const std::string& role) {
  json j;
  j["role"] = role;
  j["image"] = image_name;
  j["fx"] = view.camera.intrinsics.fx;
  j["fy"] = view.camera.intrinsics.fy;
  j["cx"] = view.camera.intrinsics.cx;
  j["cy"] = view.camera.intrinsics.cy;
  j["width"] = view.camera.intrinsics.width;
  j["height"] = view.camera.intrinsics.height;
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < 3; ++c) row.push_back(view.camera.pose.rotation[r][c]);
    row.push_back(view.camera.pose.translation[r]);
    rows.push_back(row);
  }
  j["c2w"] = rows;
  return j;
}

View view_from_json(const json& j, const std::string& scene_dir, const std::string& file,
                    bool load_image) {
  View view;
  try {
    view.camera.intrinsics.fx = j.at("fx").get<double>();
    view.camera.intrinsics.fy = j.at("fy").get<double>();
    view.camera.intrinsics.cx = j.at("cx").get<double>();
    view.camera.intrinsics.cy = j.at("cy").get<double>();
    view.camera.intrinsics.width = j.at("width").get<int>();
    view.camera.intrinsics.height = j.at("height").get<int>();
    const json& rows = j.at("c2w");
    if (!rows.is_array() || rows.size() != 3)
      throw ParseError(file + ": c2w must be a 3x4 matrix");
    for (int r = 0; r < 3; ++r) {
      const json& row = rows[r];
      if (!row.is_array() || row.size() != 4)
        throw ParseError(file + ": c2w must be a 3x4 matrix");
      for (int c = 0; c < 3; ++c) view.camera.pose.rotation[r][c] = row[c].get<double>();
      view.camera.pose.translation[r] = row[3].get<double>();
    }
  } catch (const json::exception& e) {
    throw ParseError(file + ": " + e.what());
  }
  if (load_image) {
    std::string image_name = j.at("image").get<std::string>();
    view.image = read_image(scene_dir + "/" + image_name);
  }
  return view;
}

int line_of_byte(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

json parse_manifest(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(file + ":" + std::to_string(line_of_byte(text, e.byte)) + ": " + e.what());
  }
}

}  // namespace

void write_scene_dir(const SceneExample& example, const std::string& scene_dir) {
  fs::create_directories(scene_dir);
  json manifest;
  json views = json::array();
  char name[64];
  for (std::size_t i = 0; i < example.inputs.size(); ++i) {
    std::snprintf(name, sizeof(name), "input_%03zu.ppm", i);
    write_ppm(scene_dir + "/" + name, example.inputs[i].image);
    views.push_back(camera_json(example.inputs[i], name, "input"));
  }
  for (std::size_t i = 0; i < example.targets.size(); ++i) {
    std::snprintf(name, sizeof(name), "target_%03zu.ppm", i);
    write_ppm(scene_dir + "/" + name, example.targets[i].image);
    views.push_back(camera_json(example.targets[i], name, "target"));
  }
  manifest["views"] = views;
  std::ofstream out(scene_dir + "/cameras.json");
  if (!out) throw IoError("cannot open " + scene_dir + "/cameras.json for writing");
  out << manifest.dump(2) << "\n";
}

SceneExample read_scene_dir(const std::string& scene_dir) {
  std::string file = scene_dir + "/cameras.json";
  json manifest = parse_manifest(file);
  if (!manifest.contains("views") || !manifest["views"].is_array())
    throw ParseError(file + ": manifest must contain a 'views' array");
  SceneExample ex;
  for (const json& j : manifest["views"]) {
    std::string role = j.value("role", "input");
    View v = view_from_json(j, scene_dir, file, true);
    if (role == "input")
      ex.inputs.push_back(std::move(v));
    else if (role == "target")
      ex.targets.push_back(std::move(v));
    else
      throw ParseError(file + ": unknown view role '" + role + "'");
  }
  return ex;
}

void write_dataset(std::span<const SceneExample> examples, const std::string& directory) {
  fs::create_directories(directory);
  char name[64];
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::snprintf(name, sizeof(name), "scene_%04zu", i);
    write_scene_dir(examples[i], directory + "/" + name);
  }
}

std::vector<SceneExample> read_dataset(const std::string& directory) {
  if (!fs::is_directory(directory)) throw IoError(directory + " is not a directory");
  std::vector<std::string> scene_dirs;
  for (const auto& entry : fs::directory_iterator(directory))
    if (entry.is_directory() && fs::exists(entry.path() / "cameras.json"))
      scene_dirs.push_back(entry.path().string());
  std::sort(scene_dirs.begin(), scene_dirs.end());
  if (scene_dirs.empty()) throw IoError(directory + " contains no scene directories");
  std::vector<SceneExample> out;
  out.reserve(scene_dirs.size());
  for (const std::string& dir : scene_dirs) out.push_back(read_scene_dir(dir));
  return out;
}

}  // namespace nvs
