#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nvs/geometry.hpp"
#include "nvs/image.hpp"

namespace nvs {

struct View {
  Image image;
  CameraModel camera;
};

// One training/eval sample: N posed input views plus M posed target views,
// all at one resolution.
struct SceneExample {
  std::vector<View> inputs;
  std::vector<View> targets;
};

enum class PrimitiveKind { GroundPlane, Cuboid, Sphere };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Vec3 position = {0, 0, 0};  // center; ground plane: center of the quad
  Vec3 size = {0, 0, 0};      // sphere: radius in x; cuboid: half extents;
                              // ground plane: half extents in x and z
  Vec3 albedo = {0.5, 0.5, 0.5};
  bool checker = false;
  double checker_scale = 4.0;
  Vec3 albedo2 = {0.1, 0.1, 0.1};
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;  // 3..8, all inside the unit ball
  Vec3 light_dir = {0, 1, 0};         // unit vector toward the light
  Vec3 background = {0.1, 0.1, 0.1};
};

// Deterministic procedural scene: 3-8 primitives with flat or checkerboard
// albedo, one directional light.
SceneSpec generate_scene(std::uint64_t seed);

// Analytic ray cast, nearest hit, Lambertian max(0, n.L) plus 0.1 ambient,
// background on miss. Output is quantized to the 8-bit grid so renders
// roundtrip losslessly through disk.
Image render_oracle_view(const SceneSpec& scene, const CameraModel& cam, int height, int width);

enum class SampleMode { Object, Scene };

SampleMode parse_sample_mode(const std::string& s);
std::string to_string(SampleMode m);

// Object mode: cameras on a radius-2 sphere looking at the origin.
// Scene mode: cameras along a smooth random arc with small rotations,
// targets interleaved between the inputs. Input and target view sets are
// disjoint.
SceneExample sample_example(const SceneSpec& scene, SampleMode mode, int n_inputs, int m_targets,
                            std::uint64_t seed, int resolution);

// One directory per scene: a cameras.json manifest (per-view intrinsics and
// 3x4 camera-to-world matrix, row-major) plus one image file per view (PPM
// written; PPM or PNG accepted on read).
void write_dataset(std::span<const SceneExample> examples, const std::string& directory);
std::vector<SceneExample> read_dataset(const std::string& directory);

// Manifest + image list for one scene (used by write_dataset and the
// render command's target manifests).
void write_scene_dir(const SceneExample& example, const std::string& scene_dir);
SceneExample read_scene_dir(const std::string& scene_dir);

}  // namespace nvs
