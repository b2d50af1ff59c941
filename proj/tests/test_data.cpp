#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nvs/data.hpp"
#include "nvs/rng.hpp"

using namespace nvs;
namespace fs = std::filesystem;

namespace {

double farthest_point(const Primitive& p) {
  switch (p.kind) {
    case PrimitiveKind::Sphere:
      return norm(p.position) + p.size[0];
    case PrimitiveKind::Cuboid: {
      double worst = 0;
      for (int corner = 0; corner < 8; ++corner) {
        Vec3 c = p.position;
        for (int a = 0; a < 3; ++a) c[a] += (corner >> a & 1) ? p.size[a] : -p.size[a];
        worst = std::max(worst, norm(c));
      }
      return worst;
    }
    case PrimitiveKind::GroundPlane: {
      double worst = 0;
      for (int sx : {-1, 1})
        for (int sz : {-1, 1}) {
          Vec3 c = {p.position[0] + sx * p.size[0], p.position[1], p.position[2] + sz * p.size[2]};
          worst = std::max(worst, norm(c));
        }
      return worst;
    }
  }
  return 0;
}

CameraModel camera_at(Vec3 center, Vec3 target, int res) {
  // look-at with the same convention the sampler uses
  Vec3 z = normalized(target - center);
  Vec3 x = cross(Vec3{0, -1, 0}, z);
  if (norm(x) < 1e-9) x = {1, 0, 0};
  x = normalized(x);
  Vec3 y = cross(z, x);
  CameraModel cam;
  for (int i = 0; i < 3; ++i) {
    cam.pose.rotation[i][0] = x[i];
    cam.pose.rotation[i][1] = y[i];
    cam.pose.rotation[i][2] = z[i];
  }
  cam.pose.translation = center;
  cam.intrinsics = {0.866 * res, 0.866 * res, res / 2.0, res / 2.0, res, res};
  return cam;
}

}  // namespace

TEST_CASE("equal seeds generate identical scenes") {
  SceneSpec a = generate_scene(123);
  SceneSpec b = generate_scene(123);
  REQUIRE(a.primitives.size() == b.primitives.size());
  for (std::size_t i = 0; i < a.primitives.size(); ++i) {
    CHECK(a.primitives[i].position == b.primitives[i].position);
    CHECK(a.primitives[i].albedo == b.primitives[i].albedo);
    CHECK(a.primitives[i].kind == b.primitives[i].kind);
  }
  CHECK(a.light_dir == b.light_dir);
  CHECK(a.background == b.background);
}

TEST_CASE("every primitive of a thousand scenes stays inside the unit ball") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SceneSpec scene = generate_scene(seed);
    CHECK(scene.primitives.size() >= 3);
    CHECK(scene.primitives.size() <= 8);
    for (const Primitive& p : scene.primitives) CHECK(farthest_point(p) <= 1.0 + 1e-9);
  }
}

TEST_CASE("different seeds give different scenes") {
  int distinct = 0;
  SceneSpec first = generate_scene(1);
  for (std::uint64_t seed = 2; seed < 50; ++seed) {
    SceneSpec other = generate_scene(seed);
    if (other.primitives.size() != first.primitives.size() ||
        other.primitives[0].position != first.primitives[0].position)
      ++distinct;
  }
  CHECK(distinct >= 45);
}

TEST_CASE("empty scene renders the background everywhere") {
  SceneSpec scene;
  scene.background = {0.2, 0.4, 0.6};
  Image img = render_oracle_view(scene, camera_at({0, 0, 2}, {0, 0, 0}, 16), 16, 16);
  for (int v = 0; v < 16; ++v)
    for (int u = 0; u < 16; ++u) {
      CHECK(img.at(v, u, 0) == doctest::Approx(from_u8(to_u8(0.2f))));
      CHECK(img.at(v, u, 2) == doctest::Approx(from_u8(to_u8(0.6f))));
    }
}

TEST_CASE("a centered sphere covers the center pixel and not the corners") {
  SceneSpec scene;
  scene.background = {0.0, 0.0, 0.1};
  scene.light_dir = {0, 1, 0};
  Primitive sphere;
  sphere.kind = PrimitiveKind::Sphere;
  sphere.size = {0.5, 0.5, 0.5};
  sphere.albedo = {0.9, 0.1, 0.1};
  scene.primitives.push_back(sphere);
  Image img = render_oracle_view(scene, camera_at({0, 0, 2}, {0, 0, 0}, 32), 32, 32);
  CHECK(img.at(16, 16, 0) > 0.05f);  // sphere (red-ish, at least ambient)
  CHECK(img.at(16, 16, 2) < 0.05f);
  CHECK(img.at(0, 0, 2) == doctest::Approx(from_u8(to_u8(0.1f))));    // background
  CHECK(img.at(31, 31, 2) == doctest::Approx(from_u8(to_u8(0.1f))));
}

TEST_CASE("mirror-symmetric scenes render to mirrored images") {
  SceneSpec scene;
  scene.background = {0.05, 0.05, 0.05};
  scene.light_dir = {0, 1, 0};  // symmetric under x -> -x
  Primitive s1;
  s1.kind = PrimitiveKind::Sphere;
  s1.position = {0, 0.1, 0};
  s1.size = {0.4, 0.4, 0.4};
  s1.albedo = {0.8, 0.6, 0.2};
  scene.primitives.push_back(s1);
  Primitive box;
  box.kind = PrimitiveKind::Cuboid;
  box.position = {0, -0.4, 0};
  box.size = {0.5, 0.1, 0.5};
  box.albedo = {0.3, 0.5, 0.7};
  scene.primitives.push_back(box);

  int res = 24;
  CameraModel a = camera_at({0.9, 0.4, 1.6}, {0, 0, 0}, res);
  Image ia = render_oracle_view(scene, a, res, res);

  // mirrored camera: M R F with M = diag(-1,1,1) mirroring the world and
  // F = diag(-1,1,1) flipping the camera x axis to stay right-handed
  CameraModel b = a;
  b.pose.translation[0] = -a.pose.translation[0];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double sign = 1.0;
      if (i == 0) sign = -sign;
      if (j == 0) sign = -sign;
      b.pose.rotation[i][j] = sign * a.pose.rotation[i][j];
    }
  Image ib = render_oracle_view(scene, b, res, res);
  for (int v = 0; v < res; ++v)
    for (int u = 0; u < res; ++u)
      for (int c = 0; c < 3; ++c) CHECK(ia.at(v, u, c) == ib.at(v, res - 1 - u, c));
}

TEST_CASE("rendering is a pure function") {
  SceneSpec scene = generate_scene(44);
  CameraModel cam = camera_at({1.2, 0.5, 1.4}, {0, 0, 0}, 16);
  Image a = render_oracle_view(scene, cam, 16, 16);
  Image b = render_oracle_view(scene, cam, 16, 16);
  CHECK(a.data == b.data);
}

TEST_CASE("object mode puts every camera on the radius-2 sphere") {
  SceneSpec scene = generate_scene(7);
  SceneExample ex = sample_example(scene, SampleMode::Object, 4, 8, 7, 16);
  CHECK(ex.inputs.size() == 4);
  CHECK(ex.targets.size() == 8);
  for (const View& v : ex.inputs) CHECK(std::fabs(norm(v.camera.pose.translation) - 2.0) < 1e-6);
  for (const View& v : ex.targets) CHECK(std::fabs(norm(v.camera.pose.translation) - 2.0) < 1e-6);
}

TEST_CASE("input and target view sets are disjoint") {
  SceneSpec scene = generate_scene(8);
  for (SampleMode mode : {SampleMode::Object, SampleMode::Scene}) {
    SceneExample ex = sample_example(scene, mode, 3, 5, 9, 8);
    for (const View& in : ex.inputs)
      for (const View& t : ex.targets)
        CHECK(norm(in.camera.pose.translation - t.camera.pose.translation) > 1e-9);
  }
}

TEST_CASE("scene mode cameras lie on a smooth arc") {
  SceneSpec scene = generate_scene(9);
  SceneExample ex = sample_example(scene, SampleMode::Scene, 2, 6, 10, 8);
  CHECK(ex.inputs.size() == 2);
  CHECK(ex.targets.size() == 6);
  // consecutive cameras stay close (small motions), all at similar height
  double arc_height = ex.inputs[0].camera.pose.translation[1];
  for (const View& v : ex.targets)
    CHECK(std::fabs(v.camera.pose.translation[1] - arc_height) < 1e-9);
}

TEST_CASE("dataset roundtrips through disk") {
  SceneSpec scene = generate_scene(10);
  std::vector<SceneExample> examples = {sample_example(scene, SampleMode::Object, 2, 3, 11, 16),
                                        sample_example(scene, SampleMode::Scene, 2, 2, 12, 16)};
  std::string dir = (fs::temp_directory_path() / "nvs_dataset_rt").string();
  fs::remove_all(dir);
  write_dataset(examples, dir);
  std::vector<SceneExample> back = read_dataset(dir);
  REQUIRE(back.size() == examples.size());
  for (std::size_t s = 0; s < examples.size(); ++s) {
    REQUIRE(back[s].inputs.size() == examples[s].inputs.size());
    REQUIRE(back[s].targets.size() == examples[s].targets.size());
    for (std::size_t i = 0; i < examples[s].inputs.size(); ++i) {
      CHECK(back[s].inputs[i].image.data == examples[s].inputs[i].image.data);  // bit-exact
      const CameraModel& want = examples[s].inputs[i].camera;
      const CameraModel& got = back[s].inputs[i].camera;
      CHECK(std::fabs(want.intrinsics.fx - got.intrinsics.fx) < 1e-7);
      for (int r = 0; r < 3; ++r) {
        CHECK(std::fabs(want.pose.translation[r] - got.pose.translation[r]) < 1e-7);
        for (int c = 0; c < 3; ++c)
          CHECK(std::fabs(want.pose.rotation[r][c] - got.pose.rotation[r][c]) < 1e-7);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("a hand-written minimal manifest parses to the expected camera") {
  std::string dir = (fs::temp_directory_path() / "nvs_manifest_fixture").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  Image img(4, 4, 3);
  for (auto& v : img.data) v = 0.5f;
  write_ppm(dir + "/view.ppm", img);
  std::ofstream manifest(dir + "/cameras.json");
  manifest << R"({"views": [{"role": "input", "image": "view.ppm",
    "fx": 10.0, "fy": 11.0, "cx": 2.0, "cy": 2.0, "width": 4, "height": 4,
    "c2w": [[1,0,0,0.5],[0,1,0,-0.25],[0,0,1,2.0]]}]})";
  manifest.close();
  SceneExample ex = read_scene_dir(dir);
  REQUIRE(ex.inputs.size() == 1);
  CHECK(ex.targets.empty());
  CHECK(ex.inputs[0].camera.intrinsics.fx == 10.0);
  CHECK(ex.inputs[0].camera.intrinsics.fy == 11.0);
  CHECK(ex.inputs[0].camera.pose.translation[0] == 0.5);
  CHECK(ex.inputs[0].camera.pose.translation[1] == -0.25);
  CHECK(ex.inputs[0].camera.pose.translation[2] == 2.0);
  CHECK(ex.inputs[0].image.height == 4);
  fs::remove_all(dir);
}

TEST_CASE("a malformed manifest reports file and line") {
  std::string dir = (fs::temp_directory_path() / "nvs_manifest_bad").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/cameras.json");
  manifest << "{\n  \"views\": [\n    {broken\n  ]\n}\n";
  manifest.close();
  try {
    read_scene_dir(dir);
    CHECK(false);
  } catch (const ParseError& e) {
    std::string what = e.what();
    CHECK(what.find("cameras.json") != std::string::npos);
    CHECK(what.find(":3") != std::string::npos);  // line of the bad token
  }
  fs::remove_all(dir);
}

TEST_CASE("a truncated image file raises an io error naming the file") {
  std::string dir = (fs::temp_directory_path() / "nvs_truncated").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  Image img(8, 8, 3);
  write_ppm(dir + "/view.ppm", img);
  // cut the payload short
  auto size = fs::file_size(dir + "/view.ppm");
  fs::resize_file(dir + "/view.ppm", size - 20);
  try {
    read_ppm(dir + "/view.ppm");
    CHECK(false);
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("view.ppm") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("png images roundtrip and are accepted by the dataset reader") {
  Rng rng(91);
  Image img(12, 10, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(0, 1));
  quantize_u8(img);
  std::string dir = (fs::temp_directory_path() / "nvs_png").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_png(dir + "/img.png", img);
  Image back = read_png(dir + "/img.png");
  CHECK(back.data == img.data);
  CHECK(read_image(dir + "/img.png").data == img.data);

  // a manifest that points at the png
  std::ofstream manifest(dir + "/cameras.json");
  manifest << R"({"views": [{"role": "input", "image": "img.png",
    "fx": 10.0, "fy": 10.0, "cx": 5.0, "cy": 6.0, "width": 10, "height": 12,
    "c2w": [[1,0,0,0],[0,1,0,0],[0,0,1,0]]}]})";
  manifest.close();
  SceneExample ex = read_scene_dir(dir);
  CHECK(ex.inputs[0].image.data == img.data);
  fs::remove_all(dir);
}

TEST_CASE("missing image files raise io errors") {
  std::string dir = (fs::temp_directory_path() / "nvs_missing_img").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/cameras.json");
  manifest << R"({"views": [{"role": "input", "image": "gone.ppm",
    "fx": 10.0, "fy": 10.0, "cx": 2.0, "cy": 2.0, "width": 4, "height": 4,
    "c2w": [[1,0,0,0],[0,1,0,0],[0,0,1,0]]}]})";
  manifest.close();
  CHECK_THROWS_AS(read_scene_dir(dir), IoError);
  fs::remove_all(dir);
}
