#include "nvs/geometry.hpp"

#include <cmath>
#include <string>

namespace nvs {

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

Mat3 mat3_identity() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}

Mat3 transpose3(const Mat3& a) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
  return t;
}

Vec3 apply3(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0))
    throw GeometryError("intrinsics: focal lengths must be positive (fx=" + std::to_string(fx) +
                        ", fy=" + std::to_string(fy) + ")");
  if (width < 1 || height < 1) throw GeometryError("intrinsics: image size must be positive");
  if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
    throw GeometryError("intrinsics: principal point must lie inside the image");
}

void CameraPose::validate() const {
  const double tol = 1e-6;
  Mat3 rtr = matmul3(transpose3(rotation), rotation);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double want = i == j ? 1.0 : 0.0;
      if (std::fabs(rtr[i][j] - want) > tol)
        throw GeometryError("pose: rotation is not orthonormal");
    }
  double det = rotation[0][0] * (rotation[1][1] * rotation[2][2] - rotation[1][2] * rotation[2][1]) -
               rotation[0][1] * (rotation[1][0] * rotation[2][2] - rotation[1][2] * rotation[2][0]) +
               rotation[0][2] * (rotation[1][0] * rotation[2][1] - rotation[1][1] * rotation[2][0]);
  if (std::fabs(det - 1.0) > tol) throw GeometryError("pose: rotation determinant must be +1");
}

void pixel_ray(const CameraPose& pose, const CameraIntrinsics& intr, double u, double v,
               Vec3& origin_out, Vec3& dir_out) {
  Vec3 cam_dir = {(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0};
  origin_out = pose.translation;
  dir_out = normalized(apply3(pose.rotation, cam_dir));
}

PluckerMap compute_plucker_map(const CameraPose& pose, const CameraIntrinsics& intr, int height,
                               int width) {
  if (height < 1 || width < 1) throw GeometryError("plucker: image size must be positive");
  pose.validate();
  intr.validate();
  PluckerMap map;
  map.height = height;
  map.width = width;
  map.values.resize(static_cast<std::size_t>(height) * width * 6);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      Vec3 o, d;
      pixel_ray(pose, intr, u + 0.5, v + 0.5, o, d);
      Vec3 m = cross(o, d);
      std::size_t base = (static_cast<std::size_t>(v) * width + u) * 6;
      map.values[base + 0] = d[0];
      map.values[base + 1] = d[1];
      map.values[base + 2] = d[2];
      map.values[base + 3] = m[0];
      map.values[base + 4] = m[1];
      map.values[base + 5] = m[2];
    }
  }
  return map;
}

CameraPose SimilarityTransform::apply(const CameraPose& pose) const {
  CameraPose out;
  out.rotation = matmul3(rotation, pose.rotation);
  out.translation = (scale * apply3(rotation, pose.translation)) + translation;
  return out;
}

NormalizedCameras normalize_cameras(const std::vector<CameraPose>& poses,
                                    std::size_t reference_index) {
  if (poses.empty()) throw GeometryError("normalize_cameras: empty pose list");
  if (reference_index >= poses.size())
    throw GeometryError("normalize_cameras: reference index out of range");
  const CameraPose& ref = poses[reference_index];
  SimilarityTransform t;
  t.rotation = transpose3(ref.rotation);
  double max_dist = 0.0;
  for (const CameraPose& p : poses)
    max_dist = std::max(max_dist, norm(p.translation - ref.translation));
  t.scale = max_dist > 0.0 ? 1.0 / max_dist : 1.0;
  t.translation = (-t.scale) * apply3(t.rotation, ref.translation);
  NormalizedCameras out;
  out.transform = t;
  out.poses.reserve(poses.size());
  for (const CameraPose& p : poses) out.poses.push_back(t.apply(p));
  return out;
}

std::size_t choose_reference_view(const std::vector<CameraPose>& poses) {
  if (poses.empty()) throw GeometryError("choose_reference_view: empty pose list");
  Vec3 centroid = {0, 0, 0};
  for (const CameraPose& p : poses) centroid = centroid + p.translation;
  centroid = (1.0 / static_cast<double>(poses.size())) * centroid;
  std::size_t best = 0;
  auto key = [&](std::size_t i) {
    std::array<double, 13> k{};
    k[0] = norm(poses[i].translation - centroid);
    k[1] = poses[i].translation[0];
    k[2] = poses[i].translation[1];
    k[3] = poses[i].translation[2];
    int idx = 4;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) k[idx++] = poses[i].rotation[r][c];
    return k;
  };
  auto best_key = key(0);
  for (std::size_t i = 1; i < poses.size(); ++i) {
    auto k = key(i);
    if (k < best_key) {
      best_key = k;
      best = i;
    }
  }
  return best;
}

}  // namespace nvs
