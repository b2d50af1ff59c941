#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "nvs/errors.hpp"

namespace nvs {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;  // row-major

Vec3 operator+(const Vec3& a, const Vec3& b);
Vec3 operator-(const Vec3& a, const Vec3& b);
Vec3 operator*(double s, const Vec3& a);
double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);
Vec3 normalized(const Vec3& a);

Mat3 mat3_identity();
Mat3 matmul3(const Mat3& a, const Mat3& b);
Mat3 transpose3(const Mat3& a);
Vec3 apply3(const Mat3& m, const Vec3& v);

struct CameraIntrinsics {
  double fx = 0, fy = 0;  // focal lengths, pixels
  double cx = 0, cy = 0;  // principal point, pixels
  int width = 0, height = 0;

  void validate() const;
};

// Camera-to-world pose; axes are x-right, y-down, z-forward and translation
// is the camera center in world units.
struct CameraPose {
  Mat3 rotation = mat3_identity();
  Vec3 translation = {0, 0, 0};

  // Orthonormal with determinant +1, tolerance 1e-6.
  void validate() const;

  static CameraPose identity() { return CameraPose{}; }
};

struct CameraModel {
  CameraPose pose;
  CameraIntrinsics intrinsics;
};

// Per-pixel 6-channel ray embedding: channels 0-2 unit direction, 3-5 the
// moment (camera center x direction). Identifies the pixel ray independent
// of any chosen point on it.
struct PluckerMap {
  int height = 0, width = 0;
  std::vector<double> values;  // H*W*6, row-major

  double at(int v, int u, int ch) const {
    return values[(static_cast<std::size_t>(v) * width + u) * 6 + ch];
  }
};

// Ray through the center of pixel (row v, col u): direction in world frame,
// unit length; moment = center x direction.
PluckerMap compute_plucker_map(const CameraPose& pose, const CameraIntrinsics& intr, int height,
                               int width);

// World-frame ray through one pixel center (helper shared with the oracle
// renderer; same pixel convention as compute_plucker_map).
void pixel_ray(const CameraPose& pose, const CameraIntrinsics& intr, double u, double v,
               Vec3& origin_out, Vec3& dir_out);

// Global similarity x -> scale * rotation * x + translation, applied to
// camera poses.
struct SimilarityTransform {
  Mat3 rotation = mat3_identity();
  Vec3 translation = {0, 0, 0};
  double scale = 1.0;

  CameraPose apply(const CameraPose& pose) const;
};

struct NormalizedCameras {
  std::vector<CameraPose> poses;
  SimilarityTransform transform;
};

// Maps all poses by one similarity transform so that poses[reference_index]
// becomes the identity pose and the largest camera-center distance from the
// reference becomes 1 (scaling skipped when all centers coincide).
NormalizedCameras normalize_cameras(const std::vector<CameraPose>& poses,
                                    std::size_t reference_index);

// Deterministic, order-independent reference pick: the camera closest to the
// centroid of all camera centers, ties broken lexicographically on center
// then rotation entries.
std::size_t choose_reference_view(const std::vector<CameraPose>& poses);

}  // namespace nvs
