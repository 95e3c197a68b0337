#pragma once

// Pinhole camera model and view-to-view warping.
//
// Conventions:
//  * camera frame: x right, y down, z forward (optical axis)
//  * `world_to_camera` maps homogeneous world points into the camera frame
//  * pixel (u, v) sits at continuous image coordinate (u, v); no half-pixel shift

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "structnerf/autodiff.hpp"
#include "structnerf/image.hpp"

namespace structnerf {

struct Pixel {
  double u = 0.0;
  double v = 0.0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Eigen::Matrix3d matrix() const;
  /// K^{-1} [u, v, 1]^T, the camera-frame direction with unit z.
  Eigen::Vector3d unproject(const Pixel& p) const { return {(p.u - cx) / fx, (p.v - cy) / fy, 1.0}; }
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// Rigid transform x -> R x + t.
struct Rigid {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static Rigid from_matrix(const Eigen::Matrix4d& m);
  Eigen::Matrix4d matrix() const;
  Rigid inverse() const;
  Rigid operator*(const Rigid& o) const { return {R * o.R, R * o.t + t}; }
  Eigen::Vector3d operator*(const Eigen::Vector3d& x) const { return R * x + t; }
};

struct Camera {
  Intrinsics K;
  Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
  int width = 0;
  int height = 0;

  /// Throws std::invalid_argument unless fx, fy > 0, the size is positive and
  /// the rotation block is orthonormal with det +1 (within 1e-9).
  void validate() const;
  Rigid pose() const { return Rigid::from_matrix(world_to_camera); }
  Eigen::Vector3d center() const;
  bool contains(const Pixel& p) const {
    return p.u >= 0.0 && p.v >= 0.0 && p.u <= width - 1 && p.v <= height - 1;
  }
};

class PointBehindCamera : public std::runtime_error {
 public:
  PointBehindCamera() : std::runtime_error("point lies behind the camera") {}
};

/// depth * K^{-1} [u, v, 1]^T. Throws std::invalid_argument if depth <= 0.
Eigen::Vector3d back_project(const Pixel& p, double depth, const Intrinsics& K);

/// Perspective divide followed by K. Throws PointBehindCamera if z <= 0.
Pixel project(const Eigen::Vector3d& point, const Intrinsics& K);

struct WarpedPixel {
  Pixel pixel;
  bool in_bounds = false;
};

/// p^{t->s} = K M_s M_t^{-1} (depth * K^{-1} p). `source` supplies the image
/// rectangle for the bounds flag. Throws PointBehindCamera when the point lands
/// behind the source camera and std::invalid_argument for depth <= 0.
WarpedPixel warp_point(const Pixel& p, double depth, const Intrinsics& K, const Eigen::Matrix4d& target_world_to_camera,
                       const Eigen::Matrix4d& source_world_to_camera, int width, int height);

/// The 3x3 grid {(u + x, v + y) : x, y in {-N, 0, N}} in row-major order.
std::array<Pixel, 9> support_domain(const Pixel& p, double spacing);

struct SupportPatch {
  Pixel center;
  double spacing = 2.0;
  double depth = 1.0;
  std::array<Pixel, 9> offsets() const { return support_domain(center, spacing); }
};

struct PatchWarp {
  std::array<Pixel, 9> coords{};
  bool valid = false;      // false if any offset landed behind the source camera
  bool in_bounds = false;  // all nine coordinates inside the source image
};

/// Warps all nine offsets with the single centre depth.
PatchWarp warp_patch(const SupportPatch& patch, const Intrinsics& K, const Eigen::Matrix4d& target_world_to_camera,
                     const Eigen::Matrix4d& source_world_to_camera, int width, int height);

struct BilinearSamples {
  std::vector<double> values;  // coords.size() * channels
  std::vector<bool> valid;
};

BilinearSamples bilinear_sample(const Image& image, std::span<const Pixel> coords);

// ------------------------------------------------------------------------
// Generic kernels, shared by the double, tape and training paths.

/// depth * K^{-1} p for a scalar type that may live on a tape.
template <typename T>
std::array<T, 3> back_project_scaled(const Pixel& p, const T& depth, const Intrinsics& K) {
  const Eigen::Vector3d r = K.unproject(p);
  return {depth * r.x(), depth * r.y(), depth};
}

/// Source-view coordinate of a target pixel at `depth`, or nullopt when the
/// transformed point has z <= 0. `target_to_source` is M_s M_t^{-1}.
template <typename T>
std::optional<std::array<T, 2>> warp_pixel(const Pixel& p, const T& depth, const Intrinsics& K,
                                           const Rigid& target_to_source) {
  const Eigen::Vector3d r = K.unproject(p);
  const Eigen::Vector3d a = target_to_source.R * r;  // rotated ray; point = depth * a + t
  const Eigen::Vector3d& t = target_to_source.t;
  const T z = depth * a.z() + t.z();
  if (!(ad::value_of(z) > 0.0)) return std::nullopt;
  const T inv_z = ad::reciprocal(z);
  const T x = depth * a.x() + t.x();
  const T y = depth * a.y() + t.y();
  return std::array<T, 2>{K.fx * (x * inv_z) + K.cx, K.fy * (y * inv_z) + K.cy};
}

/// Bilinear interpolation at a possibly-differentiable coordinate. Returns false
/// (leaving `out` untouched) if a contributing neighbour lies outside the image.
/// The gradient with respect to (u, v) is the local image gradient.
template <typename T>
bool bilinear_at(const Image& image, const T& u, const T& v, T* out) {
  const double uv = ad::value_of(u);
  const double vv = ad::value_of(v);
  if (!(uv >= 0.0) || !(vv >= 0.0)) return false;
  const int x0 = static_cast<int>(std::floor(uv));
  const int y0 = static_cast<int>(std::floor(vv));
  const T fx = u - static_cast<double>(x0);
  const T fy = v - static_cast<double>(y0);
  const bool need_x1 = ad::value_of(fx) != 0.0;
  const bool need_y1 = ad::value_of(fy) != 0.0;
  if (x0 >= image.width || y0 >= image.height) return false;
  if ((need_x1 && x0 + 1 >= image.width) || (need_y1 && y0 + 1 >= image.height)) return false;
  const int x1 = need_x1 ? x0 + 1 : x0;
  const int y1 = need_y1 ? y0 + 1 : y0;
  for (int c = 0; c < image.channels; ++c) {
    const double i00 = image.at(x0, y0, c);
    const double i10 = image.at(x1, y0, c);
    const double i01 = image.at(x0, y1, c);
    const double i11 = image.at(x1, y1, c);
    const T top = i00 + fx * (i10 - i00);
    const T bottom = i01 + fx * (i11 - i01);
    out[c] = top + fy * (bottom - top);
  }
  return true;
}

}  // namespace structnerf
