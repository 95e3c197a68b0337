#pragma once

// COLMAP text-format reconstructions (cameras.txt, images.txt, points3D.txt)
// and reprojection-error confidence weights for sparse keypoints.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "structnerf/camera.hpp"

namespace structnerf {

class SfmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UnsupportedModel : public SfmError {
 public:
  using SfmError::SfmError;
};
class MalformedTrack : public SfmError {
 public:
  using SfmError::SfmError;
};
class MalformedPose : public SfmError {
 public:
  using SfmError::SfmError;
};

struct CameraModel {
  int id = 0;
  std::string model;  // "PINHOLE" or "SIMPLE_PINHOLE"
  int width = 0;
  int height = 0;
  std::vector<double> params;

  Intrinsics intrinsics() const;
  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

struct Keypoint2D {
  Pixel pixel;
  std::int64_t point3d_id = -1;
  friend bool operator==(const Keypoint2D&, const Keypoint2D&) = default;
};

struct SfmImage {
  int id = 0;
  int camera_id = 0;
  std::string name;
  std::array<double, 4> qvec{1.0, 0.0, 0.0, 0.0};  // (qw, qx, qy, qz), world-to-camera
  Eigen::Vector3d tvec = Eigen::Vector3d::Zero();
  std::vector<Keypoint2D> points2d;

  /// 4x4 world-to-camera matrix from the (normalised) quaternion and translation.
  Eigen::Matrix4d world_to_camera() const;
  friend bool operator==(const SfmImage& a, const SfmImage& b) {
    return a.id == b.id && a.camera_id == b.camera_id && a.name == b.name && a.qvec == b.qvec && a.tvec == b.tvec &&
           a.points2d == b.points2d;
  }
};

struct Observation {
  int image_id = 0;
  int point2d_index = 0;
  Pixel keypoint;
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct SparsePoint {
  std::int64_t id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::array<int, 3> color{128, 128, 128};
  double stored_error = 0.0;  // COLMAP's per-point mean error column, kept verbatim
  std::vector<Observation> observations;

  // Derived by SceneBundle::update_weights().
  double error = 0.0;   // e_i: summed reprojection error over observations, pixels
  double weight = 1.0;  // w_i
  bool usable = true;   // false if behind any observing camera

  friend bool operator==(const SparsePoint& a, const SparsePoint& b) {
    return a.id == b.id && a.position == b.position && a.color == b.color && a.stored_error == b.stored_error &&
           a.observations == b.observations;
  }
};

struct SceneBundle {
  std::map<int, CameraModel> cameras;
  std::vector<SfmImage> images;  // ordered by id
  std::vector<SparsePoint> points;
  double mean_error = 0.0;  // mean of e_i over usable points

  const SfmImage& image(int id) const;
  Camera camera_for(const SfmImage& image) const;

  /// Recomputes e_i, usability, mean error and w_i for every point.
  void update_weights();

  friend bool operator==(const SceneBundle& a, const SceneBundle& b) {
    return a.cameras == b.cameras && a.images == b.images && a.points == b.points;
  }
};

/// Parses cameras.txt, images.txt and points3D.txt from `dir` and calls
/// update_weights().
SceneBundle parse_colmap_text(const std::string& dir);

/// Writes the three COLMAP text files into `dir` (created if missing).
void write_colmap_text(const SceneBundle& bundle, const std::string& dir);

struct ReprojectionError {
  double error = 0.0;
  bool behind_camera = false;
};

/// e_i = sum_j || project(M_j x_i, K_j) - keypoint_j ||_2.
ReprojectionError reprojection_error(const SparsePoint& point, const SceneBundle& bundle);

/// exp(-(e / mean)^2); 1 when mean == 0. Throws std::invalid_argument for
/// negative inputs.
double keypoint_weight(double error, double mean_error);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace structnerf
