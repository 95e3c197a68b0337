#pragma once

// Procedural textured-box rooms with exact ground truth, and the on-disk scene
// directory used by the CLI:
//
//   scene.cfg                      generation config (key = value)
//   cameras.txt images.txt points3D.txt   COLMAP text model
//   views.txt                      "train <name>" / "test <name>" per line
//   images/<name>                  8-bit RGB PNG
//   depth/<stem>.pfm               ground-truth camera-frame z
//   surface/<stem>.pfm             hit face id per pixel

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "structnerf/camera.hpp"
#include "structnerf/image.hpp"
#include "structnerf/sfm.hpp"

namespace structnerf {

class SceneConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TextureKind { kFlat, kChecker, kGradient };

struct WallTexture {
  TextureKind kind = TextureKind::kFlat;
  double scale = 0.5;  // checker square size in world units
  std::array<double, 3> a{0.5, 0.5, 0.5};
  std::array<double, 3> b{0.5, 0.5, 0.5};

  bool textured() const { return kind != TextureKind::kFlat; }
  friend bool operator==(const WallTexture&, const WallTexture&) = default;
};

/// Box faces, indexed as 2 * axis + (0 for the + side, 1 for the - side).
/// World y points down, so +y is the floor and -y the ceiling.
enum Face : int { kPosX = 0, kNegX, kPosY, kNegY, kPosZ, kNegZ };
inline constexpr std::array<const char*, 6> kFaceNames = {"px", "nx", "py", "ny", "pz", "nz"};

struct SceneConfig {
  Eigen::Vector3d extents{4.0, 2.5, 4.0};  // box centred on the origin
  std::array<WallTexture, 6> textures = default_textures();
  int n_cameras = 20;  // training views
  int n_test = 3;      // held-out views interleaved on the same trajectory
  int width = 64;
  int height = 64;
  double fov_deg = 60.0;  // horizontal
  double arc_deg = 180.0;
  double radius = 0.6;  // camera circle radius around the room centre
  int n_points = 200;
  double pixel_noise = 0.5;
  double outlier_fraction = 0.1;
  double outlier_offset = 0.6;  // depth displacement of corrupted points
  double t_near = 0.05;
  double t_far = 0.0;  // 0: farthest box corner from any camera
  std::uint64_t seed = 0;

  static std::array<WallTexture, 6> default_textures();

  /// Throws SceneConfigError.
  void validate() const;
  std::string to_string() const;
  /// Key = value lines, '#' comments. Unknown keys are errors.
  static SceneConfig parse(const std::string& text);
  static SceneConfig load(const std::string& path);
};

struct BoxScene {
  SceneConfig config;
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
  std::vector<Camera> cameras;       // training trajectory order
  std::vector<Camera> test_cameras;  // held-out views
  // COLMAP records for every trajectory pose (training views first), without
  // keypoints. `cameras` are exactly camera_model/images converted back.
  CameraModel camera_model;
  std::vector<SfmImage> images;
  double t_near = 0.05;
  double t_far = 1.0;

  std::array<double, 3> texture_color(int face, const Eigen::Vector3d& point) const;
  bool inside(const Eigen::Vector3d& x) const;
};

/// Deterministic for (config, config.seed). Throws SceneConfigError for bad
/// configs, fewer than 3 training cameras, or a camera outside the box.
BoxScene make_box_scene(const SceneConfig& config);

struct SurfaceHit {
  double depth = 0.0;  // camera-frame z
  double distance = 0.0;
  int face = -1;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  std::array<double, 3> rgb{};
};

/// Exact intersection of the pixel ray (continuous coordinates) with the room.
SurfaceHit trace(const BoxScene& scene, const Camera& camera, const Pixel& p);

struct GroundTruth {
  Image rgb;
  Image depth;    // camera-frame z
  Image surface;  // face id
};

GroundTruth render_ground_truth(const BoxScene& scene, const Camera& camera);

/// Random points on textured faces observed by every trajectory camera that
/// sees them (at least two), keypoints perturbed by Gaussian pixel noise and
/// exactly round(fraction * n) points displaced in depth. Errors and weights
/// are filled in through SceneBundle::update_weights().
SceneBundle make_sparse_points(const BoxScene& scene, int n_points, double pixel_noise, double outlier_fraction,
                               std::uint64_t seed);

/// Ids of the points make_sparse_points corrupted (deterministic for the seed).
std::vector<std::int64_t> outlier_ids(int n_points, double outlier_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct KeypointHit {
  Pixel pixel;
  double z = 0.0;       // camera-frame depth of x_i in this view
  double weight = 1.0;  // w_i
};

struct View {
  std::string name;
  Camera camera;
  Image rgb;
  Image depth;    // ground truth, may be empty
  Image surface;  // ground-truth face ids, may be empty
  std::vector<KeypointHit> keypoints;
};

struct Dataset {
  std::vector<View> train;
  std::vector<View> test;
  SceneBundle bundle;
  double t_near = 0.05;
  double t_far = 1.0;
  std::array<bool, 6> flat_faces{};  // faces with untextured walls
};

/// In-memory dataset identical to write_scene followed by load_dataset
/// (images quantised to 8 bits, depths to float).
Dataset make_dataset(const BoxScene& scene);

void write_scene(const BoxScene& scene, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Keypoints of usable sparse points observed in `image_id`.
std::vector<KeypointHit> collect_keypoints(const SceneBundle& bundle, int image_id);

}  // namespace structnerf
