#include "structnerf/scene.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "structnerf/random.hpp"

namespace structnerf {
namespace {

constexpr double kPi = 3.14159265358979323846;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<double> numbers(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  std::vector<double> out;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw SceneConfigError("scene config: bad number '" + token + "' for " + key);
    }
  }
  return out;
}

double one(const std::string& key, const std::string& value) {
  const auto v = numbers(key, value);
  if (v.size() != 1) throw SceneConfigError("scene config: " + key + " expects one value");
  return v[0];
}

std::string texture_to_string(const WallTexture& t) {
  std::ostringstream out;
  switch (t.kind) {
    case TextureKind::kFlat:
      out << "flat";
      break;
    case TextureKind::kChecker:
      out << "checker " << format_double(t.scale);
      break;
    case TextureKind::kGradient:
      out << "gradient";
      break;
  }
  for (double v : t.a) out << ' ' << format_double(v);
  if (t.kind != TextureKind::kFlat)
    for (double v : t.b) out << ' ' << format_double(v);
  return out.str();
}

WallTexture parse_texture(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  std::string kind;
  in >> kind;
  std::string rest;
  std::getline(in, rest);
  const auto v = numbers(key, rest);
  WallTexture t;
  auto rgb = [&](std::size_t at) { return std::array<double, 3>{v[at], v[at + 1], v[at + 2]}; };
  if (kind == "flat" && v.size() == 3) {
    t.kind = TextureKind::kFlat;
    t.a = t.b = rgb(0);
  } else if (kind == "checker" && v.size() == 7) {
    t.kind = TextureKind::kChecker;
    t.scale = v[0];
    t.a = rgb(1);
    t.b = rgb(4);
  } else if (kind == "gradient" && v.size() == 6) {
    t.kind = TextureKind::kGradient;
    t.a = rgb(0);
    t.b = rgb(3);
  } else {
    throw SceneConfigError("scene config: bad texture '" + value + "' for " + key +
                           " (flat r g b | checker scale r g b r g b | gradient r g b r g b)");
  }
  return t;
}

SfmImage pose_record(int id, const std::string& name, const Eigen::Matrix3d& R, const Eigen::Vector3d& center) {
  Eigen::Quaterniond q(R);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  q.normalize();
  SfmImage im;
  im.id = id;
  im.camera_id = 1;
  im.name = name;
  im.qvec = {q.w(), q.x(), q.y(), q.z()};
  // Translation from the rotation actually stored, so the centre is exact.
  const Eigen::Matrix3d Rq = im.world_to_camera().topLeftCorner<3, 3>();
  im.tvec = -(Rq * center);
  return im;
}

std::string stem(const std::string& name) { return std::filesystem::path(name).stem().string(); }

Image quantize_rgb(const Image& rgb) {
  Image out = rgb;
  for (double& v : out.data) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
  return out;
}

Image quantize_float(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace

std::array<WallTexture, 6> SceneConfig::default_textures() {
  std::array<WallTexture, 6> t;
  t[kPosX] = {TextureKind::kChecker, 0.4, {0.85, 0.30, 0.25}, {0.95, 0.85, 0.60}};
  t[kNegX] = {TextureKind::kChecker, 0.35, {0.30, 0.35, 0.60}, {0.80, 0.85, 0.90}};
  t[kPosY] = {TextureKind::kChecker, 0.5, {0.35, 0.30, 0.25}, {0.75, 0.70, 0.60}};
  t[kNegY] = {TextureKind::kFlat, 0.5, {0.92, 0.92, 0.88}, {0.92, 0.92, 0.88}};
  // The far wall of the arc stays textureless so test views look at it.
  t[kPosZ] = {TextureKind::kFlat, 0.5, {0.55, 0.70, 0.85}, {0.55, 0.70, 0.85}};
  t[kNegZ] = {TextureKind::kGradient, 0.5, {0.20, 0.50, 0.30}, {0.80, 0.80, 0.30}};
  return t;
}

void SceneConfig::validate() const {
  if (!(extents.minCoeff() > 0.0)) throw SceneConfigError("scene config: extents must be positive");
  if (n_cameras < 3) throw SceneConfigError("scene config: at least 3 training cameras are required for source views");
  if (n_test < 0) throw SceneConfigError("scene config: n_test must be non-negative");
  if (width < 8 || height < 8) throw SceneConfigError("scene config: resolution must be at least 8x8");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw SceneConfigError("scene config: fov must lie in (0, 180)");
  if (!(radius >= 0.0)) throw SceneConfigError("scene config: radius must be non-negative");
  if (n_points < 0) throw SceneConfigError("scene config: n_points must be non-negative");
  if (!(pixel_noise >= 0.0)) throw SceneConfigError("scene config: pixel_noise must be non-negative");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0))
    throw SceneConfigError("scene config: outlier_fraction must lie in [0, 1]");
  if (!(t_near > 0.0) || t_far < 0.0 || (t_far > 0.0 && t_far <= t_near))
    throw SceneConfigError("scene config: need 0 < near < far (far = 0 for automatic)");
  for (const auto& t : textures)
    if (t.kind == TextureKind::kChecker && !(t.scale > 0.0))
      throw SceneConfigError("scene config: checker scale must be positive");
}

std::string SceneConfig::to_string() const {
  std::ostringstream out;
  out << "extents = " << format_double(extents.x()) << ' ' << format_double(extents.y()) << ' '
      << format_double(extents.z()) << '\n'
      << "resolution = " << width << ' ' << height << '\n'
      << "fov = " << format_double(fov_deg) << '\n'
      << "n_cameras = " << n_cameras << '\n'
      << "n_test = " << n_test << '\n'
      << "arc = " << format_double(arc_deg) << '\n'
      << "radius = " << format_double(radius) << '\n'
      << "n_points = " << n_points << '\n'
      << "pixel_noise = " << format_double(pixel_noise) << '\n'
      << "outlier_fraction = " << format_double(outlier_fraction) << '\n'
      << "outlier_offset = " << format_double(outlier_offset) << '\n'
      << "near = " << format_double(t_near) << '\n'
      << "far = " << format_double(t_far) << '\n'
      << "seed = " << seed << '\n';
  for (int f = 0; f < 6; ++f) out << "texture." << kFaceNames[f] << " = " << texture_to_string(textures[f]) << '\n';
  return out.str();
}

SceneConfig SceneConfig::parse(const std::string& text) {
  SceneConfig c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw SceneConfigError("scene config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    auto integer = [&] {
      const double v = one(key, value);
      if (v != std::floor(v)) throw SceneConfigError("scene config: " + key + " must be an integer");
      return static_cast<long long>(v);
    };
    if (key == "extents") {
      const auto v = numbers(key, value);
      if (v.size() != 3) throw SceneConfigError("scene config: extents expects 3 values");
      c.extents = {v[0], v[1], v[2]};
    } else if (key == "resolution") {
      const auto v = numbers(key, value);
      if (v.size() != 2) throw SceneConfigError("scene config: resolution expects width height");
      c.width = static_cast<int>(v[0]);
      c.height = static_cast<int>(v[1]);
    } else if (key == "fov") {
      c.fov_deg = one(key, value);
    } else if (key == "n_cameras") {
      c.n_cameras = static_cast<int>(integer());
    } else if (key == "n_test") {
      c.n_test = static_cast<int>(integer());
    } else if (key == "arc") {
      c.arc_deg = one(key, value);
    } else if (key == "radius") {
      c.radius = one(key, value);
    } else if (key == "n_points") {
      c.n_points = static_cast<int>(integer());
    } else if (key == "pixel_noise") {
      c.pixel_noise = one(key, value);
    } else if (key == "outlier_fraction") {
      c.outlier_fraction = one(key, value);
    } else if (key == "outlier_offset") {
      c.outlier_offset = one(key, value);
    } else if (key == "near") {
      c.t_near = one(key, value);
    } else if (key == "far") {
      c.t_far = one(key, value);
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(integer());
    } else if (key.rfind("texture.", 0) == 0) {
      const std::string face = key.substr(8);
      const auto it = std::find(kFaceNames.begin(), kFaceNames.end(), face);
      if (it == kFaceNames.end()) throw SceneConfigError("scene config: unknown face '" + face + "'");
      c.textures[it - kFaceNames.begin()] = parse_texture(key, value);
    } else {
      throw SceneConfigError("scene config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

SceneConfig SceneConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SceneConfigError("cannot open scene config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool BoxScene::inside(const Eigen::Vector3d& x) const {
  return (x.array() > lo.array()).all() && (x.array() < hi.array()).all();
}

std::array<double, 3> BoxScene::texture_color(int face, const Eigen::Vector3d& point) const {
  const WallTexture& t = config.textures[face];
  const int axis = face / 2;
  const int ua = axis == 0 ? 1 : 0;
  const int va = axis == 2 ? 1 : 2;
  switch (t.kind) {
    case TextureKind::kFlat:
      return t.a;
    case TextureKind::kChecker: {
      const auto cu = static_cast<long>(std::floor((point[ua] - lo[ua]) / t.scale));
      const auto cv = static_cast<long>(std::floor((point[va] - lo[va]) / t.scale));
      return ((cu + cv) & 1) ? t.b : t.a;
    }
    case TextureKind::kGradient: {
      const double s = std::clamp((point[ua] - lo[ua]) / (hi[ua] - lo[ua]), 0.0, 1.0);
      return {t.a[0] + (t.b[0] - t.a[0]) * s, t.a[1] + (t.b[1] - t.a[1]) * s, t.a[2] + (t.b[2] - t.a[2]) * s};
    }
  }
  return t.a;
}

BoxScene make_box_scene(const SceneConfig& config) {
  config.validate();
  BoxScene scene;
  scene.config = config;
  scene.hi = config.extents * 0.5;
  scene.lo = -scene.hi;

  Rng rng(stream_seed(config.seed, static_cast<std::uint64_t>(Stream::kScene), 0));
  const int total = config.n_cameras + config.n_test;
  std::vector<bool> is_test(total, false);
  for (int k = 0; k < config.n_test; ++k)
    is_test[static_cast<int>((k + 1) * static_cast<double>(total) / (config.n_test + 1))] = true;

  const double f = 0.5 * config.width / std::tan(0.5 * config.fov_deg * kPi / 180.0);
  scene.camera_model.id = 1;
  scene.camera_model.model = "PINHOLE";
  scene.camera_model.width = config.width;
  scene.camera_model.height = config.height;
  scene.camera_model.params = {f, f, 0.5 * (config.width - 1), 0.5 * (config.height - 1)};

  const double deg = kPi / 180.0;
  const double theta0 = (-45.0 + rng.uniform(-10.0, 10.0)) * deg;
  std::vector<SfmImage> train_images, test_images;
  for (int i = 0; i < total; ++i) {
    const double step = total > 1 ? config.arc_deg * i / (total - 1) : 0.0;
    const double theta = theta0 + step * deg;
    const double yaw = theta + rng.uniform(-3.0, 3.0) * deg;
    const double pitch = rng.uniform(-5.0, 5.0) * deg;
    const double height = rng.uniform(-0.1, 0.1);
    const Eigen::Vector3d center(config.radius * std::cos(theta), height, config.radius * std::sin(theta));
    const Eigen::Vector3d forward(std::cos(pitch) * std::cos(yaw), -std::sin(pitch), std::cos(pitch) * std::sin(yaw));
    const Eigen::Vector3d right = Eigen::Vector3d::UnitY().cross(forward).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d R;
    R.row(0) = right;
    R.row(1) = down;
    R.row(2) = forward;
    if (!scene.inside(center)) throw SceneConfigError("scene config: camera " + std::to_string(i) + " lies outside the box");
    auto& list = is_test[i] ? test_images : train_images;
    char name[32];
    std::snprintf(name, sizeof(name), "%s_%03zu.png", is_test[i] ? "test" : "train", list.size());
    list.push_back(pose_record(0, name, R, center));
  }
  int id = 1;
  for (auto* list : {&train_images, &test_images})
    for (auto& im : *list) {
      im.id = id++;
      scene.images.push_back(im);
    }

  SceneBundle poses;
  poses.cameras[1] = scene.camera_model;
  for (const auto& im : scene.images) {
    Camera cam = poses.camera_for(im);
    cam.validate();
    (im.name.rfind("test", 0) == 0 ? scene.test_cameras : scene.cameras).push_back(cam);
  }

  scene.t_near = config.t_near;
  if (config.t_far > 0.0) {
    scene.t_far = config.t_far;
  } else {
    double far = 0.0;
    for (const auto* list : {&scene.cameras, &scene.test_cameras})
      for (const Camera& cam : *list)
        for (int corner = 0; corner < 8; ++corner) {
          const Eigen::Vector3d c((corner & 1) ? scene.hi.x() : scene.lo.x(), (corner & 2) ? scene.hi.y() : scene.lo.y(),
                                  (corner & 4) ? scene.hi.z() : scene.lo.z());
          far = std::max(far, (c - cam.center()).norm());
        }
    scene.t_far = far;
  }
  return scene;
}

SurfaceHit trace(const BoxScene& scene, const Camera& camera, const Pixel& p) {
  const Rigid pose = camera.pose();
  const Eigen::Vector3d origin = camera.center();
  const Eigen::Vector3d d = pose.R.transpose() * camera.K.unproject(p);  // camera z component is 1
  SurfaceHit hit;
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) continue;
    const bool positive = d[a] > 0.0;
    const double t = ((positive ? scene.hi[a] : scene.lo[a]) - origin[a]) / d[a];
    if (t < best) {
      best = t;
      hit.face = 2 * a + (positive ? 0 : 1);
    }
  }
  hit.depth = best;
  hit.distance = best * d.norm();
  hit.point = origin + best * d;
  const int axis = hit.face / 2;
  hit.point[axis] = (hit.face % 2 == 0) ? scene.hi[axis] : scene.lo[axis];
  hit.rgb = scene.texture_color(hit.face, hit.point);
  return hit;
}

GroundTruth render_ground_truth(const BoxScene& scene, const Camera& camera) {
  GroundTruth gt{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1),
                 Image(camera.width, camera.height, 1)};
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      const SurfaceHit hit = trace(scene, camera, {static_cast<double>(x), static_cast<double>(y)});
      for (int c = 0; c < 3; ++c) gt.rgb.at(x, y, c) = hit.rgb[c];
      gt.depth.at(x, y) = hit.depth;
      gt.surface.at(x, y) = hit.face;
    }
  return gt;
}

std::vector<std::int64_t> outlier_ids(int n_points, double outlier_fraction, std::uint64_t seed) {
  const auto count = static_cast<std::size_t>(std::llround(outlier_fraction * n_points));
  std::vector<std::int64_t> ids(n_points);
  std::iota(ids.begin(), ids.end(), std::int64_t{1});
  Rng rng(stream_seed(seed, static_cast<std::uint64_t>(Stream::kSparse), 1));
  for (std::size_t i = 0; i < count && i + 1 < ids.size(); ++i)
    std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
  ids.resize(std::min(count, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

SceneBundle make_sparse_points(const BoxScene& scene, int n_points, double pixel_noise, double outlier_fraction,
                               std::uint64_t seed) {
  if (n_points < 1) throw std::invalid_argument("make_sparse_points: n_points must be at least 1");
  SceneBundle bundle;
  bundle.cameras[1] = scene.camera_model;
  bundle.images = scene.images;
  for (auto& im : bundle.images) im.points2d.clear();
  std::vector<Camera> cams;
  for (const auto& im : bundle.images) cams.push_back(bundle.camera_for(im));

  std::vector<int> faces;
  std::vector<double> area;
  const Eigen::Vector3d size = scene.hi - scene.lo;
  for (int f = 0; f < 6; ++f) {
    if (!scene.config.textures[f].textured()) continue;
    const int a = f / 2;
    faces.push_back(f);
    area.push_back(size[(a + 1) % 3] * size[(a + 2) % 3]);
  }
  if (faces.empty())
    for (int f = 0; f < 6; ++f) {
      faces.push_back(f);
      const int a = f / 2;
      area.push_back(size[(a + 1) % 3] * size[(a + 2) % 3]);
    }
  const double total_area = std::accumulate(area.begin(), area.end(), 0.0);

  const std::vector<std::int64_t> outliers = outlier_ids(n_points, outlier_fraction, seed);
  Rng rng(stream_seed(seed, static_cast<std::uint64_t>(Stream::kSparse), 0));
  const double w = scene.camera_model.width - 1;
  const double h = scene.camera_model.height - 1;

  for (int n = 0; n < n_points; ++n) {
    SparsePoint point;
    point.id = n + 1;
    Eigen::Vector3d x;
    int face = 0;
    std::vector<std::pair<int, Pixel>> seen;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::runtime_error("make_sparse_points: no surface point seen by two cameras");
      double pick = rng.uniform() * total_area;
      std::size_t k = 0;
      while (k + 1 < faces.size() && pick >= area[k]) pick -= area[k++];
      face = faces[k];
      const int axis = face / 2;
      for (int a = 0; a < 3; ++a) x[a] = rng.uniform(scene.lo[a], scene.hi[a]);
      x[axis] = face % 2 == 0 ? scene.hi[axis] : scene.lo[axis];
      seen.clear();
      for (std::size_t c = 0; c < cams.size(); ++c) {
        const Eigen::Vector3d pc = cams[c].pose() * x;
        if (!(pc.z() > 0.0)) continue;
        const Pixel p = project(pc, cams[c].K);
        if (p.u >= 0.0 && p.v >= 0.0 && p.u <= w && p.v <= h) seen.emplace_back(static_cast<int>(c), p);
      }
      if (seen.size() >= 2) break;
    }
    const auto rgb = scene.texture_color(face, x);
    for (int c = 0; c < 3; ++c) point.color[c] = static_cast<int>(std::lround(rgb[c] * 255.0));

    for (auto& [c, p] : seen) {
      if (pixel_noise > 0.0) {
        p.u += pixel_noise * rng.normal();
        p.v += pixel_noise * rng.normal();
      }
      SfmImage& im = bundle.images[c];
      point.observations.push_back({im.id, static_cast<int>(im.points2d.size()), p});
      im.points2d.push_back({p, point.id});
    }

    if (std::binary_search(outliers.begin(), outliers.end(), point.id)) {
      const Eigen::Vector3d ray = (x - cams[seen.front().first].center()).normalized();
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      x += sign * scene.config.outlier_offset * rng.uniform(0.5, 1.0) * ray;
    }
    point.position = x;
    bundle.points.push_back(std::move(point));
  }
  bundle.update_weights();
  for (auto& p : bundle.points) p.stored_error = p.error / static_cast<double>(p.observations.size());
  return bundle;
}

std::vector<KeypointHit> collect_keypoints(const SceneBundle& bundle, int image_id) {
  const SfmImage& im = bundle.image(image_id);
  const Camera cam = bundle.camera_for(im);
  const Rigid pose = cam.pose();
  std::vector<KeypointHit> out;
  for (const auto& p : bundle.points) {
    if (!p.usable) continue;
    for (const auto& obs : p.observations)
      if (obs.image_id == image_id) out.push_back({obs.keypoint, (pose * p.position).z(), p.weight});
  }
  return out;
}

namespace {

Dataset assemble(const SceneConfig& config, double t_near, double t_far, SceneBundle bundle,
                 const std::vector<std::pair<std::string, std::string>>& split,
                 const std::function<void(View&)>& load_images) {
  Dataset ds;
  ds.t_near = t_near;
  ds.t_far = t_far;
  for (int f = 0; f < 6; ++f) ds.flat_faces[f] = !config.textures[f].textured();
  ds.bundle = std::move(bundle);
  for (const auto& [role, name] : split) {
    const auto it = std::find_if(ds.bundle.images.begin(), ds.bundle.images.end(),
                                 [&](const SfmImage& im) { return im.name == name; });
    if (it == ds.bundle.images.end()) throw SceneConfigError("views.txt names unknown image " + name);
    View v;
    v.name = name;
    v.camera = ds.bundle.camera_for(*it);
    load_images(v);
    if (role == "train") {
      v.keypoints = collect_keypoints(ds.bundle, it->id);
      ds.train.push_back(std::move(v));
    } else if (role == "test") {
      ds.test.push_back(std::move(v));
    } else {
      throw SceneConfigError("views.txt: unknown role '" + role + "'");
    }
  }
  if (ds.train.empty()) throw SceneConfigError("scene has no training views");
  return ds;
}

std::vector<std::pair<std::string, std::string>> split_of(const BoxScene& scene) {
  std::vector<std::pair<std::string, std::string>> split;
  for (const auto& im : scene.images) split.emplace_back(im.name.rfind("test", 0) == 0 ? "test" : "train", im.name);
  return split;
}

SceneConfig resolved_config(const BoxScene& scene) {
  SceneConfig c = scene.config;
  c.t_near = scene.t_near;
  c.t_far = scene.t_far;
  return c;
}

}  // namespace

Dataset make_dataset(const BoxScene& scene) {
  const SceneConfig& c = scene.config;
  SceneBundle bundle = make_sparse_points(scene, std::max(c.n_points, 1), c.pixel_noise, c.outlier_fraction, c.seed);
  if (c.n_points == 0) bundle.points.clear();
  return assemble(resolved_config(scene), scene.t_near, scene.t_far, std::move(bundle), split_of(scene), [&](View& v) {
    const GroundTruth gt = render_ground_truth(scene, v.camera);
    v.rgb = quantize_rgb(gt.rgb);
    v.depth = quantize_float(gt.depth);
    v.surface = quantize_float(gt.surface);
  });
}

void write_scene(const BoxScene& scene, const std::string& dir) {
  namespace fs = std::filesystem;
  const SceneConfig& c = scene.config;
  SceneBundle bundle = make_sparse_points(scene, std::max(c.n_points, 1), c.pixel_noise, c.outlier_fraction, c.seed);
  if (c.n_points == 0) bundle.points.clear();
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depth");
  fs::create_directories(fs::path(dir) / "surface");
  {
    std::ofstream out(fs::path(dir) / "scene.cfg", std::ios::binary);
    out << resolved_config(scene).to_string();
  }
  write_colmap_text(bundle, dir);
  std::ofstream views(fs::path(dir) / "views.txt", std::ios::binary);
  for (const auto& [role, name] : split_of(scene)) {
    views << role << ' ' << name << '\n';
    const auto& im = *std::find_if(bundle.images.begin(), bundle.images.end(),
                                   [&](const SfmImage& i) { return i.name == name; });
    const GroundTruth gt = render_ground_truth(scene, bundle.camera_for(im));
    write_png_rgb((fs::path(dir) / "images" / name).string(), gt.rgb);
    write_pfm((fs::path(dir) / "depth" / (stem(name) + ".pfm")).string(), gt.depth);
    write_pfm((fs::path(dir) / "surface" / (stem(name) + ".pfm")).string(), gt.surface);
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const SceneConfig config = SceneConfig::load((fs::path(dir) / "scene.cfg").string());
  SceneBundle bundle = parse_colmap_text(dir);
  std::vector<std::pair<std::string, std::string>> split;
  {
    std::ifstream in(fs::path(dir) / "views.txt");
    if (!in) throw SceneConfigError("cannot open " + (fs::path(dir) / "views.txt").string());
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(trim(line));
      std::string role, name;
      if (!(ls >> role >> name) || role[0] == '#') continue;
      split.emplace_back(role, name);
    }
  }
  const double far = config.t_far > 0.0 ? config.t_far : 1.0;
  return assemble(config, config.t_near, far, std::move(bundle), split, [&](View& v) {
    v.rgb = read_png_rgb((fs::path(dir) / "images" / v.name).string());
    const fs::path depth = fs::path(dir) / "depth" / (stem(v.name) + ".pfm");
    if (fs::exists(depth)) v.depth = read_pfm(depth.string());
    const fs::path surface = fs::path(dir) / "surface" / (stem(v.name) + ".pfm");
    if (fs::exists(surface)) v.surface = read_pfm(surface.string());
  });
}

}  // namespace structnerf
