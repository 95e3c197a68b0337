#include "structnerf/sfm.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace structnerf {
namespace {

struct Line {
  std::size_t number = 0;
  std::string text;
};

/// Lines of a text file with '\r' stripped, comment lines removed. Blank
/// lines are kept because images.txt uses them for empty keypoint lists.
std::vector<Line> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SfmError("cannot open " + path);
  std::vector<Line> lines;
  std::string text;
  std::size_t number = 0;
  while (std::getline(in, text)) {
    ++number;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    const auto first = text.find_first_not_of(" \t");
    if (first != std::string::npos && text[first] == '#') continue;
    lines.push_back({number, text});
  }
  return lines;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

std::string where(const std::string& file, std::size_t line) { return file + ":" + std::to_string(line); }

template <typename T>
T parse_number(std::istringstream& in, const std::string& file, std::size_t line, const char* field) {
  std::string token;
  if (!(in >> token)) throw SfmError(where(file, line) + ": missing " + field);
  T value{};
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) throw SfmError(where(file, line) + ": bad " + field + " '" + token + "'");
  return value;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

Intrinsics CameraModel::intrinsics() const {
  if (model == "PINHOLE" && params.size() == 4) return {params[0], params[1], params[2], params[3]};
  if (model == "SIMPLE_PINHOLE" && params.size() == 3) return {params[0], params[0], params[1], params[2]};
  throw UnsupportedModel("camera model " + model + " with " + std::to_string(params.size()) + " params");
}

Eigen::Matrix4d SfmImage::world_to_camera() const {
  Eigen::Quaterniond q(qvec[0], qvec[1], qvec[2], qvec[3]);
  q.normalize();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  m.topRightCorner<3, 1>() = tvec;
  return m;
}

const SfmImage& SceneBundle::image(int id) const {
  const auto it = std::find_if(images.begin(), images.end(), [&](const SfmImage& im) { return im.id == id; });
  if (it == images.end()) throw SfmError("unknown image id " + std::to_string(id));
  return *it;
}

Camera SceneBundle::camera_for(const SfmImage& im) const {
  const auto it = cameras.find(im.camera_id);
  if (it == cameras.end()) throw SfmError("image " + im.name + " refers to unknown camera " + std::to_string(im.camera_id));
  Camera cam;
  cam.K = it->second.intrinsics();
  cam.width = it->second.width;
  cam.height = it->second.height;
  cam.world_to_camera = im.world_to_camera();
  return cam;
}

ReprojectionError reprojection_error(const SparsePoint& point, const SceneBundle& bundle) {
  ReprojectionError out;
  for (const auto& obs : point.observations) {
    const Camera cam = bundle.camera_for(bundle.image(obs.image_id));
    const Eigen::Vector3d pc = cam.pose() * point.position;
    if (!(pc.z() > 0.0)) {
      out.behind_camera = true;
      continue;
    }
    const Pixel p = project(pc, cam.K);
    out.error += std::hypot(p.u - obs.keypoint.u, p.v - obs.keypoint.v);
  }
  return out;
}

double keypoint_weight(double error, double mean_error) {
  if (error < 0.0 || mean_error < 0.0) throw std::invalid_argument("keypoint_weight: negative error");
  if (mean_error == 0.0) return 1.0;
  const double r = error / mean_error;
  return std::exp(-(r * r));
}

void SceneBundle::update_weights() {
  double sum = 0.0;
  std::size_t count = 0;
  for (auto& p : points) {
    const auto e = reprojection_error(p, *this);
    p.error = e.error;
    p.usable = !e.behind_camera && !p.observations.empty();
    if (p.usable) {
      sum += p.error;
      ++count;
    }
  }
  mean_error = count > 0 ? sum / static_cast<double>(count) : 0.0;
  for (auto& p : points) p.weight = p.usable ? keypoint_weight(p.error, mean_error) : 0.0;
}

SceneBundle parse_colmap_text(const std::string& dir) {
  namespace fs = std::filesystem;
  SceneBundle bundle;

  const std::string cameras_path = (fs::path(dir) / "cameras.txt").string();
  for (const auto& line : read_lines(cameras_path)) {
    if (blank(line.text)) continue;
    std::istringstream in(line.text);
    CameraModel cam;
    cam.id = parse_number<int>(in, cameras_path, line.number, "CAMERA_ID");
    if (!(in >> cam.model)) throw SfmError(where(cameras_path, line.number) + ": missing MODEL");
    if (cam.model != "PINHOLE" && cam.model != "SIMPLE_PINHOLE")
      throw UnsupportedModel(where(cameras_path, line.number) + ": unsupported camera model " + cam.model);
    cam.width = parse_number<int>(in, cameras_path, line.number, "WIDTH");
    cam.height = parse_number<int>(in, cameras_path, line.number, "HEIGHT");
    const std::size_t n_params = cam.model == "PINHOLE" ? 4 : 3;
    for (std::size_t i = 0; i < n_params; ++i) cam.params.push_back(parse_number<double>(in, cameras_path, line.number, "PARAMS"));
    if (!bundle.cameras.emplace(cam.id, cam).second)
      throw SfmError(where(cameras_path, line.number) + ": duplicate camera id");
  }

  const std::string images_path = (fs::path(dir) / "images.txt").string();
  const auto image_lines = read_lines(images_path);
  for (std::size_t i = 0; i < image_lines.size(); ++i) {
    if (blank(image_lines[i].text)) continue;  // stray blank line between records
    const auto& pose_line = image_lines[i];
    std::istringstream in(pose_line.text);
    SfmImage im;
    im.id = parse_number<int>(in, images_path, pose_line.number, "IMAGE_ID");
    for (auto& q : im.qvec) q = parse_number<double>(in, images_path, pose_line.number, "QVEC");
    for (int k = 0; k < 3; ++k) im.tvec[k] = parse_number<double>(in, images_path, pose_line.number, "TVEC");
    im.camera_id = parse_number<int>(in, images_path, pose_line.number, "CAMERA_ID");
    if (!(in >> im.name)) throw SfmError(where(images_path, pose_line.number) + ": missing NAME");
    const double qnorm = std::sqrt(im.qvec[0] * im.qvec[0] + im.qvec[1] * im.qvec[1] + im.qvec[2] * im.qvec[2] +
                                   im.qvec[3] * im.qvec[3]);
    if (std::abs(qnorm - 1.0) > 1e-6)
      throw MalformedPose(where(images_path, pose_line.number) + ": quaternion norm " + format_double(qnorm));
    if (!bundle.cameras.count(im.camera_id))
      throw SfmError(where(images_path, pose_line.number) + ": unknown camera id " + std::to_string(im.camera_id));
    if (i + 1 < image_lines.size()) {
      const auto& pts_line = image_lines[++i];
      std::istringstream pin(pts_line.text);
      std::string token;
      while (pin >> token) {
        Keypoint2D kp;
        std::istringstream one(token);
        kp.pixel.u = parse_number<double>(one, images_path, pts_line.number, "X");
        kp.pixel.v = parse_number<double>(pin, images_path, pts_line.number, "Y");
        kp.point3d_id = parse_number<std::int64_t>(pin, images_path, pts_line.number, "POINT3D_ID");
        im.points2d.push_back(kp);
      }
    }
    bundle.images.push_back(std::move(im));
  }
  std::sort(bundle.images.begin(), bundle.images.end(), [](const SfmImage& a, const SfmImage& b) { return a.id < b.id; });

  const std::string points_path = (fs::path(dir) / "points3D.txt").string();
  for (const auto& line : read_lines(points_path)) {
    if (blank(line.text)) continue;
    std::istringstream in(line.text);
    SparsePoint p;
    p.id = parse_number<std::int64_t>(in, points_path, line.number, "POINT3D_ID");
    for (int k = 0; k < 3; ++k) p.position[k] = parse_number<double>(in, points_path, line.number, "XYZ");
    for (auto& c : p.color) c = parse_number<int>(in, points_path, line.number, "RGB");
    p.stored_error = parse_number<double>(in, points_path, line.number, "ERROR");
    std::string token;
    while (in >> token) {
      std::istringstream one(token);
      Observation obs;
      obs.image_id = parse_number<int>(one, points_path, line.number, "IMAGE_ID");
      obs.point2d_index = parse_number<int>(in, points_path, line.number, "POINT2D_IDX");
      const auto it = std::find_if(bundle.images.begin(), bundle.images.end(),
                                   [&](const SfmImage& im) { return im.id == obs.image_id; });
      if (it == bundle.images.end())
        throw MalformedTrack(where(points_path, line.number) + ": track refers to unknown image id " +
                             std::to_string(obs.image_id));
      if (obs.point2d_index < 0 || obs.point2d_index >= static_cast<int>(it->points2d.size()))
        throw MalformedTrack(where(points_path, line.number) + ": POINT2D_IDX " + std::to_string(obs.point2d_index) +
                             " out of range for image " + std::to_string(obs.image_id));
      obs.keypoint = it->points2d[obs.point2d_index].pixel;
      p.observations.push_back(obs);
    }
    bundle.points.push_back(std::move(p));
  }
  std::sort(bundle.points.begin(), bundle.points.end(), [](const SparsePoint& a, const SparsePoint& b) { return a.id < b.id; });
  bundle.update_weights();
  return bundle;
}

void write_colmap_text(const SceneBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw SfmError("cannot write " + (fs::path(dir) / name).string());
    return out;
  };

  {
    auto out = open("cameras.txt");
    out << "# Camera list with one line of data per camera:\n"
        << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        << "# Number of cameras: " << bundle.cameras.size() << "\n";
    for (const auto& [id, cam] : bundle.cameras) {
      out << id << ' ' << cam.model << ' ' << cam.width << ' ' << cam.height;
      for (double v : cam.params) out << ' ' << format_double(v);
      out << '\n';
    }
  }
  {
    std::size_t n_obs = 0;
    for (const auto& im : bundle.images) n_obs += im.points2d.size();
    const double mean_obs = bundle.images.empty() ? 0.0 : static_cast<double>(n_obs) / bundle.images.size();
    auto out = open("images.txt");
    out << "# Image list with two lines of data per image:\n"
        << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
        << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
        << "# Number of images: " << bundle.images.size() << ", mean observations per image: "
        << format_double(mean_obs) << "\n";
    for (const auto& im : bundle.images) {
      out << im.id;
      for (double q : im.qvec) out << ' ' << format_double(q);
      for (int k = 0; k < 3; ++k) out << ' ' << format_double(im.tvec[k]);
      out << ' ' << im.camera_id << ' ' << im.name << '\n';
      for (std::size_t k = 0; k < im.points2d.size(); ++k) {
        const auto& kp = im.points2d[k];
        if (k) out << ' ';
        out << format_double(kp.pixel.u) << ' ' << format_double(kp.pixel.v) << ' ' << kp.point3d_id;
      }
      out << '\n';
    }
  }
  {
    std::size_t track = 0;
    for (const auto& p : bundle.points) track += p.observations.size();
    const double mean_track = bundle.points.empty() ? 0.0 : static_cast<double>(track) / bundle.points.size();
    auto out = open("points3D.txt");
    out << "# 3D point list with one line of data per point:\n"
        << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
        << "# Number of points: " << bundle.points.size() << ", mean track length: " << format_double(mean_track)
        << "\n";
    for (const auto& p : bundle.points) {
      out << p.id << ' ' << format_double(p.position.x()) << ' ' << format_double(p.position.y()) << ' '
          << format_double(p.position.z()) << ' ' << p.color[0] << ' ' << p.color[1] << ' ' << p.color[2] << ' '
          << format_double(p.stored_error);
      for (const auto& obs : p.observations) out << ' ' << obs.image_id << ' ' << obs.point2d_index;
      out << '\n';
    }
  }
}

}  // namespace structnerf
