#include "structnerf/camera.hpp"

#include <Eigen/LU>

#include <string>

namespace structnerf {

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Rigid Rigid::from_matrix(const Eigen::Matrix4d& m) { return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()}; }

Eigen::Matrix4d Rigid::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = R;
  m.topRightCorner<3, 1>() = t;
  return m;
}

Rigid Rigid::inverse() const {
  const Eigen::Matrix3d rt = R.transpose();
  return {rt, -(rt * t)};
}

void Camera::validate() const {
  if (!(K.fx > 0.0) || !(K.fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera image size must be positive");
  const Eigen::Matrix3d R = world_to_camera.topLeftCorner<3, 3>();
  const double orth = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(orth <= 1e-9) || std::abs(R.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("camera rotation is not a proper rotation (orthonormality error " +
                                std::to_string(orth) + ")");
  const Eigen::RowVector4d last = world_to_camera.row(3);
  if (last != Eigen::RowVector4d(0, 0, 0, 1)) throw std::invalid_argument("camera extrinsics last row must be 0 0 0 1");
}

Eigen::Vector3d Camera::center() const {
  const Rigid p = pose();
  return -(p.R.transpose() * p.t);
}

Eigen::Vector3d back_project(const Pixel& p, double depth, const Intrinsics& K) {
  if (!(depth > 0.0)) throw std::invalid_argument("back_project: depth must be positive");
  const auto pt = back_project_scaled(p, depth, K);
  return {pt[0], pt[1], pt[2]};
}

Pixel project(const Eigen::Vector3d& point, const Intrinsics& K) {
  if (!(point.z() > 0.0)) throw PointBehindCamera();
  return {K.fx * (point.x() / point.z()) + K.cx, K.fy * (point.y() / point.z()) + K.cy};
}

WarpedPixel warp_point(const Pixel& p, double depth, const Intrinsics& K, const Eigen::Matrix4d& target_world_to_camera,
                       const Eigen::Matrix4d& source_world_to_camera, int width, int height) {
  if (!(depth > 0.0)) throw std::invalid_argument("warp_point: depth must be positive");
  const Rigid t2s = Rigid::from_matrix(source_world_to_camera) * Rigid::from_matrix(target_world_to_camera).inverse();
  const auto uv = warp_pixel(p, depth, K, t2s);
  if (!uv) throw PointBehindCamera();
  WarpedPixel out;
  out.pixel = {(*uv)[0], (*uv)[1]};
  out.in_bounds = out.pixel.u >= 0.0 && out.pixel.v >= 0.0 && out.pixel.u <= width - 1 && out.pixel.v <= height - 1;
  return out;
}

std::array<Pixel, 9> support_domain(const Pixel& p, double spacing) {
  std::array<Pixel, 9> out;
  std::size_t k = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) out[k++] = {p.u + dx * spacing, p.v + dy * spacing};
  return out;
}

PatchWarp warp_patch(const SupportPatch& patch, const Intrinsics& K, const Eigen::Matrix4d& target_world_to_camera,
                     const Eigen::Matrix4d& source_world_to_camera, int width, int height) {
  if (!(patch.depth > 0.0)) throw std::invalid_argument("warp_patch: depth must be positive");
  const Rigid t2s = Rigid::from_matrix(source_world_to_camera) * Rigid::from_matrix(target_world_to_camera).inverse();
  PatchWarp out;
  out.valid = true;
  out.in_bounds = true;
  const auto offsets = patch.offsets();
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const auto uv = warp_pixel(offsets[i], patch.depth, K, t2s);
    if (!uv) {
      out.valid = false;
      out.in_bounds = false;
      return out;
    }
    out.coords[i] = {(*uv)[0], (*uv)[1]};
    const auto& c = out.coords[i];
    if (!(c.u >= 0.0 && c.v >= 0.0 && c.u <= width - 1 && c.v <= height - 1)) out.in_bounds = false;
  }
  return out;
}

BilinearSamples bilinear_sample(const Image& image, std::span<const Pixel> coords) {
  if (image.empty()) throw std::invalid_argument("bilinear_sample: empty image");
  BilinearSamples out;
  out.values.assign(coords.size() * image.channels, 0.0);
  out.valid.assign(coords.size(), false);
  for (std::size_t i = 0; i < coords.size(); ++i)
    out.valid[i] = bilinear_at(image, coords[i].u, coords[i].v, out.values.data() + i * image.channels);
  return out;
}

}  // namespace structnerf
