#include "structnerf/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>

#include "structnerf/sfm.hpp"

namespace structnerf {
namespace {

void same_shape(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument(std::string(what) + ": image dimensions differ");
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lo + hi);
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

double psnr(const Image& pred, const Image& gt) {
  same_shape(pred, gt, "psnr");
  if (pred.data.empty()) throw std::invalid_argument("psnr: empty image");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(pred.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim_image(const Image& pred, const Image& gt) {
  same_shape(pred, gt, "ssim_image");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (pred.width < kWin || pred.height < kWin) throw std::invalid_argument("ssim_image: image smaller than 11x11 window");
  std::array<double, kWin> g{};
  double gsum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    g[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    gsum += g[i];
  }
  for (auto& v : g) v /= gsum;

  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const int ox = pred.width - kWin + 1;
  const int oy = pred.height - kWin + 1;
  double total = 0.0;
  for (int c = 0; c < pred.channels; ++c) {
    double channel_sum = 0.0;
    for (int y0 = 0; y0 < oy; ++y0) {
      for (int x0 = 0; x0 < ox; ++x0) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int j = 0; j < kWin; ++j)
          for (int i = 0; i < kWin; ++i) {
            const double w = g[i] * g[j];
            const double a = pred.at(x0 + i, y0 + j, c);
            const double b = gt.at(x0 + i, y0 + j, c);
            mx += w * a;
            my += w * b;
            xx += w * a * a;
            yy += w * b * b;
            xy += w * a * b;
          }
        const double vx = xx - mx * mx;
        const double vy = yy - my * my;
        const double cov = xy - mx * my;
        channel_sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += channel_sum / (static_cast<double>(ox) * oy);
  }
  return total / pred.channels;
}

Mask valid_depth_mask(const Image& gt_depth, const Image* opacity) {
  Mask m(gt_depth.pixel_count(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const bool ok = gt_depth.data[i] > 0.0 && (!opacity || opacity->data[i] > 0.5);
    m[i] = ok ? 1 : 0;
  }
  return m;
}

Alignment median_scale_align(const Image& pred, const Image& gt, const Mask& mask) {
  same_shape(pred, gt, "median_scale_align");
  if (mask.size() != pred.pixel_count()) throw std::invalid_argument("median_scale_align: mask size mismatch");
  std::vector<double> p, g;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      p.push_back(pred.data[i]);
      g.push_back(gt.data[i]);
    }
  if (p.empty()) throw DegenerateDepth("median_scale_align: no valid pixels");
  const double mp = median(p);
  if (mp == 0.0) throw DegenerateDepth("median_scale_align: median predicted depth is 0");
  Alignment out;
  out.scale = median(g) / mp;
  out.aligned = pred;
  for (double& v : out.aligned.data) v *= out.scale;
  return out;
}

double depth_rmse(const Image& pred, const Image& gt, const Mask& mask) {
  same_shape(pred, gt, "depth_rmse");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      const double d = pred.data[i] - gt.data[i];
      sum += d * d;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("depth_rmse: empty mask");
  return std::sqrt(sum / static_cast<double>(n));
}

std::optional<double> plane_fit_deviation(const std::vector<Eigen::Vector3d>& points) {
  if (points.size() < 3) return std::nullopt;
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());
  Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
  for (const auto& p : points) S += (p - c) * (p - c).transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(S);
  const Eigen::Vector3d ev = eig.eigenvalues();  // ascending
  if (!(ev[1] > 1e-12 * std::max(ev[2], std::numeric_limits<double>::min()))) return std::nullopt;
  const Eigen::Vector3d n = eig.eigenvectors().col(0);
  double sum = 0.0;
  for (const auto& p : points) sum += std::abs((p - c).dot(n));
  return sum / static_cast<double>(points.size());
}

std::optional<double> plane_mean_deviation(const Image& depth, const std::vector<PlaneRegion>& regions,
                                           const Intrinsics& K, const Mask* mask) {
  double sum = 0.0;
  int used = 0;
  std::vector<Eigen::Vector3d> pts;
  for (const auto& region : regions) {
    pts.clear();
    for (const auto& px : region.pixels) {
      const std::size_t i = static_cast<std::size_t>(px.y) * depth.width + px.x;
      if (mask && !(*mask)[i]) continue;
      const double d = depth.data[i];
      if (!(d > 0.0)) continue;
      pts.push_back(back_project({static_cast<double>(px.x), static_cast<double>(px.y)}, d, K));
    }
    const auto dev = plane_fit_deviation(pts);
    if (!dev) continue;
    sum += *dev;
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / used;
}

int plane_area_threshold(int width, int height) {
  const double area = 1000.0 * width * height / (624.0 * 468.0);
  return std::max(8, static_cast<int>(std::ceil(area / 8.0)) * 8);
}

std::vector<PlaneRegion> flat_wall_regions(const std::vector<PlaneRegion>& regions, const Image& surface,
                                           const std::array<bool, 6>& flat, int threshold) {
  std::vector<PlaneRegion> out;
  for (const auto& r : regions) {
    PlaneRegion kept{r.id, {}};
    for (const auto& px : r.pixels) {
      const int face = static_cast<int>(surface.at(px.x, px.y));
      if (face >= 0 && face < 6 && flat[face]) kept.pixels.push_back(px);
    }
    if (kept.area() >= threshold) out.push_back(std::move(kept));
  }
  return out;
}

ViewMetrics evaluate_view(const View& view, const RenderedImage& render, const std::array<bool, 6>& flat_faces,
                          const EvalOptions& options) {
  ViewMetrics m;
  m.name = view.name;
  m.psnr = psnr(render.rgb, view.rgb);
  m.ssim = ssim_image(render.rgb, view.rgb);
  m.depth_rmse = m.plane_dev = m.plane_dev_flat = nan();
  if (view.depth.empty()) return m;
  const Mask mask = valid_depth_mask(view.depth, &render.opacity);
  Alignment al;
  try {
    al = median_scale_align(render.depth, view.depth, mask);
  } catch (const DegenerateDepth&) {
    return m;
  }
  m.scale = al.scale;
  m.depth_rmse = depth_rmse(al.aligned, view.depth, mask);
  const int threshold =
      options.plane_threshold > 0 ? options.plane_threshold : plane_area_threshold(view.rgb.width, view.rgb.height);
  const auto regions = extract_planes(felzenszwalb(view.rgb, options.segmentation), threshold);
  m.plane_dev = plane_mean_deviation(al.aligned, regions, view.camera.K, &mask).value_or(nan());
  if (!view.surface.empty()) {
    const auto flat = flat_wall_regions(regions, view.surface, flat_faces, threshold);
    m.plane_dev_flat = plane_mean_deviation(al.aligned, flat, view.camera.K, &mask).value_or(nan());
  }
  return m;
}

EvalReport evaluate(const RadianceField& field, const ad::ParamStore& params, const std::vector<View>& views,
                    const std::array<bool, 6>& flat_faces, double t_near, double t_far, const EvalOptions& options) {
  EvalReport report;
  for (const View& v : views) {
    const RenderedImage r = render_image(field, v.camera, params, options.n_samples, t_near, t_far, options.threads);
    report.views.push_back(evaluate_view(v, r, flat_faces, options));
  }
  report.finalize();
  return report;
}

void EvalReport::finalize() {
  mean = ViewMetrics{};
  mean.name = "mean";
  auto avg = [&](double ViewMetrics::*field) {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : views)
      if (!std::isnan(v.*field)) {
        sum += v.*field;
        ++n;
      }
    return n ? sum / n : nan();
  };
  mean.psnr = avg(&ViewMetrics::psnr);
  mean.ssim = avg(&ViewMetrics::ssim);
  mean.depth_rmse = avg(&ViewMetrics::depth_rmse);
  mean.plane_dev = avg(&ViewMetrics::plane_dev);
  mean.plane_dev_flat = avg(&ViewMetrics::plane_dev_flat);
  mean.scale = avg(&ViewMetrics::scale);
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "view,psnr,ssim,depth_rmse,plane_mean_dev,plane_mean_dev_flat,scale\n";
  auto row = [&](const ViewMetrics& v) {
    out << v.name << ',' << format_double(v.psnr) << ',' << format_double(v.ssim) << ','
        << format_double(v.depth_rmse) << ',' << format_double(v.plane_dev) << ',' << format_double(v.plane_dev_flat)
        << ',' << format_double(v.scale) << '\n';
  };
  for (const auto& v : views) row(v);
  row(mean);
}

void EvalReport::write_table(std::ostream& out) const {
  out << std::left << std::setw(16) << "view" << std::right << std::setw(9) << "PSNR" << std::setw(8) << "SSIM"
      << std::setw(12) << "DepthRMSE" << std::setw(12) << "PlaneDev" << std::setw(12) << "PlaneDev*" << '\n';
  auto row = [&](const ViewMetrics& v) {
    out << std::left << std::setw(16) << v.name << std::right << std::fixed << std::setprecision(2) << std::setw(9)
        << v.psnr << std::setprecision(4) << std::setw(8) << v.ssim << std::setw(12) << v.depth_rmse
        << std::setprecision(5) << std::setw(12) << v.plane_dev << std::setw(12) << v.plane_dev_flat << '\n';
    out.unsetf(std::ios::fixed);
  };
  for (const auto& v : views) row(v);
  row(mean);
  out << "(PlaneDev* = flat walls only)\n";
}

}  // namespace structnerf
