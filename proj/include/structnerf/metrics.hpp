#pragma once

// Image and geometry metrics: PSNR, windowed SSIM, median-scaled depth RMSE
// and plane mean deviation.

#include <array>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "structnerf/camera.hpp"
#include "structnerf/field.hpp"
#include "structnerf/image.hpp"
#include "structnerf/scene.hpp"
#include "structnerf/segmentation.hpp"

namespace structnerf {

class DegenerateDepth : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// -10 log10(MSE) over all values; +infinity when MSE is 0.
double psnr(const Image& pred, const Image& gt);

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, unit dynamic
/// range), per channel then averaged. Throws if the image is smaller than 11x11.
double ssim_image(const Image& pred, const Image& gt);

using Mask = std::vector<unsigned char>;

/// gt > 0 and (if given) opacity > 0.5.
Mask valid_depth_mask(const Image& gt_depth, const Image* opacity = nullptr);

struct Alignment {
  double scale = 1.0;
  Image aligned;
};

/// scale = median(gt | mask) / median(pred | mask), medians of even counts are
/// the mean of the two middle values. Throws DegenerateDepth when there is no
/// valid pixel or median(pred) is 0.
Alignment median_scale_align(const Image& pred, const Image& gt, const Mask& mask);

/// sqrt(mean over mask of (pred - gt)^2). Throws std::invalid_argument for an empty mask.
double depth_rmse(const Image& pred, const Image& gt, const Mask& mask);

/// Mean absolute distance of the points to their least-squares plane, or
/// nullopt when the points are fewer than 3 or collinear.
std::optional<double> plane_fit_deviation(const std::vector<Eigen::Vector3d>& points);

/// Per region: back-project the region's pixels (restricted to `mask` if
/// given) with `depth`, fit a plane, take the mean deviation; then average over
/// regions. Rank-deficient regions are skipped. Returns nullopt when no region
/// qualifies.
std::optional<double> plane_mean_deviation(const Image& depth, const std::vector<PlaneRegion>& regions,
                                           const Intrinsics& K, const Mask* mask = nullptr);

/// Area threshold for plane regions: 1000 px at 624x468 kept as an area
/// fraction, rounded up to a multiple of 8 (16 px at 64x64).
int plane_area_threshold(int width, int height);

/// Restricts regions to pixels whose surface id is one of the `flat` faces and
/// keeps those still above `threshold`.
std::vector<PlaneRegion> flat_wall_regions(const std::vector<PlaneRegion>& regions, const Image& surface,
                                           const std::array<bool, 6>& flat, int threshold);

struct ViewMetrics {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double depth_rmse = 0.0;
  double plane_dev = 0.0;       // NaN when no region qualified
  double plane_dev_flat = 0.0;  // flat walls only; NaN when unavailable
  double scale = 1.0;
};

struct EvalReport {
  std::vector<ViewMetrics> views;
  ViewMetrics mean;  // arithmetic means (NaN-valued views are skipped per column)

  void finalize();
  void write_csv(std::ostream& out) const;
  void write_table(std::ostream& out) const;
};

struct EvalOptions {
  int n_samples = 64;
  int threads = 1;
  SegmentationParams segmentation;
  int plane_threshold = 0;  // 0: plane_area_threshold()
};

ViewMetrics evaluate_view(const View& view, const RenderedImage& render, const std::array<bool, 6>& flat_faces,
                          const EvalOptions& options);

/// Renders every view from `params` and evaluates it.
EvalReport evaluate(const RadianceField& field, const ad::ParamStore& params, const std::vector<View>& views,
                    const std::array<bool, 6>& flat_faces, double t_near, double t_far, const EvalOptions& options);

}  // namespace structnerf
