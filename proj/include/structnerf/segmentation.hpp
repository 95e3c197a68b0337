#pragma once

// Graph-based superpixel segmentation (Felzenszwalb & Huttenlocher) and
// extraction of large regions as plane candidates.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "structnerf/image.hpp"
#include "structnerf/random.hpp"

namespace structnerf {

struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;        // row-major, ids 0..R-1
  std::vector<int> region_sizes;  // pixel count per id

  int region_count() const { return static_cast<int>(region_sizes.size()); }
  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

struct SegmentationParams {
  double k = 150.0;  // on a 0..255 intensity scale
  double sigma = 0.8;
  int min_size = 50;
  friend bool operator==(const SegmentationParams&, const SegmentationParams&) = default;
};

/// Union-find components after the min_size merge pass (8-connected graph).
/// Labels are contiguous in order of first appearance.
LabelMap felzenszwalb_components(const Image& image, const SegmentationParams& params);

/// felzenszwalb_components followed by a 4-connected relabelling, so every
/// reported region is 4-connected. Deterministic.
LabelMap felzenszwalb(const Image& image, const SegmentationParams& params = {});

/// Relabels `labels` so that each 4-connected run of equal labels gets its own id.
LabelMap relabel_connected(const LabelMap& labels);

struct PixelIndex {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

struct PlaneRegion {
  int id = 0;
  std::vector<PixelIndex> pixels;  // row-major order
  int area() const { return static_cast<int>(pixels.size()); }
};

/// Regions with at least `area_threshold` pixels, largest first, ties by id.
std::vector<PlaneRegion> extract_planes(const LabelMap& labels, int area_threshold);

class DegenerateRegion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Four distinct pixels of the region whose first three are not collinear
/// (triangle area > 1e-6). Up to 16 attempts, then DegenerateRegion.
std::array<PixelIndex, 4> sample_plane_quad(const PlaneRegion& region, Rng& rng);

/// Fixed palette colour for a region id (for visualisation).
std::array<double, 3> region_color(int id);

}  // namespace structnerf
