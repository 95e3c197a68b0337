#include "structnerf/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace structnerf {
namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), rank_(n, 0), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) x = std::exchange(parent_[x], root);
    return root;
  }

  void join(std::size_t a, std::size_t b) {
    if (rank_[a] > rank_[b]) {
      parent_[b] = a;
      size_[a] += size_[b];
    } else {
      parent_[a] = b;
      size_[b] += size_[a];
      if (rank_[a] == rank_[b]) ++rank_[b];
    }
  }

  std::size_t size(std::size_t root) const { return size_[root]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
  std::vector<std::size_t> size_;
};

struct Edge {
  double w;
  std::uint32_t a;
  std::uint32_t b;
};

/// Separable Gaussian blur with clamped borders, kernel half-width ceil(4 sigma).
std::vector<double> smooth_channel(const Image& image, int channel, double sigma) {
  const int w = image.width;
  const int h = image.height;
  std::vector<double> src(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) src[static_cast<std::size_t>(y) * w + x] = image.at(x, y, channel) * 255.0;
  if (sigma <= 0.0) return src;

  const int len = static_cast<int>(std::ceil(sigma * 4.0)) + 1;
  std::vector<double> mask(len);
  for (int i = 0; i < len; ++i) mask[i] = std::exp(-0.5 * (i / sigma) * (i / sigma));
  const double sum = 2.0 * std::accumulate(mask.begin(), mask.end(), 0.0) - mask[0];
  for (auto& m : mask) m /= sum;

  std::vector<double> tmp(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = mask[0] * src[static_cast<std::size_t>(y) * w + x];
      for (int i = 1; i < len; ++i)
        acc += mask[i] * (src[static_cast<std::size_t>(y) * w + std::max(x - i, 0)] +
                          src[static_cast<std::size_t>(y) * w + std::min(x + i, w - 1)]);
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = mask[0] * tmp[static_cast<std::size_t>(y) * w + x];
      for (int i = 1; i < len; ++i)
        acc += mask[i] * (tmp[static_cast<std::size_t>(std::max(y - i, 0)) * w + x] +
                          tmp[static_cast<std::size_t>(std::min(y + i, h - 1)) * w + x]);
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

LabelMap felzenszwalb_components(const Image& image, const SegmentationParams& params) {
  if (image.empty()) throw std::invalid_argument("felzenszwalb: empty image");
  const int w = image.width;
  const int h = image.height;
  std::vector<std::vector<double>> smoothed;
  for (int c = 0; c < image.channels; ++c) smoothed.push_back(smooth_channel(image, c, params.sigma));

  auto diff = [&](std::uint32_t a, std::uint32_t b) {
    double s = 0.0;
    for (const auto& ch : smoothed) s += (ch[a] - ch[b]) * (ch[a] - ch[b]);
    return std::sqrt(s);
  };

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(w) * h * 4);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto a = static_cast<std::uint32_t>(y * w + x);
      auto add = [&](int bx, int by) {
        const auto b = static_cast<std::uint32_t>(by * w + bx);
        edges.push_back({diff(a, b), a, b});
      };
      if (x < w - 1) add(x + 1, y);
      if (y < h - 1) add(x, y + 1);
      if (x < w - 1 && y < h - 1) add(x + 1, y + 1);
      if (x < w - 1 && y > 0) add(x + 1, y - 1);
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) {
    if (l.w != r.w) return l.w < r.w;
    if (l.a != r.a) return l.a < r.a;
    return l.b < r.b;
  });

  const std::size_t n = static_cast<std::size_t>(w) * h;
  DisjointSet sets(n);
  std::vector<double> threshold(n, params.k);
  for (const Edge& e : edges) {
    std::size_t a = sets.find(e.a);
    const std::size_t b = sets.find(e.b);
    if (a != b && e.w <= threshold[a] && e.w <= threshold[b]) {
      sets.join(a, b);
      a = sets.find(a);
      threshold[a] = e.w + params.k / static_cast<double>(sets.size(a));
    }
  }
  for (const Edge& e : edges) {
    const std::size_t a = sets.find(e.a);
    const std::size_t b = sets.find(e.b);
    if (a != b && (sets.size(a) < static_cast<std::size_t>(params.min_size) ||
                   sets.size(b) < static_cast<std::size_t>(params.min_size)))
      sets.join(a, b);
  }

  LabelMap out;
  out.width = w;
  out.height = h;
  out.labels.assign(n, -1);
  std::vector<int> id_of_root(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = sets.find(i);
    if (id_of_root[root] < 0) {
      id_of_root[root] = out.region_count();
      out.region_sizes.push_back(0);
    }
    out.labels[i] = id_of_root[root];
    ++out.region_sizes[out.labels[i]];
  }
  return out;
}

LabelMap relabel_connected(const LabelMap& in) {
  LabelMap out;
  out.width = in.width;
  out.height = in.height;
  out.labels.assign(in.labels.size(), -1);
  std::queue<std::size_t> frontier;
  for (std::size_t seed = 0; seed < in.labels.size(); ++seed) {
    if (out.labels[seed] >= 0) continue;
    const int id = out.region_count();
    out.region_sizes.push_back(0);
    out.labels[seed] = id;
    frontier.push(seed);
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop();
      ++out.region_sizes[id];
      const int x = static_cast<int>(p % in.width);
      const int y = static_cast<int>(p / in.width);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= in.width || ny[k] >= in.height) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * in.width + nx[k];
        if (out.labels[q] < 0 && in.labels[q] == in.labels[p]) {
          out.labels[q] = id;
          frontier.push(q);
        }
      }
    }
  }
  return out;
}

LabelMap felzenszwalb(const Image& image, const SegmentationParams& params) {
  return relabel_connected(felzenszwalb_components(image, params));
}

std::vector<PlaneRegion> extract_planes(const LabelMap& labels, int area_threshold) {
  std::vector<PlaneRegion> regions(labels.region_sizes.size());
  for (std::size_t id = 0; id < regions.size(); ++id) regions[id].id = static_cast<int>(id);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) regions[labels.at(x, y)].pixels.push_back({x, y});
  std::erase_if(regions, [&](const PlaneRegion& r) { return r.area() < area_threshold; });
  std::stable_sort(regions.begin(), regions.end(), [](const PlaneRegion& a, const PlaneRegion& b) {
    if (a.area() != b.area()) return a.area() > b.area();
    return a.id < b.id;
  });
  return regions;
}

std::array<PixelIndex, 4> sample_plane_quad(const PlaneRegion& region, Rng& rng) {
  const std::size_t n = region.pixels.size();
  if (n < 4) throw DegenerateRegion("plane region has fewer than 4 pixels");
  for (int attempt = 0; attempt < 16; ++attempt) {
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
      std::size_t candidate;
      do {
        candidate = rng.below(n);
      } while (std::find(idx.begin(), idx.begin() + k, candidate) != idx.begin() + k);
      idx[k] = candidate;
    }
    const PixelIndex& a = region.pixels[idx[0]];
    const PixelIndex& b = region.pixels[idx[1]];
    const PixelIndex& c = region.pixels[idx[2]];
    const double area =
        0.5 * std::abs(static_cast<double>(b.x - a.x) * (c.y - a.y) - static_cast<double>(b.y - a.y) * (c.x - a.x));
    if (area > 1e-6) return {a, b, c, region.pixels[idx[3]]};
  }
  throw DegenerateRegion("plane region is degenerate (collinear samples)");
}

std::array<double, 3> region_color(int id) {
  // Golden-ratio hue walk gives well separated colours for neighbouring ids.
  const double hue = std::fmod(id * 0.618033988749895, 1.0) * 6.0;
  const double s = 0.65;
  const double v = 0.95;
  const int sector = static_cast<int>(hue);
  const double f = hue - sector;
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace structnerf
