#pragma once

// Loss terms: colour, patch photometric (SSIM + L1), planar consistency and
// sparse keypoint depth, plus their weighted combination.
//
// The term kernels are templates over the scalar type so that the same code
// runs on plain doubles and on the autodiff tape.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "structnerf/autodiff.hpp"
#include "structnerf/camera.hpp"
#include "structnerf/image.hpp"

namespace structnerf {

struct LossWeights {
  double lambda_ph = 0.025;
  double lambda_pc = 0.025;
  double lambda_sparse = 0.05;
  double alpha = 0.85;            // SSIM share of the photometric term
  double warmup_fraction = 0.5;   // lambda_sparse is active for iter < fraction * total

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct AblationFlags {
  bool no_dense_sampling = false;
  bool no_patch = false;
  bool no_warmup = false;
  bool no_sparse = false;
  bool no_patchmatch = false;
  bool no_plane_reg = false;

  /// Every structural term off: the plain colour-supervised baseline.
  static AblationFlags color_only();

  /// Comma-separated flag names ("no_patch,no_sparse"); empty string for none.
  std::string to_string() const;
  /// Throws std::invalid_argument on an unknown name.
  static AblationFlags parse(const std::string& text);
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

inline constexpr std::array<const char*, 6> kAblationNames = {
    "no_dense_sampling", "no_patch", "no_warmup", "no_sparse", "no_patchmatch", "no_plane_reg"};

/// lambda_sparse for iteration `iter` of `total_iters`: active on the half-open
/// warm-up window, 0 afterwards; constant when `no_warmup` is set.
double lambda_sparse_at(long iter, long total_iters, const LossWeights& weights, bool no_warmup = false);

struct EffectiveWeights {
  double ph = 0.0;
  double pc = 0.0;
  double sparse = 0.0;
};
EffectiveWeights effective_weights(long iter, long total_iters, const LossWeights& weights, const AblationFlags& flags);

// ---------------------------------------------------------------------------

template <typename T>
using Rgb = std::array<T, 3>;

template <typename T>
using PatchColors = std::array<Rgb<T>, 9>;

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Sum over the batch of squared colour residuals.
template <typename T>
T color_loss(std::span<const Rgb<T>> rendered, std::span<const Rgb<double>> gt) {
  if (rendered.size() != gt.size() || rendered.empty())
    throw std::invalid_argument("color_loss: batches must be non-empty and of equal length");
  T sum(0.0);
  for (std::size_t r = 0; r < rendered.size(); ++r)
    for (int k = 0; k < 3; ++k) {
      const T d = rendered[r][k] - gt[r][k];
      sum = sum + d * d;
    }
  return sum;
}

/// SSIM of two 9-sample patches: per channel from means, (population)
/// variances and covariance, then averaged over the channels.
template <typename T, typename U>
auto ssim_patch(const PatchColors<T>& p, const PatchColors<U>& q) {
  using R = decltype(std::declval<T>() * std::declval<U>());
  R total(0.0);
  for (int c = 0; c < 3; ++c) {
    R mp(0.0), mq(0.0);
    for (int i = 0; i < 9; ++i) {
      mp = mp + p[i][c];
      mq = mq + q[i][c];
    }
    mp = mp * (1.0 / 9.0);
    mq = mq * (1.0 / 9.0);
    R vp(0.0), vq(0.0), cov(0.0);
    for (int i = 0; i < 9; ++i) {
      const R dp = p[i][c] - mp;
      const R dq = q[i][c] - mq;
      vp = vp + dp * dp;
      vq = vq + dq * dq;
      cov = cov + dp * dq;
    }
    vp = vp * (1.0 / 9.0);
    vq = vq * (1.0 / 9.0);
    cov = cov * (1.0 / 9.0);
    const R num = (2.0 * mp * mq + kSsimC1) * (2.0 * cov + kSsimC2);
    const R den = (mp * mp + mq * mq + kSsimC1) * (vp + vq + kSsimC2);
    total = total + num / den;
  }
  return total * (1.0 / 3.0);
}

/// alpha (1 - SSIM) / 2 + (1 - alpha) mean |P - Q| for one patch pair.
template <typename T>
T patch_dissimilarity(const PatchColors<double>& target, const PatchColors<T>& source, double alpha) {
  using std::abs;
  using ad::abs;
  T l1(0.0);
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 3; ++c) l1 = l1 + abs(source[i][c] - target[i][c]);
  l1 = l1 * (1.0 / 27.0);
  if (alpha == 0.0) return l1;
  const T ssim = ssim_patch(target, source);
  return alpha * (1.0 - ssim) * 0.5 + (1.0 - alpha) * l1;
}

/// One source view for the photometric term.
struct SourceView {
  const Image* image = nullptr;
  Rigid target_to_source;  // M_s M_t^{-1}
};

/// Target colours of the support domain, or nullopt if any offset leaves the image.
std::optional<PatchColors<double>> target_patch(const Image& target, const Pixel& center, double spacing);

/// Photometric term of one support patch with centre depth `depth` (camera z),
/// averaged over the source views where the whole warped patch is valid.
/// nullopt when no source view is valid.
template <typename T>
std::optional<T> patch_photometric(const PatchColors<double>& target, const Pixel& center, double spacing,
                                   const T& depth, std::span<const SourceView> sources, const Intrinsics& K,
                                   double alpha) {
  if (!(ad::value_of(depth) > 1e-6)) return std::nullopt;
  const std::array<Pixel, 9> offsets = support_domain(center, spacing);
  T sum(0.0);
  int valid = 0;
  for (const SourceView& src : sources) {
    PatchColors<T> sampled;
    bool ok = true;
    for (int i = 0; i < 9 && ok; ++i) {
      const auto uv = warp_pixel(offsets[i], depth, K, src.target_to_source);
      ok = uv && bilinear_at(*src.image, (*uv)[0], (*uv)[1], sampled[i].data());
    }
    if (!ok) continue;
    sum = sum + patch_dissimilarity(target, sampled, alpha);
    ++valid;
  }
  if (valid == 0) return std::nullopt;
  return sum * (1.0 / valid);
}

template <typename T>
struct TermValue {
  T value{};
  std::size_t count = 0;
};

/// Mean photometric term over the patches with at least one valid source.
/// Returns 0 with count 0 when no patch is valid.
template <typename T>
TermValue<T> photometric_loss(std::span<const Pixel> centers, std::span<const T> depths, double spacing,
                              const Image& target, std::span<const SourceView> sources, const Intrinsics& K,
                              double alpha) {
  TermValue<T> out{T(0.0), 0};
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto tp = target_patch(target, centers[i], spacing);
    if (!tp) continue;
    const auto v = patch_photometric(*tp, centers[i], spacing, depths[i], sources, K, alpha);
    if (!v) continue;
    out.value = out.value + *v;
    ++out.count;
  }
  if (out.count > 0) out.value = out.value * (1.0 / static_cast<double>(out.count));
  return out;
}

template <typename T>
using Point3 = std::array<T, 3>;

template <typename T>
using Quad = std::array<Point3<T>, 4>;

/// |AB x AC . AD|.
template <typename T>
T quad_triple_product(const Quad<T>& q) {
  using std::abs;
  using ad::abs;
  Point3<T> ab, ac, ad_;
  for (int k = 0; k < 3; ++k) {
    ab[k] = q[1][k] - q[0][k];
    ac[k] = q[2][k] - q[0][k];
    ad_[k] = q[3][k] - q[0][k];
  }
  const T cx = ab[1] * ac[2] - ab[2] * ac[1];
  const T cy = ab[2] * ac[0] - ab[0] * ac[2];
  const T cz = ab[0] * ac[1] - ab[1] * ac[0];
  return abs(cx * ad_[0] + cy * ad_[1] + cz * ad_[2]);
}

/// Mean absolute triple product over quads; 0 with count 0 for no quads.
template <typename T>
TermValue<T> planar_consistency_loss(std::span<const Quad<T>> quads) {
  TermValue<T> out{T(0.0), quads.size()};
  for (const auto& q : quads) out.value = out.value + quad_triple_product(q);
  if (!quads.empty()) out.value = out.value * (1.0 / static_cast<double>(quads.size()));
  return out;
}

/// sum_i w_i (D_i - z_i)^2 with D_i the rendered camera-frame depth.
template <typename T>
T sparse_depth_loss(std::span<const T> rendered, std::span<const double> target_z, std::span<const double> weights) {
  if (rendered.size() != target_z.size() || rendered.size() != weights.size())
    throw std::invalid_argument("sparse_depth_loss: length mismatch");
  T sum(0.0);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const T d = rendered[i] - target_z[i];
    sum = sum + weights[i] * (d * d);
  }
  return sum;
}

/// Batch-normalised loss components that enter the weighted sum.
template <typename T>
struct LossComponents {
  T color{};
  T ph{};
  T pc{};
  T sparse{};
};

template <typename T>
struct LossBreakdown {
  T color{};
  T ph{};
  T pc{};
  T sparse{};
  T total{};
  double lambda_sparse = 0.0;
  std::size_t rays = 0;
  std::size_t patches = 0;
  std::size_t quads = 0;
  std::size_t keypoints = 0;
};

/// total = color + lambda_ph ph + lambda_pc pc + lambda_sparse(iter) sparse,
/// with ablated terms contributing exactly nothing.
template <typename T>
LossBreakdown<T> total_loss(const LossComponents<T>& c, long iter, long total_iters, const LossWeights& weights,
                            const AblationFlags& flags) {
  const EffectiveWeights w = effective_weights(iter, total_iters, weights, flags);
  LossBreakdown<T> out;
  out.color = c.color;
  out.ph = c.ph;
  out.pc = c.pc;
  out.sparse = c.sparse;
  out.lambda_sparse = w.sparse;
  T total = c.color;
  if (w.ph != 0.0) total = total + w.ph * c.ph;
  if (w.pc != 0.0) total = total + w.pc * c.pc;
  if (w.sparse != 0.0) total = total + w.sparse * c.sparse;
  out.total = total;
  return out;
}

}  // namespace structnerf
