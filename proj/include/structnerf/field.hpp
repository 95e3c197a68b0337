#pragma once

// Positional-encoded MLP radiance field and discrete volume rendering.

#include <Eigen/Core>

#include <array>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "structnerf/autodiff.hpp"
#include "structnerf/camera.hpp"
#include "structnerf/image.hpp"
#include "structnerf/random.hpp"

namespace structnerf {

struct FieldConfig {
  int pos_freqs = 6;
  int dir_freqs = 4;
  int hidden_layers = 4;
  int hidden_width = 128;
  /// Hidden layer whose input is concat(previous activation, encoded position).
  /// 0 disables the skip connection (layer 0 already consumes the encoding).
  int skip_layer = 2;

  /// The original NeRF trunk: 8x256, position re-injected into the sixth layer
  /// (NeRF's `skips=[4]`), 10 position / 4 direction frequencies.
  static FieldConfig nerf();

  void validate() const;
  int pos_dim() const { return 3 * (2 * pos_freqs + 1); }
  int dir_dim() const { return 3 * (2 * dir_freqs + 1); }
  int view_width() const { return std::max(1, hidden_width / 2); }

  /// "pos_freqs=6 dir_freqs=4 hidden_layers=4 hidden_width=128 skip_layer=2"
  std::string to_string() const;
  static FieldConfig parse(const std::string& text);
  friend bool operator==(const FieldConfig&, const FieldConfig&) = default;
};

/// Writes [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{L-1} pi v), cos(2^{L-1} pi v)]
/// into `out` (length k * (2L + 1)). Higher octaves use the double-angle recurrence.
void positional_encoding(std::span<const double> v, int freqs, std::span<double> out);
std::vector<double> positional_encoding(std::span<const double> v, int freqs);

template <typename T>
struct FieldSample {
  std::array<T, 3> rgb{};
  T sigma{};
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;
};

/// Ray through pixel `p` of `camera` with unit direction.
Ray camera_ray(const Camera& camera, const Pixel& p, double t_near, double t_far);
/// Factor converting distance along the unit ray of pixel `p` into camera-frame z.
double ray_depth_to_z(const Intrinsics& K, const Pixel& p);

class RadianceField {
 public:
  explicit RadianceField(FieldConfig config);

  const FieldConfig& config() const { return config_; }

  /// Glorot-uniform weights, zero biases. `zero_heads` zeroes the density and
  /// colour output layers (sigma = softplus(0), rgb = 0.5 everywhere).
  ad::ParamStore init_params(std::uint64_t seed, bool zero_heads = false) const;

  /// Throws std::invalid_argument if `params` does not match this layout.
  void check_layout(const ad::ParamStore& params) const;

  /// (rgb, sigma) at position x seen from unit direction d.
  FieldSample<double> eval(const Eigen::Vector3d& x, const Eigen::Vector3d& d, const ad::ParamStore& params) const;

  /// Same network over an arbitrary scalar type; params in ParamStore order.
  template <typename T>
  FieldSample<T> eval_generic(const Eigen::Vector3d& x, const Eigen::Vector3d& d, std::span<const T> params) const;

  struct Layer {
    std::size_t weight = 0;  // offsets into the parameter vector, row-major [out, in]
    std::size_t bias = 0;
    int in = 0;
    int out = 0;
  };
  const std::vector<Layer>& trunk() const { return trunk_; }
  const Layer& density_head() const { return density_; }
  const Layer& feature_layer() const { return feature_; }
  const Layer& view_layer() const { return view_; }
  const Layer& rgb_head() const { return rgb_; }
  std::size_t param_count() const { return param_count_; }

 private:
  FieldConfig config_;
  std::vector<Layer> trunk_;
  Layer density_, feature_, view_, rgb_;
  std::size_t param_count_ = 0;
  std::vector<std::pair<std::string, std::size_t>> slice_names_;
};

/// Sample distances for one ray: bin midpoints, or one uniform sample per bin
/// when `stratified`.
std::vector<double> sample_distances(const Ray& ray, int n_samples, bool stratified, Rng& rng);

template <typename T>
struct Composite {
  std::array<T, 3> rgb{};
  T depth{};
  T opacity{};
  std::vector<T> weights;
};

/// Emission-absorption quadrature: delta_i = t_{i+1} - t_i (last: t_far - t_n),
/// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i} (1 - alpha_j),
/// rgb = sum T_i alpha_i c_i, depth = sum T_i alpha_i t_i.
template <typename T>
Composite<T> composite(std::span<const double> t, double t_far, std::span<const T> sigma,
                       std::span<const std::array<T, 3>> rgb);

struct RayRender {
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  double depth = 0.0;  // distance along the ray
  double opacity = 0.0;
  std::vector<double> t;
  std::vector<double> weights;
};

/// Throws std::invalid_argument if n_samples < 2.
RayRender render_ray(const RadianceField& field, const Ray& ray, const ad::ParamStore& params, int n_samples,
                     bool stratified, Rng& rng);

struct RenderedImage {
  Image rgb;
  Image depth;    // camera-frame z
  Image opacity;  // sum of weights
};

/// Deterministic (midpoint) render of every pixel, row-major.
RenderedImage render_image(const RadianceField& field, const Camera& camera, const ad::ParamStore& params,
                           int n_samples, double t_near, double t_far, int threads = 1);

// ---------------------------------------------------------------------------
// Batched rendering with an analytic backward pass, used by the trainer.

struct BatchOptions {
  int n_samples = 64;
  bool stratified = true;
  std::uint64_t seed = 0;  // per-ray sampling seed is mix64(seed ^ id), id = ray_ids[r] or r
  std::span<const std::uint64_t> ray_ids;
  int threads = 1;
  int chunk_rays = 64;
};

class BatchRender {
 public:
  BatchRender(const RadianceField& field, const ad::ParamStore& params);
  ~BatchRender();
  BatchRender(BatchRender&&) noexcept;

  /// Renders all rays, keeping activations for backward().
  void forward(std::span<const Ray> rays, const BatchOptions& options);

  std::size_t size() const { return ray_count_; }
  const Eigen::Vector3d& rgb(std::size_t r) const { return rgb_[r]; }
  double depth(std::size_t r) const { return depth_[r]; }
  double opacity(std::size_t r) const { return opacity_[r]; }

  /// Accumulates dL/dparams into `grad` given dL/drgb and dL/ddepth per ray.
  void backward(std::span<const Eigen::Vector3d> d_rgb, std::span<const double> d_depth, std::vector<double>& grad,
                int threads = 1);

 private:
  struct Chunk;
  void forward_chunk(Chunk& chunk, std::span<const Ray> rays, std::size_t first, const BatchOptions& options);
  void backward_chunk(Chunk& chunk, std::span<const Eigen::Vector3d> d_rgb, std::span<const double> d_depth,
                      double* grad) const;

  const RadianceField& field_;
  const ad::ParamStore& params_;
  std::vector<Chunk> chunks_;
  std::vector<Eigen::Vector3d> rgb_;
  std::vector<double> depth_;
  std::vector<double> opacity_;
  std::size_t ray_count_ = 0;
};

/// Runs fn(i) for i in [0, n) over `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------

template <typename T>
FieldSample<T> RadianceField::eval_generic(const Eigen::Vector3d& x, const Eigen::Vector3d& d,
                                           std::span<const T> params) const {
  const std::vector<double> ex = positional_encoding(std::span<const double>(x.data(), 3), config_.pos_freqs);
  const std::vector<double> ed = positional_encoding(std::span<const double>(d.data(), 3), config_.dir_freqs);

  auto dense = [&](const Layer& layer, const auto& input, bool activate) {
    std::vector<T> out(layer.out);
    for (int o = 0; o < layer.out; ++o) {
      T acc = params[layer.bias + o];
      for (int i = 0; i < layer.in; ++i)
        acc = acc + params[layer.weight + static_cast<std::size_t>(o) * layer.in + i] * input[i];
      out[o] = activate ? ad::relu(acc) : acc;
    }
    return out;
  };

  std::vector<T> h;
  for (std::size_t l = 0; l < trunk_.size(); ++l) {
    if (l == 0) {
      std::vector<T> in(ex.begin(), ex.end());
      h = dense(trunk_[l], in, true);
    } else if (static_cast<int>(l) == config_.skip_layer) {
      std::vector<T> in = h;
      in.insert(in.end(), ex.begin(), ex.end());
      h = dense(trunk_[l], in, true);
    } else {
      h = dense(trunk_[l], h, true);
    }
  }
  FieldSample<T> s;
  s.sigma = ad::softplus(dense(density_, h, false)[0]);
  std::vector<T> view_in = dense(feature_, h, false);
  view_in.insert(view_in.end(), ed.begin(), ed.end());
  const std::vector<T> hv = dense(view_, view_in, true);
  const std::vector<T> c = dense(rgb_, hv, false);
  for (int k = 0; k < 3; ++k) s.rgb[k] = ad::sigmoid(c[k]);
  return s;
}

template <typename T>
Composite<T> composite(std::span<const double> t, double t_far, std::span<const T> sigma,
                       std::span<const std::array<T, 3>> rgb) {
  const std::size_t n = t.size();
  Composite<T> out;
  out.weights.resize(n);
  out.rgb = {T(0.0), T(0.0), T(0.0)};
  out.depth = T(0.0);
  out.opacity = T(0.0);
  T transmittance(1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double delta = (i + 1 < n ? t[i + 1] : t_far) - t[i];
    using std::exp;
    const T survive = exp(-(sigma[i] * delta));  // 1 - alpha_i
    const T w = transmittance * (1.0 - survive);
    out.weights[i] = w;
    for (int k = 0; k < 3; ++k) out.rgb[k] = out.rgb[k] + w * rgb[i][k];
    out.depth = out.depth + w * t[i];
    out.opacity = out.opacity + w;
    transmittance = transmittance * survive;
  }
  return out;
}

}  // namespace structnerf
