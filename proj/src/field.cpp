#include "structnerf/field.hpp"

#include <Eigen/Dense>

#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace structnerf {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

// --------------------------------------------------------------- FieldConfig

FieldConfig FieldConfig::nerf() { return {10, 4, 8, 256, 5}; }

void FieldConfig::validate() const {
  if (pos_freqs < 0 || dir_freqs < 0) throw std::invalid_argument("field: frequency counts must be >= 0");
  if (hidden_layers < 1) throw std::invalid_argument("field: hidden_layers must be >= 1");
  if (hidden_width < 1) throw std::invalid_argument("field: hidden_width must be >= 1");
  if (skip_layer < 0 || skip_layer >= hidden_layers)
    throw std::invalid_argument("field: skip_layer must lie in [0, hidden_layers)");
}

std::string FieldConfig::to_string() const {
  std::ostringstream out;
  out << "pos_freqs=" << pos_freqs << " dir_freqs=" << dir_freqs << " hidden_layers=" << hidden_layers
      << " hidden_width=" << hidden_width << " skip_layer=" << skip_layer;
  return out.str();
}

FieldConfig FieldConfig::parse(const std::string& text) {
  FieldConfig cfg;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("field config: expected key=value, got " + token);
    const std::string key = token.substr(0, eq);
    const int value = std::stoi(token.substr(eq + 1));
    if (key == "pos_freqs") cfg.pos_freqs = value;
    else if (key == "dir_freqs") cfg.dir_freqs = value;
    else if (key == "hidden_layers") cfg.hidden_layers = value;
    else if (key == "hidden_width") cfg.hidden_width = value;
    else if (key == "skip_layer") cfg.skip_layer = value;
    else throw std::invalid_argument("field config: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

// -------------------------------------------------------- positional encoding

void positional_encoding(std::span<const double> v, int freqs, std::span<double> out) {
  const std::size_t k = v.size();
  if (freqs < 0) throw std::invalid_argument("positional_encoding: freqs must be >= 0");
  if (out.size() != k * (2 * static_cast<std::size_t>(freqs) + 1))
    throw std::invalid_argument("positional_encoding: output size mismatch");
  std::copy(v.begin(), v.end(), out.begin());
  double s[3];
  double c[3];
  for (std::size_t i = 0; i < k; ++i) {
    // k is 3 in every caller; fall back to direct evaluation otherwise.
    if (i < 3) {
      s[i] = std::sin(std::numbers::pi * v[i]);
      c[i] = std::cos(std::numbers::pi * v[i]);
    }
  }
  for (int j = 0; j < freqs; ++j) {
    double* sin_out = out.data() + k * (1 + 2 * j);
    double* cos_out = sin_out + k;
    for (std::size_t i = 0; i < k; ++i) {
      if (i < 3) {
        sin_out[i] = s[i];
        cos_out[i] = c[i];
        const double s2 = 2.0 * s[i] * c[i];
        const double c2 = c[i] * c[i] - s[i] * s[i];
        s[i] = s2;
        c[i] = c2;
      } else {
        const double arg = std::ldexp(std::numbers::pi * v[i], j);
        sin_out[i] = std::sin(arg);
        cos_out[i] = std::cos(arg);
      }
    }
  }
}

std::vector<double> positional_encoding(std::span<const double> v, int freqs) {
  if (freqs < 0) throw std::invalid_argument("positional_encoding: freqs must be >= 0");
  std::vector<double> out(v.size() * (2 * static_cast<std::size_t>(freqs) + 1));
  positional_encoding(v, freqs, out);
  return out;
}

// ---------------------------------------------------------------------- rays

Ray camera_ray(const Camera& camera, const Pixel& p, double t_near, double t_far) {
  const Rigid pose = camera.pose();
  Ray ray;
  ray.origin = camera.center();
  ray.direction = (pose.R.transpose() * camera.K.unproject(p)).normalized();
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

double ray_depth_to_z(const Intrinsics& K, const Pixel& p) { return 1.0 / K.unproject(p).norm(); }

std::vector<double> sample_distances(const Ray& ray, int n_samples, bool stratified, Rng& rng) {
  if (n_samples < 2) throw std::invalid_argument("render: n_samples must be >= 2");
  std::vector<double> t(n_samples);
  const double h = (ray.t_far - ray.t_near) / n_samples;
  for (int i = 0; i < n_samples; ++i) t[i] = ray.t_near + (i + (stratified ? rng.uniform() : 0.5)) * h;
  return t;
}

// ------------------------------------------------------------- RadianceField

RadianceField::RadianceField(FieldConfig config) : config_(config) {
  config_.validate();
  std::size_t offset = 0;
  auto make = [&](int in, int out) {
    Layer layer;
    layer.in = in;
    layer.out = out;
    layer.weight = offset;
    offset += static_cast<std::size_t>(in) * out;
    layer.bias = offset;
    offset += out;
    return layer;
  };
  const int w = config_.hidden_width;
  for (int l = 0; l < config_.hidden_layers; ++l) {
    int in = w;
    if (l == 0) in = config_.pos_dim();
    else if (l == config_.skip_layer) in = w + config_.pos_dim();
    trunk_.push_back(make(in, w));
  }
  density_ = make(w, 1);
  feature_ = make(w, w);
  view_ = make(w + config_.dir_dim(), config_.view_width());
  rgb_ = make(config_.view_width(), 3);
  param_count_ = offset;
}

ad::ParamStore RadianceField::init_params(std::uint64_t seed, bool zero_heads) const {
  ad::ParamStore params;
  Rng rng(stream_seed(seed, static_cast<std::uint64_t>(Stream::kInit), 0));
  auto add = [&](const std::string& name, const Layer& layer, bool zero) {
    const std::size_t woff = params.add(name + ".weight", static_cast<std::size_t>(layer.in) * layer.out);
    params.add(name + ".bias", layer.out);
    if (woff != layer.weight) throw std::logic_error("parameter layout mismatch");
    const double bound = std::sqrt(6.0 / (layer.in + layer.out));
    for (std::size_t i = 0; i < static_cast<std::size_t>(layer.in) * layer.out; ++i)
      params.values()[woff + i] = zero ? 0.0 : rng.uniform(-bound, bound);
  };
  for (std::size_t l = 0; l < trunk_.size(); ++l) add("layer" + std::to_string(l), trunk_[l], false);
  add("density", density_, zero_heads);
  add("feature", feature_, false);
  add("view", view_, false);
  add("rgb", rgb_, zero_heads);
  params.metadata = "field: " + config_.to_string();
  return params;
}

void RadianceField::check_layout(const ad::ParamStore& params) const {
  if (params.size() != param_count_)
    throw std::invalid_argument("parameter count " + std::to_string(params.size()) + " does not match field layout " +
                                std::to_string(param_count_));
}

FieldSample<double> RadianceField::eval(const Eigen::Vector3d& x, const Eigen::Vector3d& d,
                                        const ad::ParamStore& params) const {
  check_layout(params);
  if (!params.all_finite()) throw std::invalid_argument("field_eval: non-finite parameters");
  return eval_generic<double>(x, d, std::span<const double>(params.values()));
}

// ----------------------------------------------------------------- rendering

RayRender render_ray(const RadianceField& field, const Ray& ray, const ad::ParamStore& params, int n_samples,
                     bool stratified, Rng& rng) {
  RayRender out;
  out.t = sample_distances(ray, n_samples, stratified, rng);
  std::vector<double> sigma(n_samples);
  std::vector<std::array<double, 3>> rgb(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const auto s = field.eval(ray.origin + out.t[i] * ray.direction, ray.direction, params);
    sigma[i] = s.sigma;
    rgb[i] = s.rgb;
  }
  const auto c = composite<double>(out.t, ray.t_far, sigma, rgb);
  out.rgb = {c.rgb[0], c.rgb[1], c.rgb[2]};
  out.depth = c.depth;
  out.opacity = c.opacity;
  out.weights = c.weights;
  return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  const std::size_t count = std::min<std::size_t>(threads, n);
  std::vector<std::exception_ptr> errors(count);
  for (std::size_t w = 0; w < count; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += count) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

RenderedImage render_image(const RadianceField& field, const Camera& camera, const ad::ParamStore& params,
                           int n_samples, double t_near, double t_far, int threads) {
  camera.validate();
  field.check_layout(params);
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int v = 0; v < camera.height; ++v)
    for (int u = 0; u < camera.width; ++u) rays.push_back(camera_ray(camera, {double(u), double(v)}, t_near, t_far));
  BatchRender batch(field, params);
  BatchOptions options;
  options.n_samples = n_samples;
  options.stratified = false;
  options.threads = threads;
  batch.forward(rays, options);
  RenderedImage out{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1),
                    Image(camera.width, camera.height, 1)};
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const std::size_t r = static_cast<std::size_t>(v) * camera.width + u;
      for (int c = 0; c < 3; ++c) out.rgb.at(u, v, c) = batch.rgb(r)[c];
      out.depth.at(u, v) = batch.depth(r) * ray_depth_to_z(camera.K, {double(u), double(v)});
      out.opacity.at(u, v) = batch.opacity(r);
    }
  }
  return out;
}

// --------------------------------------------------------------- BatchRender

struct BatchRender::Chunk {
  std::size_t first = 0;
  std::size_t count = 0;
  int samples = 0;
  std::vector<double> t;         // count * samples
  std::vector<double> t_far;     // per ray
  std::vector<double> weights;   // count * samples
  std::vector<double> survive;   // exp(-sigma delta), count * samples
  std::vector<double> trans;     // transmittance before each sample
  Eigen::MatrixXd enc;           // pos_dim x N
  Eigen::MatrixXd dir_enc;       // dir_dim x count
  std::vector<Eigen::MatrixXd> act;  // trunk activations
  Eigen::RowVectorXd density_pre;
  Eigen::RowVectorXd sigma;
  Eigen::MatrixXd feature;
  Eigen::MatrixXd view_act;
  Eigen::MatrixXd rgb;  // 3 x N after sigmoid
};

BatchRender::BatchRender(const RadianceField& field, const ad::ParamStore& params) : field_(field), params_(params) {
  field_.check_layout(params_);
}
BatchRender::~BatchRender() = default;
BatchRender::BatchRender(BatchRender&&) noexcept = default;

void BatchRender::forward(std::span<const Ray> rays, const BatchOptions& options) {
  if (options.n_samples < 2) throw std::invalid_argument("render: n_samples must be >= 2");
  if (!params_.all_finite()) throw std::invalid_argument("render: non-finite parameters");
  if (!options.ray_ids.empty() && options.ray_ids.size() != rays.size())
    throw std::invalid_argument("render: ray_ids must match the ray count");
  ray_count_ = rays.size();
  rgb_.assign(ray_count_, Eigen::Vector3d::Zero());
  depth_.assign(ray_count_, 0.0);
  opacity_.assign(ray_count_, 0.0);
  const std::size_t chunk_rays = std::max(1, options.chunk_rays);
  const std::size_t n_chunks = (ray_count_ + chunk_rays - 1) / chunk_rays;
  chunks_.assign(n_chunks, Chunk{});
  for (std::size_t c = 0; c < n_chunks; ++c) {
    chunks_[c].first = c * chunk_rays;
    chunks_[c].count = std::min(chunk_rays, ray_count_ - chunks_[c].first);
  }
  parallel_for(n_chunks, options.threads, [&](std::size_t c) { forward_chunk(chunks_[c], rays, chunks_[c].first, options); });
}

void BatchRender::forward_chunk(Chunk& ch, std::span<const Ray> rays, std::size_t first,
                                const BatchOptions& options) {
  const FieldConfig& cfg = field_.config();
  const double* p = params_.values().data();
  const int S = options.n_samples;
  const std::size_t R = ch.count;
  const Eigen::Index N = static_cast<Eigen::Index>(R * S);
  ch.samples = S;
  ch.t.resize(N);
  ch.t_far.resize(R);
  ch.enc.resize(cfg.pos_dim(), N);
  ch.dir_enc.resize(cfg.dir_dim(), static_cast<Eigen::Index>(R));

  for (std::size_t r = 0; r < R; ++r) {
    const Ray& ray = rays[first + r];
    const std::uint64_t id = options.ray_ids.empty() ? first + r : options.ray_ids[first + r];
    Rng rng(mix64(options.seed ^ id));
    const auto t = sample_distances(ray, S, options.stratified, rng);
    ch.t_far[r] = ray.t_far;
    for (int i = 0; i < S; ++i) {
      const Eigen::Index col = static_cast<Eigen::Index>(r * S + i);
      ch.t[col] = t[i];
      const Eigen::Vector3d x = ray.origin + t[i] * ray.direction;
      positional_encoding(std::span<const double>(x.data(), 3), cfg.pos_freqs,
                          std::span<double>(ch.enc.col(col).data(), cfg.pos_dim()));
    }
    positional_encoding(std::span<const double>(ray.direction.data(), 3), cfg.dir_freqs,
                        std::span<double>(ch.dir_enc.col(static_cast<Eigen::Index>(r)).data(), cfg.dir_dim()));
  }

  const auto& trunk = field_.trunk();
  const int W = cfg.hidden_width;
  ch.act.resize(trunk.size());
  for (std::size_t l = 0; l < trunk.size(); ++l) {
    const auto& L = trunk[l];
    ConstRowMap Wt(p + L.weight, L.out, L.in);
    Eigen::Map<const Eigen::VectorXd> b(p + L.bias, L.out);
    Eigen::MatrixXd z;
    if (l == 0) z.noalias() = Wt * ch.enc;
    else if (static_cast<int>(l) == cfg.skip_layer) {
      z.noalias() = Wt.leftCols(W) * ch.act[l - 1];
      z.noalias() += Wt.rightCols(cfg.pos_dim()) * ch.enc;
    } else z.noalias() = Wt * ch.act[l - 1];
    z.colwise() += b;
    ch.act[l] = z.cwiseMax(0.0);
  }
  const Eigen::MatrixXd& h = ch.act.back();

  const auto& D = field_.density_head();
  ch.density_pre.noalias() = ConstRowMap(p + D.weight, 1, D.in) * h;
  ch.density_pre.array() += p[D.bias];
  ch.sigma = ch.density_pre.unaryExpr([](double a) { return ad::softplus(a); });

  const auto& F = field_.feature_layer();
  ch.feature.noalias() = ConstRowMap(p + F.weight, F.out, F.in) * h;
  ch.feature.colwise() += Eigen::Map<const Eigen::VectorXd>(p + F.bias, F.out);

  const auto& V = field_.view_layer();
  ConstRowMap Wv(p + V.weight, V.out, V.in);
  Eigen::MatrixXd zv;
  zv.noalias() = Wv.leftCols(W) * ch.feature;
  const Eigen::MatrixXd dir_term =
      (Wv.rightCols(cfg.dir_dim()) * ch.dir_enc).colwise() + Eigen::Map<const Eigen::VectorXd>(p + V.bias, V.out);
  for (std::size_t r = 0; r < R; ++r)
    zv.middleCols(static_cast<Eigen::Index>(r * S), S).colwise() += dir_term.col(static_cast<Eigen::Index>(r));
  ch.view_act = zv.cwiseMax(0.0);

  const auto& C = field_.rgb_head();
  Eigen::MatrixXd q;
  q.noalias() = ConstRowMap(p + C.weight, C.out, C.in) * ch.view_act;
  q.colwise() += Eigen::Map<const Eigen::VectorXd>(p + C.bias, C.out);
  ch.rgb = q.unaryExpr([](double a) { return ad::sigmoid(a); });

  ch.weights.resize(N);
  ch.survive.resize(N);
  ch.trans.resize(N);
  for (std::size_t r = 0; r < R; ++r) {
    double T = 1.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double depth = 0.0;
    double opacity = 0.0;
    for (int i = 0; i < S; ++i) {
      const std::size_t k = r * S + i;
      const double delta = (i + 1 < S ? ch.t[k + 1] : ch.t_far[r]) - ch.t[k];
      const double survive = std::exp(-ch.sigma[static_cast<Eigen::Index>(k)] * delta);
      const double w = T * (1.0 - survive);
      ch.trans[k] = T;
      ch.survive[k] = survive;
      ch.weights[k] = w;
      color += w * ch.rgb.col(static_cast<Eigen::Index>(k));
      depth += w * ch.t[k];
      opacity += w;
      T *= survive;
    }
    rgb_[first + r] = color;
    depth_[first + r] = depth;
    opacity_[first + r] = opacity;
  }
}

void BatchRender::backward(std::span<const Eigen::Vector3d> d_rgb, std::span<const double> d_depth,
                           std::vector<double>& grad, int threads) {
  if (d_rgb.size() != ray_count_ || d_depth.size() != ray_count_)
    throw std::invalid_argument("BatchRender::backward: gradient size mismatch");
  grad.resize(params_.size(), 0.0);
  // Eigen-aligned buffers: the vectorised kernels peel differently for other
  // alignments, which would make the bits depend on where malloc put them.
  std::vector<Eigen::VectorXd> partial(chunks_.size());
  parallel_for(chunks_.size(), threads, [&](std::size_t c) {
    partial[c].setZero(static_cast<Eigen::Index>(params_.size()));
    backward_chunk(chunks_[c], d_rgb, d_depth, partial[c].data());
  });
  // Fixed summation order keeps results independent of the thread count.
  for (const auto& g : partial)
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[static_cast<Eigen::Index>(i)];
}

void BatchRender::backward_chunk(Chunk& ch, std::span<const Eigen::Vector3d> d_rgb, std::span<const double> d_depth,
                                 double* g) const {
  const FieldConfig& cfg = field_.config();
  const double* p = params_.values().data();
  const int S = ch.samples;
  const std::size_t R = ch.count;
  const Eigen::Index N = static_cast<Eigen::Index>(R * S);
  const int W = cfg.hidden_width;

  // Volume rendering: dL/dsigma_i = delta_i (T_{i+1} g_i - sum_{k>i} w_k g_k),
  // dL/dc_i = w_i dL/drgb, with g_i = dL/drgb . c_i + dL/ddepth t_i.
  Eigen::RowVectorXd d_sigma(N);
  Eigen::MatrixXd d_color(3, N);
  for (std::size_t r = 0; r < R; ++r) {
    const Eigen::Vector3d& gc = d_rgb[ch.first + r];
    const double gd = d_depth[ch.first + r];
    double suffix = 0.0;
    for (int i = S - 1; i >= 0; --i) {
      const std::size_t k = r * S + i;
      const Eigen::Index col = static_cast<Eigen::Index>(k);
      const double delta = (i + 1 < S ? ch.t[k + 1] : ch.t_far[r]) - ch.t[k];
      const double gi = gc.dot(ch.rgb.col(col)) + gd * ch.t[k];
      const double t_next = ch.trans[k] * ch.survive[k];
      d_sigma[col] = delta * (t_next * gi - suffix);
      suffix += ch.weights[k] * gi;
      d_color.col(col) = ch.weights[k] * gc;
    }
  }

  // Colour head and view branch.
  const auto& C = field_.rgb_head();
  const Eigen::MatrixXd dq = d_color.cwiseProduct(ch.rgb.cwiseProduct((1.0 - ch.rgb.array()).matrix()));
  RowMap(g + C.weight, C.out, C.in).noalias() += dq * ch.view_act.transpose();
  Eigen::Map<Eigen::VectorXd>(g + C.bias, C.out) += dq.rowwise().sum();
  Eigen::MatrixXd dzv;
  dzv.noalias() = ConstRowMap(p + C.weight, C.out, C.in).transpose() * dq;
  dzv = dzv.cwiseProduct((ch.view_act.array() > 0.0).cast<double>().matrix());

  const auto& V = field_.view_layer();
  RowMap gv(g + V.weight, V.out, V.in);
  gv.leftCols(W).noalias() += dzv * ch.feature.transpose();
  Eigen::MatrixXd dz_ray(V.out, static_cast<Eigen::Index>(R));
  for (std::size_t r = 0; r < R; ++r)
    dz_ray.col(static_cast<Eigen::Index>(r)) = dzv.middleCols(static_cast<Eigen::Index>(r * S), S).rowwise().sum();
  gv.rightCols(cfg.dir_dim()).noalias() += dz_ray * ch.dir_enc.transpose();
  Eigen::Map<Eigen::VectorXd>(g + V.bias, V.out) += dz_ray.rowwise().sum();
  Eigen::MatrixXd d_feature;
  d_feature.noalias() = ConstRowMap(p + V.weight, V.out, V.in).leftCols(W).transpose() * dzv;

  // Feature and density heads.
  const Eigen::MatrixXd& h = ch.act.back();
  const auto& F = field_.feature_layer();
  RowMap(g + F.weight, F.out, F.in).noalias() += d_feature * h.transpose();
  Eigen::Map<Eigen::VectorXd>(g + F.bias, F.out) += d_feature.rowwise().sum();
  Eigen::MatrixXd dh;
  dh.noalias() = ConstRowMap(p + F.weight, F.out, F.in).transpose() * d_feature;

  const auto& D = field_.density_head();
  const Eigen::RowVectorXd da =
      d_sigma.cwiseProduct(ch.density_pre.unaryExpr([](double a) { return ad::sigmoid(a); }));
  RowMap(g + D.weight, 1, D.in).noalias() += da * h.transpose();
  g[D.bias] += da.sum();
  dh.noalias() += ConstRowMap(p + D.weight, 1, D.in).transpose() * da;

  // Trunk.
  const auto& trunk = field_.trunk();
  for (std::size_t l = trunk.size(); l-- > 0;) {
    const auto& L = trunk[l];
    const Eigen::MatrixXd dz = dh.cwiseProduct((ch.act[l].array() > 0.0).cast<double>().matrix());
    RowMap gw(g + L.weight, L.out, L.in);
    Eigen::Map<Eigen::VectorXd>(g + L.bias, L.out) += dz.rowwise().sum();
    ConstRowMap Wt(p + L.weight, L.out, L.in);
    if (l == 0) {
      gw.noalias() += dz * ch.enc.transpose();
    } else if (static_cast<int>(l) == cfg.skip_layer) {
      gw.leftCols(W).noalias() += dz * ch.act[l - 1].transpose();
      gw.rightCols(cfg.pos_dim()).noalias() += dz * ch.enc.transpose();
      dh.noalias() = Wt.leftCols(W).transpose() * dz;
    } else {
      gw.noalias() += dz * ch.act[l - 1].transpose();
      dh.noalias() = Wt.transpose() * dz;
    }
  }
}

// Explicit instantiations for the scalar types used across the library.
template FieldSample<double> RadianceField::eval_generic<double>(const Eigen::Vector3d&, const Eigen::Vector3d&,
                                                                 std::span<const double>) const;
template FieldSample<ad::Var> RadianceField::eval_generic<ad::Var>(const Eigen::Vector3d&, const Eigen::Vector3d&,
                                                                   std::span<const ad::Var>) const;

}  // namespace structnerf
