#include "structnerf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "structnerf/random.hpp"
#include "structnerf/sfm.hpp"

namespace structnerf {

using ad::Tape;
using ad::Var;

namespace {

constexpr std::uint64_t kKeypointIds = 1ULL << 40;
constexpr std::uint64_t kQuadIds = 2ULL << 40;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("train config: bad value '" + v + "' for " + key);
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw std::invalid_argument("train config: " + key + " must be an integer");
  return static_cast<long long>(d);
}

}  // namespace

// ------------------------------------------------------------------ config

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.batch_rays = 256;
  c.n_samples = 32;
  c.field.pos_freqs = 6;
  c.field.dir_freqs = 4;
  c.field.hidden_layers = 3;
  c.field.hidden_width = 64;
  c.field.skip_layer = 0;
  c.checkpoint_every = 0;
  return c;
}

void TrainConfig::validate() const {
  if (total_iters < 1) throw std::invalid_argument("train config: total_iters must be >= 1");
  if (batch_rays < 1) throw std::invalid_argument("train config: batch_rays must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
    throw std::invalid_argument("train config: bad Adam hyper-parameters");
  if (n_samples < 2) throw std::invalid_argument("train config: n_samples must be >= 2");
  if (patch_spacing < 0.0) throw std::invalid_argument("train config: patch_spacing must be non-negative");
  if (source_views < 1) throw std::invalid_argument("train config: source_views must be >= 1");
  if (max_keypoint_rays < 0 || quads_per_plane < 0 || plane_threshold < 0 || checkpoint_every < 0)
    throw std::invalid_argument("train config: counts must be non-negative");
  if (threads < 1) throw std::invalid_argument("train config: threads must be >= 1");
  weights.validate();
  field.validate();
}

std::string TrainConfig::to_string() const {
  std::ostringstream o;
  o << "total_iters = " << total_iters << '\n'
    << "batch_rays = " << batch_rays << '\n'
    << "learning_rate = " << format_double(learning_rate) << '\n'
    << "beta1 = " << format_double(beta1) << '\n'
    << "beta2 = " << format_double(beta2) << '\n'
    << "epsilon = " << format_double(epsilon) << '\n'
    << "seed = " << seed << '\n'
    << "ablate = " << (flags.to_string().empty() ? "none" : flags.to_string()) << '\n'
    << "lambda_ph = " << format_double(weights.lambda_ph) << '\n'
    << "lambda_pc = " << format_double(weights.lambda_pc) << '\n'
    << "lambda_sparse = " << format_double(weights.lambda_sparse) << '\n'
    << "alpha = " << format_double(weights.alpha) << '\n'
    << "warmup_fraction = " << format_double(weights.warmup_fraction) << '\n'
    << "field = " << field.to_string() << '\n'
    << "n_samples = " << n_samples << '\n'
    << "patch_spacing = " << format_double(patch_spacing) << '\n'
    << "source_views = " << source_views << '\n'
    << "max_keypoint_rays = " << max_keypoint_rays << '\n'
    << "quads_per_plane = " << quads_per_plane << '\n'
    << "plane_threshold = " << plane_threshold << '\n'
    << "seg_k = " << format_double(segmentation.k) << '\n'
    << "seg_sigma = " << format_double(segmentation.sigma) << '\n'
    << "seg_min_size = " << segmentation.min_size << '\n'
    << "checkpoint_every = " << checkpoint_every << '\n'
    << "threads = " << threads << '\n';
  return o.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("train config: expected key = value, got '" + t + "'");
    const std::string k = trim(t.substr(0, eq));
    const std::string v = trim(t.substr(eq + 1));
    if (k == "total_iters") c.total_iters = to_integer(k, v);
    else if (k == "batch_rays") c.batch_rays = static_cast<int>(to_integer(k, v));
    else if (k == "learning_rate") c.learning_rate = to_double(k, v);
    else if (k == "beta1") c.beta1 = to_double(k, v);
    else if (k == "beta2") c.beta2 = to_double(k, v);
    else if (k == "epsilon") c.epsilon = to_double(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(to_integer(k, v));
    else if (k == "ablate") c.flags = AblationFlags::parse(v);
    else if (k == "lambda_ph") c.weights.lambda_ph = to_double(k, v);
    else if (k == "lambda_pc") c.weights.lambda_pc = to_double(k, v);
    else if (k == "lambda_sparse") c.weights.lambda_sparse = to_double(k, v);
    else if (k == "alpha") c.weights.alpha = to_double(k, v);
    else if (k == "warmup_fraction") c.weights.warmup_fraction = to_double(k, v);
    else if (k == "field") c.field = FieldConfig::parse(v);
    else if (k == "n_samples") c.n_samples = static_cast<int>(to_integer(k, v));
    else if (k == "patch_spacing") c.patch_spacing = to_double(k, v);
    else if (k == "source_views") c.source_views = static_cast<int>(to_integer(k, v));
    else if (k == "max_keypoint_rays") c.max_keypoint_rays = static_cast<int>(to_integer(k, v));
    else if (k == "quads_per_plane") c.quads_per_plane = static_cast<int>(to_integer(k, v));
    else if (k == "plane_threshold") c.plane_threshold = static_cast<int>(to_integer(k, v));
    else if (k == "seg_k") c.segmentation.k = to_double(k, v);
    else if (k == "seg_sigma") c.segmentation.sigma = to_double(k, v);
    else if (k == "seg_min_size") c.segmentation.min_size = static_cast<int>(to_integer(k, v));
    else if (k == "checkpoint_every") c.checkpoint_every = to_integer(k, v);
    else if (k == "threads") c.threads = static_cast<int>(to_integer(k, v));
    else throw std::invalid_argument("train config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------------ Adam

void adam_step(std::vector<double>& params, std::span<const double> grad, AdamState& state, double lr, double beta1,
               double beta2, double epsilon) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + epsilon);
  }
}

// ------------------------------------------------------------------ batching

TrainingData::TrainingData(const Dataset& dataset, const TrainConfig& config) : dataset_(&dataset) {
  const int n = static_cast<int>(dataset.train.size());
  sources_.resize(n);
  planes_.resize(n);
  keypoint_pixels_.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = config.source_views; k >= 1; --k)
      if (i - k >= 0) sources_[i].push_back(i - k);
    for (int k = 1; k <= config.source_views; ++k)
      if (i + k < n) sources_[i].push_back(i + k);

    const View& v = dataset.train[i];
    const int threshold =
        config.plane_threshold > 0 ? config.plane_threshold : plane_area_threshold(v.rgb.width, v.rgb.height);
    planes_[i] = extract_planes(felzenszwalb(v.rgb, config.segmentation), threshold);

    for (const auto& kp : v.keypoints) {
      const double u = std::clamp(std::round(kp.pixel.u), 0.0, static_cast<double>(v.rgb.width - 1));
      const double y = std::clamp(std::round(kp.pixel.v), 0.0, static_cast<double>(v.rgb.height - 1));
      keypoint_pixels_[i].push_back({u, y});
    }
  }
}

RayBatch sample_ray_batch(const TrainingData& data, const TrainConfig& config, long iter) {
  const Dataset& ds = data.dataset();
  RayBatch b;
  b.iter = iter;
  b.view = static_cast<int>(iter % static_cast<long>(ds.train.size()));
  const View& view = ds.train[b.view];
  const EffectiveWeights w = effective_weights(iter, config.total_iters, config.weights, config.flags);

  const auto& kp_pixels = data.keypoint_pixels(b.view);
  const bool from_keypoints = config.flags.no_dense_sampling && !kp_pixels.empty();
  Rng pixel_rng(stream_seed(config.seed, static_cast<std::uint64_t>(Stream::kPixels), static_cast<std::uint64_t>(iter)));
  b.pixels.reserve(config.batch_rays);
  for (int i = 0; i < config.batch_rays; ++i) {
    if (from_keypoints) {
      b.pixels.push_back(kp_pixels[pixel_rng.below(kp_pixels.size())]);
    } else {
      const auto x = pixel_rng.below(static_cast<std::uint64_t>(view.rgb.width));
      const auto y = pixel_rng.below(static_cast<std::uint64_t>(view.rgb.height));
      b.pixels.push_back({static_cast<double>(x), static_cast<double>(y)});
    }
  }
  for (const Pixel& p : b.pixels) {
    const int x = static_cast<int>(p.u);
    const int y = static_cast<int>(p.v);
    b.colors.push_back({view.rgb.at(x, y, 0), view.rgb.at(x, y, 1), view.rgb.at(x, y, 2)});
  }

  if (w.sparse != 0.0 && config.max_keypoint_rays > 0) {
    const auto& hits = view.keypoints;
    if (hits.size() <= static_cast<std::size_t>(config.max_keypoint_rays)) {
      b.keypoints = hits;
    } else {
      Rng rng(stream_seed(config.seed, static_cast<std::uint64_t>(Stream::kKeypoints), static_cast<std::uint64_t>(iter)));
      std::vector<std::size_t> idx(hits.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (int i = 0; i < config.max_keypoint_rays; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
        b.keypoints.push_back(hits[idx[i]]);
      }
    }
  }

  if (w.pc != 0.0 && config.quads_per_plane > 0) {
    Rng rng(stream_seed(config.seed, static_cast<std::uint64_t>(Stream::kQuads), static_cast<std::uint64_t>(iter)));
    for (const auto& region : data.planes(b.view))
      for (int q = 0; q < config.quads_per_plane; ++q) {
        try {
          b.quads.push_back(sample_plane_quad(region, rng));
        } catch (const DegenerateRegion&) {
        }
      }
  }

  auto add_ray = [&](const Pixel& p, std::uint64_t id) {
    b.rays.push_back(camera_ray(view.camera, p, ds.t_near, ds.t_far));
    b.ray_ids.push_back(id);
    b.z_factor.push_back(ray_depth_to_z(view.camera.K, p));
  };
  for (std::size_t i = 0; i < b.pixels.size(); ++i) add_ray(b.pixels[i], i);
  for (std::size_t k = 0; k < b.keypoints.size(); ++k) add_ray(b.keypoints[k].pixel, kKeypointIds + k);
  for (std::size_t j = 0; j < b.quads.size(); ++j)
    for (int c = 0; c < 4; ++c)
      add_ray({static_cast<double>(b.quads[j][c].x), static_cast<double>(b.quads[j][c].y)}, kQuadIds + 4 * j + c);
  return b;
}

// ------------------------------------------------------------------ loss

LossBreakdown<double> batch_loss(const RadianceField& field, const ad::ParamStore& params, const TrainingData& data,
                                 const TrainConfig& config, const RayBatch& batch, std::vector<double>* grad,
                                 LossTerm term, bool stratified) {
  const Dataset& ds = data.dataset();
  const View& view = ds.train[batch.view];
  const EffectiveWeights w = effective_weights(batch.iter, config.total_iters, config.weights, config.flags);
  const bool want_ph = w.ph != 0.0 || term == LossTerm::kPh;

  BatchRender render(field, params);
  BatchOptions opt;
  opt.n_samples = config.n_samples;
  opt.stratified = stratified;
  opt.seed = stream_seed(config.seed, static_cast<std::uint64_t>(Stream::kStrata), static_cast<std::uint64_t>(batch.iter));
  opt.threads = config.threads;
  opt.ray_ids = batch.ray_ids;
  render.forward(batch.rays, opt);

  Tape tape;
  tape.check_finite = false;
  const std::size_t n_rays = batch.rays.size();
  const std::size_t n_pix = batch.pixels.size();
  std::vector<Rgb<Var>> rgb(n_pix);
  std::vector<Var> depth(n_rays);  // constants unless the depth feeds a term
  for (std::size_t r = 0; r < n_pix; ++r)
    for (int k = 0; k < 3; ++k) rgb[r][k] = tape.variable(render.rgb(r)[k]);
  auto depth_leaf = [&](std::size_t r) {
    if (depth[r].is_constant()) depth[r] = tape.variable(render.depth(r));
    return depth[r] * batch.z_factor[r];  // camera-frame z
  };

  LossComponents<Var> comp;
  LossBreakdown<double> out;
  out.rays = n_pix;
  comp.color = color_loss<Var>(rgb, batch.colors) * (1.0 / static_cast<double>(n_pix));

  if (want_ph) {
    const double spacing = config.flags.no_patch ? 0.0 : config.patch_spacing;
    std::vector<SourceView> sources;
    const Rigid target = view.camera.pose();
    for (int s : data.sources(batch.view))
      sources.push_back({&ds.train[s].rgb, ds.train[s].camera.pose() * target.inverse()});
    Tape local;
    local.check_finite = false;
    Var sum(0.0);
    std::size_t valid = 0;
    for (std::size_t r = 0; r < n_pix; ++r) {
      const auto tp = target_patch(view.rgb, batch.pixels[r], spacing);
      if (!tp) continue;
      const double z = render.depth(r) * batch.z_factor[r];
      local.clear();
      const Var d = local.variable(z);
      const auto v = patch_photometric<Var>(*tp, batch.pixels[r], spacing, d, sources, view.camera.K,
                                            config.weights.alpha);
      if (!v) continue;
      double partial = 0.0;
      if (!v->is_constant()) partial = local.adjoints(*v)[d.index()];
      const Var zr = depth_leaf(r);
      const Var spliced = tape.custom(std::span<const Var>(&zr, 1), v->value(), std::span<const double>(&partial, 1));
      sum = sum + spliced;
      ++valid;
    }
    comp.ph = valid ? sum * (1.0 / static_cast<double>(valid)) : Var(0.0);
    out.patches = valid;
  }

  if (!batch.quads.empty()) {
    std::vector<Quad<Var>> quads(batch.quads.size());
    const std::size_t base = batch.quad_offset();
    for (std::size_t j = 0; j < batch.quads.size(); ++j)
      for (int c = 0; c < 4; ++c) {
        const std::size_t r = base + 4 * j + c;
        const Pixel p{static_cast<double>(batch.quads[j][c].x), static_cast<double>(batch.quads[j][c].y)};
        quads[j][c] = back_project_scaled(p, depth_leaf(r), view.camera.K);
      }
    const auto pc = planar_consistency_loss<Var>(quads);
    comp.pc = pc.value;
    out.quads = pc.count;
  }

  if (!batch.keypoints.empty()) {
    std::vector<Var> z;
    std::vector<double> target, weight;
    const std::size_t base = batch.keypoint_offset();
    for (std::size_t k = 0; k < batch.keypoints.size(); ++k) {
      z.push_back(depth_leaf(base + k));
      target.push_back(batch.keypoints[k].z);
      weight.push_back(batch.keypoints[k].weight);
    }
    comp.sparse = sparse_depth_loss<Var>(z, target, weight) * (1.0 / static_cast<double>(z.size()));
    out.keypoints = z.size();
  }

  const LossBreakdown<Var> lb = total_loss(comp, batch.iter, config.total_iters, config.weights, config.flags);
  out.color = lb.color.value();
  out.ph = lb.ph.value();
  out.pc = lb.pc.value();
  out.sparse = lb.sparse.value();
  out.total = lb.total.value();
  out.lambda_sparse = lb.lambda_sparse;

  if (grad) {
    grad->assign(params.size(), 0.0);
    Var target;
    switch (term) {
      case LossTerm::kColor: target = lb.color; break;
      case LossTerm::kPh: target = lb.ph; break;
      case LossTerm::kPc: target = lb.pc; break;
      case LossTerm::kSparse: target = lb.sparse; break;
      case LossTerm::kTotal: target = lb.total; break;
    }
    if (!target.is_constant()) {
      const std::vector<double> adj = tape.adjoints(target);
      std::vector<Eigen::Vector3d> d_rgb(n_rays, Eigen::Vector3d::Zero());
      std::vector<double> d_depth(n_rays, 0.0);
      for (std::size_t r = 0; r < n_pix; ++r)
        for (int k = 0; k < 3; ++k) d_rgb[r][k] = adj[rgb[r][k].index()];
      for (std::size_t r = 0; r < n_rays; ++r)
        if (!depth[r].is_constant()) d_depth[r] = adj[depth[r].index()];
      render.backward(d_rgb, d_depth, *grad, config.threads);
    }
  }
  return out;
}

LossBreakdown<double> train_step(const RadianceField& field, ad::ParamStore& params, AdamState& adam,
                                 const TrainingData& data, const TrainConfig& config, const RayBatch& batch) {
  std::vector<double> grad;
  const LossBreakdown<double> b = batch_loss(field, params, data, config, batch, &grad);
  const bool finite_grad = std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
  if (!std::isfinite(b.total) || !finite_grad) {
    std::ostringstream msg;
    msg << "non-finite " << (std::isfinite(b.total) ? "gradient" : "loss") << " at iteration " << batch.iter
        << ": color=" << b.color << " ph=" << b.ph << " pc=" << b.pc << " sparse=" << b.sparse
        << " total=" << b.total;
    throw TrainingAborted(msg.str());
  }
  adam_step(params.values(), grad, adam, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  return b;
}

// ------------------------------------------------------------------ run

std::string log_header() { return "iter,color,ph,pc,sparse,total,lambda_sparse,rays,patches,quads,keypoints"; }

std::string log_row(long iter, const LossBreakdown<double>& b) {
  std::ostringstream o;
  o << iter << ',' << format_double(b.color) << ',' << format_double(b.ph) << ',' << format_double(b.pc) << ','
    << format_double(b.sparse) << ',' << format_double(b.total) << ',' << format_double(b.lambda_sparse) << ','
    << b.rays << ',' << b.patches << ',' << b.quads << ',' << b.keypoints;
  return o.str();
}

std::string checkpoint_metadata(const TrainConfig& config, long iter) {
  std::ostringstream o;
  o << "field: " << config.field.to_string() << '\n'
    << "iter: " << iter << '\n'
    << "eval: n_samples=" << config.n_samples << " seg_k=" << format_double(config.segmentation.k)
    << " seg_sigma=" << format_double(config.segmentation.sigma) << " seg_min_size=" << config.segmentation.min_size
    << " plane_threshold=" << config.plane_threshold << '\n';
  return o.str();
}

EvalOptions eval_options_from_metadata(const std::string& metadata) {
  EvalOptions e;
  std::istringstream in(metadata);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("eval: ", 0) != 0) continue;
    std::istringstream tokens(line.substr(6));
    std::string tok;
    while (tokens >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = tok.substr(0, eq);
      const std::string v = tok.substr(eq + 1);
      if (k == "n_samples") e.n_samples = static_cast<int>(to_integer(k, v));
      else if (k == "seg_k") e.segmentation.k = to_double(k, v);
      else if (k == "seg_sigma") e.segmentation.sigma = to_double(k, v);
      else if (k == "seg_min_size") e.segmentation.min_size = static_cast<int>(to_integer(k, v));
      else if (k == "plane_threshold") e.plane_threshold = static_cast<int>(to_integer(k, v));
    }
  }
  return e;
}

FieldConfig field_config_from_metadata(const std::string& metadata) {
  std::istringstream in(metadata);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("field: ", 0) == 0) return FieldConfig::parse(line.substr(7));
  throw std::invalid_argument("checkpoint metadata has no field configuration");
}

EvalOptions eval_options(const TrainConfig& config) {
  EvalOptions e;
  e.n_samples = config.n_samples;
  e.threads = config.threads;
  e.segmentation = config.segmentation;
  e.plane_threshold = config.plane_threshold;
  return e;
}

std::string build_version() { return STRUCTNERF_GIT_DESCRIBE; }

TrainResult run_training(const TrainConfig& config, const Dataset& dataset, const RunOptions& options) {
  namespace fs = std::filesystem;
  config.validate();
  const RadianceField field(config.field);
  TrainResult result;
  result.params = field.init_params(config.seed);
  result.params.metadata = checkpoint_metadata(config, 0);
  AdamState adam(result.params.size());
  const TrainingData data(dataset, config);

  std::ofstream log;
  const bool write = !options.out_dir.empty();
  auto save = [&](long iter, const std::string& path) {
    result.params.metadata = checkpoint_metadata(config, iter);
    ad::save_params(path, result.params);
  };
  if (write) {
    fs::create_directories(fs::path(options.out_dir) / "checkpoints");
    std::ofstream manifest(fs::path(options.out_dir) / "manifest.txt", std::ios::binary);
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    manifest << "# structnerf run manifest\n"
             << "version = " << build_version() << '\n'
             << "scene = " << options.scene_path << '\n'
             << "out = " << options.out_dir << '\n'
             << "started = " << stamp << '\n'
             << config.to_string();
    log.open(fs::path(options.out_dir) / "log.csv", std::ios::binary);
    log << log_header() << '\n';
  }

  const auto start = std::chrono::steady_clock::now();
  result.log.reserve(static_cast<std::size_t>(config.total_iters));
  for (long iter = 0; iter < config.total_iters; ++iter) {
    const RayBatch batch = sample_ray_batch(data, config, iter);
    const LossBreakdown<double> b = train_step(field, result.params, adam, data, config, batch);
    result.log.push_back(b);
    if (write) log << log_row(iter, b) << '\n';
    const long done = iter + 1;
    if (write && ((config.checkpoint_every > 0 && done % config.checkpoint_every == 0) || done == config.total_iters)) {
      char name[64];
      std::snprintf(name, sizeof(name), "iter_%06ld.params", done);
      save(done, (fs::path(options.out_dir) / "checkpoints" / name).string());
    }
    if (options.progress && options.progress_every > 0 && (done % options.progress_every == 0 || done == config.total_iters)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *options.progress << "iter " << done << '/' << config.total_iters << "  total " << std::setprecision(5)
                        << b.total << "  color " << b.color << "  ph " << b.ph << "  pc " << b.pc << "  sparse "
                        << b.sparse << "  (" << std::setprecision(3) << secs << " s)" << std::endl;
    }
  }
  result.params.metadata = checkpoint_metadata(config, config.total_iters);
  if (write) {
    log.close();
    save(config.total_iters, (fs::path(options.out_dir) / "final.params").string());
  }

  if (options.evaluate && !dataset.test.empty()) {
    result.eval = evaluate(field, result.params, dataset.test, dataset.flat_faces, dataset.t_near, dataset.t_far,
                           eval_options(config));
    if (write) {
      std::ofstream csv(fs::path(options.out_dir) / "eval.csv", std::ios::binary);
      result.eval->write_csv(csv);
    }
  }
  return result;
}

std::vector<std::pair<std::string, AblationFlags>> ablation_rows() {
  std::vector<std::pair<std::string, AblationFlags>> rows;
  AblationFlags f;
  f.no_dense_sampling = true;
  rows.emplace_back("w/o dense-sampling", f);
  f = {};
  f.no_patch = true;
  rows.emplace_back("w/o patch", f);
  f = {};
  f.no_warmup = true;
  rows.emplace_back("w/o warm-up training", f);
  f = {};
  f.no_sparse = true;
  rows.emplace_back("w/o sparse depth priors", f);
  f = {};
  f.no_patchmatch = true;
  rows.emplace_back("w/o patch-match", f);
  f = {};
  f.no_plane_reg = true;
  rows.emplace_back("w/o plane regularization", f);
  rows.emplace_back("full", AblationFlags{});
  return rows;
}

std::vector<TermCheck> gradient_suite(std::uint64_t seed, const ad::GradCheckOptions& options) {
  SceneConfig sc;
  sc.width = 24;
  sc.height = 24;
  sc.n_cameras = 5;
  sc.arc_deg = 60.0;
  sc.n_test = 0;
  sc.n_points = 60;
  sc.seed = seed;
  const BoxScene scene = make_box_scene(sc);
  const Dataset dataset = make_dataset(scene);

  TrainConfig config;
  config.seed = seed;
  config.total_iters = 100;
  config.batch_rays = 8;
  config.n_samples = 8;
  config.max_keypoint_rays = 8;
  config.plane_threshold = 8;
  config.segmentation.min_size = 10;
  config.field.pos_freqs = 3;
  config.field.dir_freqs = 2;
  config.field.hidden_layers = 2;
  config.field.hidden_width = 16;
  config.field.skip_layer = 0;

  const RadianceField field(config.field);
  const ad::ParamStore params = field.init_params(seed);
  const TrainingData data(dataset, config);
  // Iteration 2 targets a middle view (two sources on each side) inside the
  // warm-up window, so every term is active.
  const RayBatch batch = sample_ray_batch(data, config, 2);

  const std::pair<const char*, LossTerm> terms[] = {{"color", LossTerm::kColor},
                                                      {"ph", LossTerm::kPh},
                                                      {"pc", LossTerm::kPc},
                                                      {"sparse", LossTerm::kSparse},
                                                      {"total", LossTerm::kTotal}};
  std::vector<TermCheck> out;
  for (const auto& [name, term] : terms) {
    const ad::LossFunction loss = [&, term = term](const ad::ParamStore& p, std::vector<double>* grad) {
      const LossBreakdown<double> b = batch_loss(field, p, data, config, batch, grad, term, false);
      switch (term) {
        case LossTerm::kColor: return b.color;
        case LossTerm::kPh: return b.ph;
        case LossTerm::kPc: return b.pc;
        case LossTerm::kSparse: return b.sparse;
        case LossTerm::kTotal: return b.total;
      }
      return b.total;
    };
    out.push_back({name, ad::check_gradients(loss, params, options)});
  }
  return out;
}

}  // namespace structnerf
