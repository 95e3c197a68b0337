#pragma once

// Optimisation loop: per-iteration ray batches from one target view, the
// structural loss terms, Adam updates, checkpoints and the training log.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "structnerf/autodiff.hpp"
#include "structnerf/field.hpp"
#include "structnerf/losses.hpp"
#include "structnerf/metrics.hpp"
#include "structnerf/scene.hpp"
#include "structnerf/segmentation.hpp"

namespace structnerf {

struct TrainConfig {
  long total_iters = 5000;
  int batch_rays = 1024;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  AblationFlags flags;
  LossWeights weights;
  FieldConfig field;
  int n_samples = 64;
  double patch_spacing = 2.0;  // support-domain spacing N (0 with no_patch)
  int source_views = 2;        // neighbours on each side of the target
  int max_keypoint_rays = 128;
  int quads_per_plane = 1;
  int plane_threshold = 0;  // 0: plane_area_threshold(width, height)
  SegmentationParams segmentation;
  long checkpoint_every = 1000;  // 0: only at the end
  int threads = 1;

  /// Small network and batch that train the default scene in minutes on one core.
  static TrainConfig desk();

  void validate() const;
  /// "key = value" lines; parse(to_string()) == *this.
  std::string to_string() const;
  static TrainConfig parse(const std::string& text);
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update of `params` in place.
void adam_step(std::vector<double>& params, std::span<const double> grad, AdamState& state, double lr, double beta1,
               double beta2, double epsilon);

/// Per-view data derived once before training: source views, plane regions
/// and keypoint pixels.
class TrainingData {
 public:
  TrainingData(const Dataset& dataset, const TrainConfig& config);

  const Dataset& dataset() const { return *dataset_; }
  const std::vector<int>& sources(int view) const { return sources_[view]; }
  const std::vector<PlaneRegion>& planes(int view) const { return planes_[view]; }
  const std::vector<Pixel>& keypoint_pixels(int view) const { return keypoint_pixels_[view]; }

 private:
  const Dataset* dataset_;
  std::vector<std::vector<int>> sources_;
  std::vector<std::vector<PlaneRegion>> planes_;
  std::vector<std::vector<Pixel>> keypoint_pixels_;
};

struct RayBatch {
  long iter = 0;
  int view = 0;
  std::vector<Pixel> pixels;  // colour / photometric rays, integer coordinates
  std::vector<Rgb<double>> colors;
  std::vector<std::array<PixelIndex, 4>> quads;
  std::vector<KeypointHit> keypoints;

  // Flattened rays: pixels, then keypoints, then four per quad.
  std::vector<Ray> rays;
  std::vector<std::uint64_t> ray_ids;  // stable sampling ids per group
  std::vector<double> z_factor;        // ray distance -> camera z

  std::size_t keypoint_offset() const { return pixels.size(); }
  std::size_t quad_offset() const { return pixels.size() + keypoints.size(); }
};

/// Target view iter mod V; uniform pixels (or keypoint pixels with
/// no_dense_sampling), one quad per cached plane and up to max_keypoint_rays
/// keypoints when the corresponding terms are active at `iter`.
RayBatch sample_ray_batch(const TrainingData& data, const TrainConfig& config, long iter);

enum class LossTerm { kColor, kPh, kPc, kSparse, kTotal };

/// Renders the batch, evaluates the loss terms and, when `grad` is non-null,
/// writes the gradient of `term` (sized to params). Terms whose effective
/// weight is 0 are skipped unless selected. Deterministic sampling when
/// `stratified` is false.
LossBreakdown<double> batch_loss(const RadianceField& field, const ad::ParamStore& params, const TrainingData& data,
                                 const TrainConfig& config, const RayBatch& batch, std::vector<double>* grad,
                                 LossTerm term = LossTerm::kTotal, bool stratified = true);

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One optimisation step. Throws TrainingAborted on a non-finite loss or gradient.
LossBreakdown<double> train_step(const RadianceField& field, ad::ParamStore& params, AdamState& adam,
                                 const TrainingData& data, const TrainConfig& config, const RayBatch& batch);

struct RunOptions {
  std::string out_dir;     // empty: keep everything in memory
  std::string scene_path;  // recorded in the manifest
  std::ostream* progress = nullptr;
  long progress_every = 500;
  bool evaluate = true;  // evaluate test views at the end
};

struct TrainResult {
  ad::ParamStore params;
  std::vector<LossBreakdown<double>> log;
  std::optional<EvalReport> eval;
};

/// Writes manifest.txt before the first step, then log.csv, checkpoints
/// (checkpoints/iter_NNNNNN.params every checkpoint_every and at the end),
/// final.params and eval.csv into out_dir.
TrainResult run_training(const TrainConfig& config, const Dataset& dataset, const RunOptions& options = {});

std::string log_header();
std::string log_row(long iter, const LossBreakdown<double>& b);

/// Field configuration, iteration and evaluation settings as metadata lines.
std::string checkpoint_metadata(const TrainConfig& config, long iter);
FieldConfig field_config_from_metadata(const std::string& metadata);
/// Evaluation settings recorded by checkpoint_metadata (defaults when absent).
EvalOptions eval_options_from_metadata(const std::string& metadata);

EvalOptions eval_options(const TrainConfig& config);

/// The seven rows of the ablation table, in table order ("full" last).
std::vector<std::pair<std::string, AblationFlags>> ablation_rows();

struct TermCheck {
  std::string term;
  ad::GradCheckReport report;
};

/// Finite-difference checks of every loss term (color, ph, pc, sparse,
/// total) through the full render path, on a two-layer field and a small
/// synthetic scene with all terms active.
std::vector<TermCheck> gradient_suite(std::uint64_t seed, const ad::GradCheckOptions& options);

/// git describe of the build.
std::string build_version();

}  // namespace structnerf
