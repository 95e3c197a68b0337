// structnerf: synthetic scenes, segmentation, training, rendering,
// evaluation, gradient checks and ablations from the command line.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "structnerf/autodiff.hpp"
#include "structnerf/field.hpp"
#include "structnerf/image.hpp"
#include "structnerf/metrics.hpp"
#include "structnerf/scene.hpp"
#include "structnerf/segmentation.hpp"
#include "structnerf/trainer.hpp"

namespace fs = std::filesystem;
using namespace structnerf;

namespace {

struct TrainArgs {
  std::string scene;
  std::string out;
  std::string preset = "desk";
  std::string config_file;
  long iters = -1;
  int batch = -1;
  double lr = -1.0;
  std::uint64_t seed = 0;
  std::string ablate;
  long checkpoint_every = -1;
  int samples = -1;
};

void add_train_options(CLI::App* cmd, TrainArgs& a, bool with_out = true) {
  cmd->add_option("--scene", a.scene, "Scene directory (from make-scene)")->required()->check(CLI::ExistingDirectory);
  if (with_out) cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--preset", a.preset, "Base configuration: desk or full")
      ->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--config", a.config_file, "Training config file (key = value), overrides --preset")
      ->check(CLI::ExistingFile);
  cmd->add_option("--iters", a.iters, "Total iterations");
  cmd->add_option("--batch", a.batch, "Rays per batch");
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--seed", a.seed, "Global seed");
  cmd->add_option("--ablate", a.ablate,
                  "Comma list of no_dense_sampling,no_patch,no_warmup,no_sparse,no_patchmatch,no_plane_reg "
                  "(or color_only)");
  cmd->add_option("--checkpoint-every", a.checkpoint_every, "Checkpoint interval in iterations (0: end only)");
  cmd->add_option("--samples", a.samples, "Samples per ray");
}

TrainConfig build_config(const TrainArgs& a, int threads) {
  TrainConfig c = a.preset == "full" ? TrainConfig{} : TrainConfig::desk();
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    std::stringstream ss;
    ss << in.rdbuf();
    c = TrainConfig::parse(ss.str());
  }
  if (a.iters > 0) c.total_iters = a.iters;
  if (a.batch > 0) c.batch_rays = a.batch;
  if (a.lr > 0) c.learning_rate = a.lr;
  c.seed = a.seed;
  if (!a.ablate.empty()) c.flags = AblationFlags::parse(a.ablate);
  if (a.checkpoint_every >= 0) c.checkpoint_every = a.checkpoint_every;
  if (a.samples > 0) c.n_samples = a.samples;
  c.threads = threads;
  c.validate();
  return c;
}

ad::ParamStore load_checkpoint(const std::string& path, RadianceField*& field_out) {
  ad::ParamStore params = ad::load_params(path);
  field_out = new RadianceField(field_config_from_metadata(params.metadata));
  field_out->check_layout(params);
  return params;
}

int cmd_make_scene(const std::string& config_path, const std::string& out, std::int64_t seed, int n_points,
                   double noise, double outliers) {
  SceneConfig cfg = config_path.empty() ? SceneConfig{} : SceneConfig::load(config_path);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (n_points >= 0) cfg.n_points = n_points;
  if (noise >= 0) cfg.pixel_noise = noise;
  if (outliers >= 0) cfg.outlier_fraction = outliers;
  cfg.validate();
  const BoxScene scene = make_box_scene(cfg);
  write_scene(scene, out);
  std::cout << "wrote " << scene.cameras.size() << " training and " << scene.test_cameras.size()
            << " test views to " << out << '\n';
  return 0;
}

int cmd_segment(const std::string& image_path, const std::string& out, const SegmentationParams& params,
                int threshold) {
  const Image img = read_png_rgb(image_path);
  const LabelMap labels = felzenszwalb(img, params);
  const int thr = threshold > 0 ? threshold : plane_area_threshold(img.width, img.height);
  const auto planes = extract_planes(labels, thr);
  fs::create_directories(out);
  Image vis(img.width, img.height, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto c = region_color(labels.at(x, y));
      for (int k = 0; k < 3; ++k) vis.at(x, y, k) = c[k];
    }
  write_png_rgb((fs::path(out) / "labels.png").string(), vis);
  std::vector<bool> is_plane(labels.region_count(), false);
  for (const auto& p : planes) is_plane[p.id] = true;
  std::ofstream csv(fs::path(out) / "regions.csv", std::ios::binary);
  csv << "id,area,plane\n";
  for (int id = 0; id < labels.region_count(); ++id)
    csv << id << ',' << labels.region_sizes[id] << ',' << (is_plane[id] ? 1 : 0) << '\n';
  std::ofstream lab(fs::path(out) / "labels.txt", std::ios::binary);
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) lab << (x ? " " : "") << labels.at(x, y);
    lab << '\n';
  }
  std::cout << labels.region_count() << " regions, " << planes.size() << " planes (area >= " << thr << ")\n";
  return 0;
}

int cmd_train(const TrainArgs& a, int threads) {
  const TrainConfig config = build_config(a, threads);
  const Dataset dataset = load_dataset(a.scene);
  RunOptions opts;
  opts.out_dir = a.out;
  opts.scene_path = a.scene;
  opts.progress = &std::cout;
  opts.progress_every = std::max<long>(1, config.total_iters / 10);
  const TrainResult result = run_training(config, dataset, opts);
  if (result.eval) result.eval->write_table(std::cout);
  return 0;
}

const std::vector<View>& pick_views(const Dataset& ds, const std::string& split, std::vector<View>& storage) {
  if (split == "train") return ds.train;
  if (split == "test") return ds.test;
  storage = ds.train;
  storage.insert(storage.end(), ds.test.begin(), ds.test.end());
  return storage;
}

int cmd_render(const std::string& checkpoint, const std::string& scene_dir, const std::string& out,
               const std::string& split, int samples, int threads) {
  RadianceField* raw = nullptr;
  const ad::ParamStore params = load_checkpoint(checkpoint, raw);
  const std::unique_ptr<RadianceField> field(raw);
  const EvalOptions eo = eval_options_from_metadata(params.metadata);
  const Dataset ds = load_dataset(scene_dir);
  std::vector<View> storage;
  const auto& views = pick_views(ds, split, storage);
  fs::create_directories(out);
  for (const View& v : views) {
    const RenderedImage r =
        render_image(*field, v.camera, params, samples > 0 ? samples : eo.n_samples, ds.t_near, ds.t_far, threads);
    const std::string stem = fs::path(v.name).stem().string();
    write_png_rgb((fs::path(out) / (stem + "_rgb.png")).string(), r.rgb);
    write_pfm((fs::path(out) / (stem + "_depth.pfm")).string(), r.depth);
    write_png_depth16((fs::path(out) / (stem + "_depth.png")).string(), r.depth);
    write_pfm((fs::path(out) / (stem + "_opacity.pfm")).string(), r.opacity);
  }
  std::cout << "rendered " << views.size() << " views to " << out << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& scene_dir, const std::string& out_csv,
             const std::string& diff_dir, int threads) {
  RadianceField* raw = nullptr;
  const ad::ParamStore params = load_checkpoint(checkpoint, raw);
  const std::unique_ptr<RadianceField> field(raw);
  EvalOptions eo = eval_options_from_metadata(params.metadata);
  eo.threads = threads;
  const Dataset ds = load_dataset(scene_dir);
  if (ds.test.empty()) throw std::runtime_error("scene has no test views");
  const EvalReport report = evaluate(*field, params, ds.test, ds.flat_faces, ds.t_near, ds.t_far, eo);
  report.write_table(std::cout);
  if (!out_csv.empty()) {
    if (fs::path(out_csv).has_parent_path()) fs::create_directories(fs::path(out_csv).parent_path());
    std::ofstream csv(out_csv, std::ios::binary);
    report.write_csv(csv);
  }
  if (!diff_dir.empty()) {
    fs::create_directories(diff_dir);
    for (const View& v : ds.test) {
      const RenderedImage r = render_image(*field, v.camera, params, eo.n_samples, ds.t_near, ds.t_far, threads);
      Image diff(v.rgb.width, v.rgb.height, 3);
      for (std::size_t i = 0; i < diff.data.size(); ++i) diff.data[i] = std::abs(r.rgb.data[i] - v.rgb.data[i]);
      write_png_rgb((fs::path(diff_dir) / (fs::path(v.name).stem().string() + "_diff.png")).string(), diff);
    }
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t coords, double tolerance) {
  ad::GradCheckOptions opt;
  opt.seed = seed;
  opt.max_coords = coords;
  opt.tolerance = tolerance;
  const auto checks = gradient_suite(seed, opt);
  bool ok = true;
  std::cout << std::left << std::setw(8) << "term" << std::right << std::setw(10) << "coords" << std::setw(16)
            << "max rel err" << std::setw(16) << "max abs err" << "  result\n";
  for (const auto& c : checks) {
    std::cout << std::left << std::setw(8) << c.term << std::right << std::setw(10) << c.report.checked
              << std::setw(16) << std::scientific << std::setprecision(3) << c.report.max_rel_error << std::setw(16)
              << c.report.max_abs_error << std::defaultfloat << "  " << (c.report.passed ? "pass" : "FAIL") << '\n';
    ok = ok && c.report.passed;
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const TrainArgs& a, int threads) {
  const TrainConfig base = build_config(a, threads);
  const Dataset ds = load_dataset(a.scene);
  if (ds.test.empty()) throw std::runtime_error("scene has no test views");
  fs::create_directories(a.out);
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& [name, flags] : ablation_rows()) {
    TrainConfig c = base;
    c.flags = flags;
    std::string dir = name;
    for (char& ch : dir)
      if (ch == ' ' || ch == '/') ch = '_';
    RunOptions opts;
    opts.out_dir = (fs::path(a.out) / dir).string();
    opts.scene_path = a.scene;
    std::cout << "== " << name << std::endl;
    const TrainResult r = run_training(c, ds, opts);
    rows.emplace_back(name, *r.eval);
  }
  std::ofstream csv(fs::path(a.out) / "ablation.csv", std::ios::binary);
  csv << "config,psnr,ssim,depth_rmse,plane_mean_dev,plane_mean_dev_flat\n";
  std::cout << '\n'
            << std::left << std::setw(28) << "" << std::right << std::setw(9) << "PSNR" << std::setw(8) << "SSIM"
            << std::setw(12) << "DepthRMSE" << std::setw(12) << "PlaneDev" << '\n';
  for (const auto& [name, rep] : rows) {
    const ViewMetrics& m = rep.mean;
    csv << name << ',' << format_double(m.psnr) << ',' << format_double(m.ssim) << ',' << format_double(m.depth_rmse)
        << ',' << format_double(m.plane_dev) << ',' << format_double(m.plane_dev_flat) << '\n';
    std::cout << std::left << std::setw(28) << name << std::right << std::fixed << std::setprecision(2)
              << std::setw(9) << m.psnr << std::setprecision(4) << std::setw(8) << m.ssim << std::setw(12)
              << m.depth_rmse << std::setprecision(5) << std::setw(12) << m.plane_dev << '\n';
    std::cout.unsetf(std::ios::fixed);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"StructNeRF: NeRF training with structural depth constraints for indoor scenes", "structnerf"};
  app.set_version_flag("--version", build_version());
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (1 gives bit-reproducible output)")
      ->check(CLI::PositiveNumber);

  std::string scene_config, out;
  std::int64_t scene_seed = -1;
  int n_points = -1;
  double noise = -1, outliers = -1;
  auto* make = app.add_subcommand("make-scene", "Generate a synthetic box-room scene directory");
  make->add_option("--config", scene_config, "Scene config file (key = value)")->check(CLI::ExistingFile);
  make->add_option("--out", out, "Output scene directory")->required();
  make->add_option("--seed", scene_seed, "Scene seed (overrides the config)");
  make->add_option("--points", n_points, "Number of sparse points");
  make->add_option("--noise", noise, "Keypoint pixel noise sigma");
  make->add_option("--outliers", outliers, "Fraction of depth-corrupted points");

  std::string image;
  SegmentationParams seg;
  int threshold = 0;
  auto* segment = app.add_subcommand("segment", "Superpixel segmentation and plane extraction of a PNG image");
  segment->add_option("--image", image, "Input RGB PNG")->required()->check(CLI::ExistingFile);
  segment->add_option("--out", out, "Output directory")->required();
  segment->add_option("--k", seg.k, "Scale parameter (0..255 intensities)");
  segment->add_option("--sigma", seg.sigma, "Pre-smoothing sigma");
  segment->add_option("--min-size", seg.min_size, "Minimum region size");
  segment->add_option("--threshold", threshold, "Plane area threshold in pixels (0: scaled default)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a radiance field on a scene directory");
  add_train_options(train, train_args);

  std::string checkpoint, scene_dir, split = "test";
  int samples = 0;
  auto* render = app.add_subcommand("render", "Render views from a checkpoint");
  render->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  render->add_option("--scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
  render->add_option("--out", out, "Output directory")->required();
  render->add_option("--split", split, "Views to render")->check(CLI::IsMember({"train", "test", "all"}));
  render->add_option("--samples", samples, "Samples per ray (default: from the checkpoint)");

  std::string csv_path, diff_dir;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test views");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", csv_path, "CSV report path");
  eval->add_option("--diff", diff_dir, "Directory for absolute-difference PNGs");

  std::uint64_t gc_seed = 0;
  std::size_t coords = 100;
  double tolerance = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
  gradcheck->add_option("--seed", gc_seed, "Seed for the scene, field and coordinates");
  gradcheck->add_option("--coords", coords, "Parameter coordinates per term");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error");

  TrainArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Train the full model and the six ablations, print a comparison table");
  add_train_options(ablate, ablate_args);
  ablate->remove_option(ablate->get_option("--ablate"));

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*make) return cmd_make_scene(scene_config, out, scene_seed, n_points, noise, outliers);
    if (*segment) return cmd_segment(image, out, seg, threshold);
    if (*train) return cmd_train(train_args, threads);
    if (*render) return cmd_render(checkpoint, scene_dir, out, split, samples, threads);
    if (*eval) return cmd_eval(checkpoint, scene_dir, csv_path, diff_dir, threads);
    if (*gradcheck) return cmd_gradcheck(gc_seed, coords, tolerance);
    if (*ablate) return cmd_ablate(ablate_args, threads);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
