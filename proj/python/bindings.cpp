#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "structnerf/metrics.hpp"
#include "structnerf/scene.hpp"
#include "structnerf/segmentation.hpp"
#include "structnerf/sfm.hpp"
#include "structnerf/trainer.hpp"

namespace py = pybind11;
using namespace structnerf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// HxW or HxWxC arrays to and from Image.
Image to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("expected an HxW or HxWxC array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

Array from_image(const Image& img) {
  Array out(img.channels == 1 ? std::vector<py::ssize_t>{img.height, img.width}
                              : std::vector<py::ssize_t>{img.height, img.width, img.channels});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const ViewMetrics& m) {
  py::dict d;
  d["psnr"] = m.psnr;
  d["ssim"] = m.ssim;
  d["depth_rmse"] = m.depth_rmse;
  d["plane_mean_dev"] = m.plane_dev;
  d["plane_mean_dev_flat"] = m.plane_dev_flat;
  d["scale"] = m.scale;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Structural-constraint NeRF training on synthetic indoor scenes";
  m.def("version", &build_version);

  m.def("psnr", [](const Array& pred, const Array& gt) { return psnr(to_image(pred), to_image(gt)); },
        py::arg("pred"), py::arg("gt"));
  m.def("ssim", [](const Array& pred, const Array& gt) { return ssim_image(to_image(pred), to_image(gt)); },
        py::arg("pred"), py::arg("gt"), "11x11 Gaussian-window SSIM averaged over channels");
  m.def(
      "depth_rmse",
      [](const Array& pred, const Array& gt) {
        const Image p = to_image(pred), g = to_image(gt);
        const Mask mask = valid_depth_mask(g);
        const Alignment a = median_scale_align(p, g, mask);
        return py::make_tuple(depth_rmse(a.aligned, g, mask), a.scale);
      },
      py::arg("pred"), py::arg("gt"), "RMSE after median scale alignment over gt > 0; returns (rmse, scale)");
  m.def("keypoint_weight", &keypoint_weight, py::arg("error"), py::arg("mean_error"));
  m.def("plane_area_threshold", &plane_area_threshold, py::arg("width"), py::arg("height"));

  m.def(
      "segment",
      [](const Array& image, double k, double sigma, int min_size) {
        const LabelMap lm = felzenszwalb(to_image(image), {k, sigma, min_size});
        py::array_t<int> out({lm.height, lm.width});
        std::copy(lm.labels.begin(), lm.labels.end(), out.mutable_data());
        return out;
      },
      py::arg("image"), py::arg("k") = 150.0, py::arg("sigma") = 0.8, py::arg("min_size") = 50,
      "Felzenszwalb segmentation of an HxWx3 image in [0,1]; 4-connected labels");

  m.def(
      "make_scene",
      [](const std::string& out, std::uint64_t seed, const std::string& config) {
        SceneConfig c = config.empty() ? SceneConfig{} : SceneConfig::parse(config);
        c.seed = seed;
        write_scene(make_box_scene(c), out);
      },
      py::arg("out"), py::arg("seed") = 0, py::arg("config") = "",
      "Write the synthetic box scene (images, depths, sparse model) to a directory");
  m.def(
      "ground_truth",
      [](std::uint64_t seed, int camera) {
        SceneConfig c;
        c.seed = seed;
        const BoxScene scene = make_box_scene(c);
        const GroundTruth gt = render_ground_truth(scene, scene.cameras.at(camera));
        return py::make_tuple(from_image(gt.rgb), from_image(gt.depth), from_image(gt.surface));
      },
      py::arg("seed") = 0, py::arg("camera") = 0, "(rgb, depth, face id) of a default-scene training camera");

  m.def(
      "read_sparse_points",
      [](const std::string& dir) {
        const SceneBundle b = parse_colmap_text(dir);
        py::list points;
        for (const SparsePoint& p : b.points) {
          py::dict d;
          d["id"] = p.id;
          d["xyz"] = std::vector<double>{p.position.x(), p.position.y(), p.position.z()};
          d["error"] = p.error;
          d["weight"] = p.weight;
          d["usable"] = p.usable;
          d["observations"] = p.observations.size();
          points.append(d);
        }
        return points;
      },
      py::arg("dir"), "Sparse points of a COLMAP text model with reprojection errors and weights");

  m.def("desk_config", [] { return TrainConfig::desk().to_string(); });
  m.def(
      "train",
      [](const std::string& scene, const std::string& out, long iters, const std::string& ablate, std::uint64_t seed,
         const std::string& config) {
        TrainConfig c = config.empty() ? TrainConfig::desk() : TrainConfig::parse(config);
        if (iters > 0) c.total_iters = iters;
        c.seed = seed;
        c.flags = AblationFlags::parse(ablate);
        const Dataset ds = load_dataset(scene);
        RunOptions o;
        o.out_dir = out;
        o.scene_path = scene;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = run_training(c, ds, o);
        }
        py::dict d;
        d["final_loss"] = r.log.empty() ? 0.0 : r.log.back().total;
        if (r.eval) d["eval"] = metrics_dict(r.eval->mean);
        return d;
      },
      py::arg("scene"), py::arg("out"), py::arg("iters") = 0, py::arg("ablate") = "", py::arg("seed") = 0,
      py::arg("config") = "", "Train on a scene directory; writes the usual run files to out");

  m.def(
      "gradient_check",
      [](std::uint64_t seed, std::size_t coords) {
        ad::GradCheckOptions o;
        o.max_coords = coords;
        py::dict d;
        for (const TermCheck& t : gradient_suite(seed, o))
          d[py::str(t.term)] = py::make_tuple(t.report.passed, t.report.max_rel_error, t.report.checked);
        return d;
      },
      py::arg("seed") = 0, py::arg("coords") = 100, "{term: (passed, max_rel_error, checked)}");
}
