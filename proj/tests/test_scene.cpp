#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "structnerf/metrics.hpp"
#include "structnerf/scene.hpp"
#include "test_util.hpp"

using namespace structnerf;

namespace {

SceneConfig small_config() {
  SceneConfig c;
  c.width = c.height = 24;
  c.n_cameras = 6;
  c.n_test = 1;
  c.n_points = 30;
  return c;
}

Camera identity_camera(int w, int h, double f) {
  Camera cam;
  cam.K = {f, f, 0.5 * (w - 1), 0.5 * (h - 1)};
  cam.width = w;
  cam.height = h;
  return cam;
}

}  // namespace

TEST(BoxScene, DefaultConfigIsDeterministic) {
  const BoxScene a = make_box_scene({});
  const BoxScene b = make_box_scene({});
  ASSERT_EQ(a.cameras.size(), 20u);
  EXPECT_EQ(a.test_cameras.size(), 3u);
  for (std::size_t i = 0; i < a.cameras.size(); ++i) {
    EXPECT_EQ(a.cameras[i].world_to_camera, b.cameras[i].world_to_camera);
    EXPECT_TRUE(a.inside(a.cameras[i].center()));
  }
  const GroundTruth ga = render_ground_truth(a, a.cameras[4]);
  const GroundTruth gb = render_ground_truth(b, b.cameras[4]);
  EXPECT_EQ(ga.rgb.data, gb.rgb.data);
  EXPECT_EQ(ga.depth.data, gb.depth.data);
}

TEST(BoxScene, TooFewCamerasRejected) {
  SceneConfig c;
  c.n_cameras = 1;
  EXPECT_THROW(make_box_scene(c), SceneConfigError);
}

TEST(BoxScene, SeedChangesTrajectory) {
  SceneConfig c;
  const BoxScene a = make_box_scene(c);
  c.seed = 1;
  const BoxScene b = make_box_scene(c);
  EXPECT_NE(a.cameras[0].world_to_camera, b.cameras[0].world_to_camera);
}

TEST(BoxScene, TestViewsInterleaveTrajectory) {
  const BoxScene s = make_box_scene({});
  ASSERT_EQ(s.images.size(), 23u);
  EXPECT_EQ(s.images[20].name, "test_000.png");
  // Test poses sit between their trajectory neighbours.
  const Eigen::Vector3d t0 = s.test_cameras[0].center();
  EXPECT_LT((t0 - s.cameras[4].center()).norm(), 0.2);
  EXPECT_LT((t0 - s.cameras[5].center()).norm(), 0.2);
}

TEST(GroundTruth, AxialRayDepth) {
  SceneConfig c;
  c.extents = {4.0, 2.5, 6.0};
  const BoxScene s = make_box_scene(c);
  const Camera cam = identity_camera(65, 65, 50.0);
  const SurfaceHit hit = trace(s, cam, {32.0, 32.0});
  EXPECT_NEAR(hit.depth, 3.0, 1e-12);
  EXPECT_EQ(hit.face, kPosZ);
}

TEST(GroundTruth, FrontoParallelWallHasConstantDepth) {
  const BoxScene s = make_box_scene({});
  const Camera cam = identity_camera(31, 31, 20.0);
  const GroundTruth gt = render_ground_truth(s, cam);
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < 31; ++x)
      if (static_cast<int>(gt.surface.at(x, y)) == kPosZ) {
        EXPECT_NEAR(gt.depth.at(x, y), 2.0, 1e-12);
      }
}

TEST(GroundTruth, DepthsWithinBoxDiagonal) {
  const BoxScene s = make_box_scene({});
  const double diag = (s.hi - s.lo).norm();
  for (const Camera& cam : s.cameras) {
    const GroundTruth gt = render_ground_truth(s, cam);
    for (double d : gt.depth.data) {
      EXPECT_GT(d, 0.0);
      EXPECT_LE(d, diag);
    }
    for (double v : gt.rgb.data) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(GroundTruth, FlatWallRegionsAreExactPlanes) {
  const BoxScene s = make_box_scene({});
  int checked = 0;
  for (const Camera& cam : s.cameras) {
    const GroundTruth gt = render_ground_truth(s, cam);
    for (int f = 0; f < 6; ++f) {
      PlaneRegion r;
      for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
          if (gt.surface.at(x, y) == f) r.pixels.push_back({x, y});
      if (r.area() < 16) continue;
      const auto dev = plane_mean_deviation(gt.depth, {r}, cam.K);
      ASSERT_TRUE(dev);
      EXPECT_LT(*dev, 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(GroundTruth, WarpedPixelsKeepTheirColour) {
  const BoxScene s = make_box_scene({});
  int checked = 0;
  for (int t = 0; t + 1 < static_cast<int>(s.cameras.size()); t += 3) {
    const Camera& ct = s.cameras[t];
    const Camera& cs = s.cameras[t + 1];
    const GroundTruth gt = render_ground_truth(s, ct);
    for (int y = 0; y < ct.height; y += 3)
      for (int x = 0; x < ct.width; x += 3) {
        WarpedPixel w;
        try {
          w = warp_point({double(x), double(y)}, gt.depth.at(x, y), ct.K, ct.world_to_camera, cs.world_to_camera,
                         cs.width, cs.height);
        } catch (const PointBehindCamera&) {
          continue;
        }
        if (!w.in_bounds) continue;
        const SurfaceHit a = trace(s, ct, {double(x), double(y)});
        const SurfaceHit b = trace(s, cs, w.pixel);
        EXPECT_LT((a.point - b.point).norm(), 1e-9);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(a.rgb[c], b.rgb[c], 1e-6) << t << " " << x << " " << y;
        ++checked;
      }
  }
  EXPECT_GT(checked, 500);
}

TEST(SparsePoints, NoiseFreeHasZeroErrorAndUnitWeight) {
  const BoxScene s = make_box_scene({});
  const SceneBundle b = make_sparse_points(s, 100, 0.0, 0.0, 3);
  ASSERT_EQ(b.points.size(), 100u);
  for (const auto& p : b.points) {
    EXPECT_GE(p.observations.size(), 2u);
    EXPECT_LT(p.error, 1e-6);
    EXPECT_GT(p.weight, 1.0 - 1e-6);
  }
}

TEST(SparsePoints, OutliersHaveLowerWeight) {
  const BoxScene s = make_box_scene({});
  double out_sum = 0.0, in_sum = 0.0;
  int out_n = 0, in_n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SceneBundle b = make_sparse_points(s, 100, 0.5, 0.1, seed);
    const auto ids = outlier_ids(100, 0.1, seed);
    ASSERT_EQ(ids.size(), 10u);
    for (const auto& p : b.points) {
      if (!p.usable) continue;
      if (std::binary_search(ids.begin(), ids.end(), p.id)) {
        out_sum += p.weight;
        ++out_n;
      } else {
        in_sum += p.weight;
        ++in_n;
      }
    }
  }
  ASSERT_GT(out_n, 0);
  EXPECT_LT(out_sum / out_n, in_sum / in_n);
}

TEST(SparsePoints, DeterministicForSeed) {
  const BoxScene s = make_box_scene({});
  EXPECT_TRUE(make_sparse_points(s, 40, 0.5, 0.1, 7) == make_sparse_points(s, 40, 0.5, 0.1, 7));
  EXPECT_FALSE(make_sparse_points(s, 40, 0.5, 0.1, 7) == make_sparse_points(s, 40, 0.5, 0.1, 8));
}

TEST(SceneConfig, TextRoundTripAndErrors) {
  SceneConfig c;
  c.width = 48;
  c.height = 32;
  c.seed = 9;
  c.pixel_noise = 0.25;
  c.textures[kNegY].kind = TextureKind::kChecker;
  c.textures[kNegY].scale = 0.3;
  const SceneConfig back = SceneConfig::parse(c.to_string());
  EXPECT_EQ(back.to_string(), c.to_string());
  EXPECT_EQ(back.textures, c.textures);
  EXPECT_EQ(back.width, 48);
  EXPECT_EQ(SceneConfig::parse("# only a comment\n").to_string(), SceneConfig{}.to_string());
  EXPECT_THROW(SceneConfig::parse("width = 12\n"), SceneConfigError);
  EXPECT_THROW(SceneConfig::parse("resolution = 12\n"), SceneConfigError);
  EXPECT_THROW(SceneConfig::parse("n_cameras = 2.5\n"), SceneConfigError);
}

TEST(Dataset, DiskRoundTripMatchesInMemory) {
  const BoxScene s = make_box_scene(small_config());
  testutil::TempDir dir("scene_rt");
  write_scene(s, dir.str());
  const Dataset disk = load_dataset(dir.str());
  const Dataset mem = make_dataset(s);
  ASSERT_EQ(disk.train.size(), mem.train.size());
  ASSERT_EQ(disk.test.size(), mem.test.size());
  EXPECT_TRUE(disk.bundle == mem.bundle);
  EXPECT_EQ(disk.t_near, mem.t_near);
  EXPECT_EQ(disk.t_far, mem.t_far);
  EXPECT_EQ(disk.flat_faces, mem.flat_faces);
  auto same = [](const View& a, const View& b) {
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(a.camera.world_to_camera, b.camera.world_to_camera);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
    EXPECT_EQ(a.depth.data, b.depth.data);
    EXPECT_EQ(a.surface.data, b.surface.data);
    ASSERT_EQ(a.keypoints.size(), b.keypoints.size());
    for (std::size_t k = 0; k < a.keypoints.size(); ++k) {
      EXPECT_EQ(a.keypoints[k].pixel, b.keypoints[k].pixel);
      EXPECT_EQ(a.keypoints[k].z, b.keypoints[k].z);
      EXPECT_EQ(a.keypoints[k].weight, b.keypoints[k].weight);
    }
  };
  for (std::size_t i = 0; i < disk.train.size(); ++i) same(disk.train[i], mem.train[i]);
  for (std::size_t i = 0; i < disk.test.size(); ++i) same(disk.test[i], mem.test[i]);
}

TEST(Dataset, DefaultFlatFacesAreVisibleInTestViews) {
  const Dataset ds = make_dataset(make_box_scene({}));
  int flat_views = 0;
  for (const View& v : ds.test) {
    bool any = false;
    for (double f : v.surface.data) any = any || ds.flat_faces[static_cast<int>(f)];
    flat_views += any;
  }
  EXPECT_GE(flat_views, 2);
}
