#include <cmath>
#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "structnerf/sfm.hpp"
#include "test_util.hpp"

using namespace structnerf;

namespace {

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

void write_set(const testutil::TempDir& dir, const std::string& cameras, const std::string& images,
               const std::string& points) {
  write(dir / "cameras.txt", cameras);
  write(dir / "images.txt", images);
  write(dir / "points3D.txt", points);
}

const char* kCamera = "# header\n1 PINHOLE 64 48 50 50 32 24\n";

// One camera at the origin looking down +z, point at (0, 0, 2) observed at its exact projection.
void write_identity(const testutil::TempDir& dir) {
  write_set(dir, kCamera, "1 1 0 0 0 0 0 0 1 view0.png\n32 24 7\n", "7 0 0 2 200 100 50 0.25 1 0\n");
}

// A point observed by one camera at `p` with keypoints displaced by `offsets`.
SceneBundle displaced(const std::vector<Pixel>& offsets) {
  SceneBundle b;
  b.cameras[1] = CameraModel{1, "PINHOLE", 64, 48, {50, 50, 32, 24}};
  SparsePoint p;
  p.id = 1;
  p.position = {0.2, -0.1, 2.0};
  const Pixel exact = project(p.position, b.cameras[1].intrinsics());
  for (std::size_t j = 0; j < offsets.size(); ++j) {
    SfmImage im;
    im.id = static_cast<int>(j) + 1;
    im.camera_id = 1;
    im.name = "v" + std::to_string(j);
    im.points2d.push_back({{exact.u + offsets[j].u, exact.v + offsets[j].v}, 1});
    b.images.push_back(im);
    p.observations.push_back({im.id, 0, im.points2d[0].pixel});
  }
  b.points.push_back(p);
  return b;
}

}  // namespace

TEST(ColmapText, IdentityPoseFixture) {
  testutil::TempDir dir("sfm_identity");
  write_identity(dir);
  const SceneBundle b = parse_colmap_text(dir.str());
  ASSERT_EQ(b.cameras.size(), 1u);
  ASSERT_EQ(b.images.size(), 1u);
  ASSERT_EQ(b.points.size(), 1u);
  EXPECT_TRUE(b.images[0].world_to_camera().isApprox(Eigen::Matrix4d::Identity(), 0.0));
  const auto K = b.cameras.at(1).intrinsics();
  EXPECT_EQ(K, (Intrinsics{50, 50, 32, 24}));
  const SparsePoint& p = b.points[0];
  EXPECT_EQ(p.color, (std::array<int, 3>{200, 100, 50}));
  EXPECT_EQ(p.stored_error, 0.25);
  ASSERT_EQ(p.observations.size(), 1u);
  EXPECT_EQ(p.observations[0].keypoint, (Pixel{32, 24}));
  EXPECT_EQ(p.error, 0.0);
  EXPECT_EQ(p.weight, 1.0);
  EXPECT_TRUE(p.usable);
}

TEST(ColmapText, SimplePinholeSharesFocal) {
  const CameraModel c{3, "SIMPLE_PINHOLE", 10, 10, {40, 4.5, 5.5}};
  EXPECT_EQ(c.intrinsics(), (Intrinsics{40, 40, 4.5, 5.5}));
}

TEST(ColmapText, QuarterTurnAboutY) {
  SfmImage im;
  im.qvec = {0.7071068, 0.0, 0.7071068, 0.0};
  const Eigen::Matrix3d R = im.world_to_camera().topLeftCorner<3, 3>();
  Eigen::Matrix3d expected;
  expected << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  EXPECT_LT((R - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ColmapText, CommentsOnlyGivesEmptyBundle) {
  testutil::TempDir dir("sfm_empty");
  write_set(dir, "# cameras\n", "# images\n# more\n", "# points\n");
  const SceneBundle b = parse_colmap_text(dir.str());
  EXPECT_TRUE(b.cameras.empty());
  EXPECT_TRUE(b.images.empty());
  EXPECT_TRUE(b.points.empty());
  EXPECT_EQ(b.mean_error, 0.0);
}

TEST(ColmapText, UnsupportedModel) {
  testutil::TempDir dir("sfm_model");
  write_set(dir, "1 OPENCV 64 48 50 50 32 24 0 0 0 0\n", "", "");
  EXPECT_THROW(parse_colmap_text(dir.str()), UnsupportedModel);
}

TEST(ColmapText, DanglingTrackReportsLine) {
  testutil::TempDir dir("sfm_track");
  write_set(dir, kCamera, "1 1 0 0 0 0 0 0 1 a.png\n32 24 7\n", "# c\n7 0 0 2 1 2 3 0 1 0\n8 0 0 2 1 2 3 0 9 0\n");
  try {
    parse_colmap_text(dir.str());
    FAIL() << "expected MalformedTrack";
  } catch (const MalformedTrack& e) {
    EXPECT_NE(std::string(e.what()).find("points3D.txt:3"), std::string::npos) << e.what();
  }
}

TEST(ColmapText, OutOfRangePoint2dIndex) {
  testutil::TempDir dir("sfm_idx");
  write_set(dir, kCamera, "1 1 0 0 0 0 0 0 1 a.png\n32 24 7\n", "7 0 0 2 1 2 3 0 1 4\n");
  EXPECT_THROW(parse_colmap_text(dir.str()), MalformedTrack);
}

TEST(ColmapText, NonUnitQuaternion) {
  testutil::TempDir dir("sfm_pose");
  write_set(dir, kCamera, "1 1.01 0 0 0 0 0 0 1 a.png\n\n", "");
  EXPECT_THROW(parse_colmap_text(dir.str()), MalformedPose);
}

TEST(ColmapText, ToleratesCrlf) {
  testutil::TempDir a("sfm_lf"), b("sfm_crlf");
  write_identity(a);
  write_set(b, "# header\r\n1 PINHOLE 64 48 50 50 32 24\r\n", "1 1 0 0 0 0 0 0 1 view0.png\r\n32 24 7\r\n",
            "7 0 0 2 200 100 50 0.25 1 0\r\n");
  EXPECT_TRUE(parse_colmap_text(a.str()) == parse_colmap_text(b.str()));
}

TEST(ColmapText, EmptyKeypointLine) {
  testutil::TempDir dir("sfm_nokp");
  write_set(dir, kCamera, "1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 0 0 0 1 b.png\n10 20 -1\n", "");
  const SceneBundle b = parse_colmap_text(dir.str());
  ASSERT_EQ(b.images.size(), 2u);
  EXPECT_TRUE(b.images[0].points2d.empty());
  ASSERT_EQ(b.images[1].points2d.size(), 1u);
  EXPECT_EQ(b.images[1].points2d[0].point3d_id, -1);
}

TEST(Reprojection, ExactPointHasZeroError) {
  const SceneBundle b = displaced({{0, 0}});
  EXPECT_LT(reprojection_error(b.points[0], b).error, 1e-12);
}

TEST(Reprojection, PythagoreanOffset) {
  const SceneBundle b = displaced({{3, 4}});
  EXPECT_NEAR(reprojection_error(b.points[0], b).error, 5.0, 1e-9);
}

TEST(Reprojection, SumOfNormsOverViews) {
  const SceneBundle b = displaced({{1, 0}, {0, 2}});
  EXPECT_NEAR(reprojection_error(b.points[0], b).error, 3.0, 1e-9);
}

TEST(Reprojection, BehindCameraMakesPointUnusable) {
  SceneBundle b = displaced({{1, 0}});
  SparsePoint back = b.points[0];
  back.id = 2;
  back.position.z() = -2.0;
  b.points.push_back(back);
  EXPECT_TRUE(reprojection_error(b.points[1], b).behind_camera);
  b.update_weights();
  EXPECT_FALSE(b.points[1].usable);
  EXPECT_EQ(b.points[1].weight, 0.0);
  EXPECT_NEAR(b.mean_error, 1.0, 1e-9);  // only the surviving point counts
  EXPECT_NEAR(b.points[0].weight, std::exp(-1.0), 1e-9);
}

TEST(KeypointWeight, Examples) {
  EXPECT_EQ(keypoint_weight(0.0, 2.0), 1.0);
  EXPECT_NEAR(keypoint_weight(2.0, 2.0), 0.36787944117144233, 1e-15);
  EXPECT_NEAR(keypoint_weight(4.0, 2.0), 0.01831563888873418, 1e-15);
  EXPECT_EQ(keypoint_weight(0.0, 0.0), 1.0);
}

TEST(KeypointWeight, RejectsNegative) {
  EXPECT_THROW(keypoint_weight(-1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(keypoint_weight(1.0, -1.0), std::invalid_argument);
}

TEST(KeypointWeight, MonotoneDecreasingAndInUnitInterval) {
  double prev = 1.0;
  for (int i = 1; i <= 200; ++i) {
    const double w = keypoint_weight(0.05 * i, 1.3);
    EXPECT_LT(w, prev);
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
    prev = w;
  }
}

TEST(KeypointWeight, StoredWeightsMatchFormula) {
  SceneBundle b = displaced({{1, 1}, {0.5, -2}, {0, 0}});
  SparsePoint q = b.points[0];
  q.id = 2;
  q.position = {-0.3, 0.2, 3.0};
  b.points.push_back(q);
  b.update_weights();
  const double mean = (b.points[0].error + b.points[1].error) / 2.0;
  EXPECT_NEAR(b.mean_error, mean, 1e-15);
  for (const auto& p : b.points) EXPECT_NEAR(p.weight, keypoint_weight(p.error, mean), 1e-12);
}

TEST(ColmapText, RoundTripIsFieldIdenticalAndByteStable) {
  SceneBundle b = displaced({{0.1, 0.2}, {-1.0 / 3.0, 1e-7}});
  b.cameras[2] = CameraModel{2, "SIMPLE_PINHOLE", 32, 32, {27.712812921102035, 15.5, 15.5}};
  b.images[1].camera_id = 2;
  b.images[1].qvec = {0.9238795325112867, 0.0, 0.3826834323650898, 0.0};
  b.images[1].tvec = {0.1, -0.7, 1.0 / 7.0};
  b.points[0].stored_error = 0.123456789012345;
  b.points[0].color = {1, 2, 255};
  testutil::TempDir a("sfm_rt_a"), c("sfm_rt_c");
  write_colmap_text(b, a.str());
  const SceneBundle parsed = parse_colmap_text(a.str());
  EXPECT_TRUE(parsed == b);
  write_colmap_text(parsed, c.str());
  for (const char* f : {"cameras.txt", "images.txt", "points3D.txt"})
    EXPECT_EQ(testutil::slurp(a / f), testutil::slurp(c / f)) << f;
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
  for (double v : {1.0 / 3.0, 1e-300, -2.5e17, 5e-324, 0.30000000000000004})
    EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
}
