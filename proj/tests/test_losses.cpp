#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "structnerf/losses.hpp"
#include "structnerf/scene.hpp"

using namespace structnerf;
using ad::Tape;
using ad::Var;

namespace {

PatchColors<double> constant_patch(double v) {
  PatchColors<double> p;
  for (auto& px : p) px = {v, v, v};
  return p;
}

PatchColors<double> random_patch(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PatchColors<double> p;
  for (auto& px : p)
    for (double& c : px) c = u(rng);
  return p;
}

Image smooth_image(int w, int h, double phase) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = 0.5 + 0.4 * std::sin(0.31 * x + phase) * std::cos(0.17 * y);
      img.at(x, y, 1) = 0.5 + 0.3 * std::cos(0.23 * x - 0.29 * y);
      img.at(x, y, 2) = 0.2 + 0.6 * (x + y) / double(w + h);
    }
  return img;
}

ad::ParamStore depths(std::initializer_list<double> d) {
  ad::ParamStore p;
  p.add("depth", d.size());
  std::copy(d.begin(), d.end(), p.values().begin());
  return p;
}

}  // namespace

TEST(ColorLoss, Examples) {
  const std::vector<Rgb<double>> gt = {{0.2, 0.4, 0.6}, {0.1, 0.1, 0.1}};
  EXPECT_EQ(color_loss<double>(gt, gt), 0.0);
  const std::vector<Rgb<double>> one = {{0.3, 0.4, 0.6}};
  EXPECT_NEAR(color_loss<double>(one, std::span(gt).first(1)), 0.01, 1e-15);
  const std::vector<Rgb<double>> two = {{0.3, 0.4, 0.6}, {0.1, 0.3, 0.1}};
  EXPECT_NEAR(color_loss<double>(two, gt), 0.05, 1e-15);
  EXPECT_THROW(color_loss<double>(one, gt), std::invalid_argument);
}

TEST(Ssim, SelfSimilarityIsOne) {
  std::mt19937_64 rng(1);
  const auto p = random_patch(rng);
  EXPECT_NEAR(ssim_patch(p, p), 1.0, 1e-15);
}

TEST(Ssim, BlackAgainstWhite) {
  EXPECT_NEAR(ssim_patch(constant_patch(0.0), constant_patch(1.0)), kSsimC1 / (1.0 + kSsimC1), 1e-15);
  EXPECT_NEAR(ssim_patch(constant_patch(0.0), constant_patch(1.0)), 9.999e-5, 1e-8);
}

TEST(Ssim, MeanShiftLowersLuminanceOnly) {
  std::mt19937_64 rng(2);
  auto p = random_patch(rng);
  for (auto& px : p)
    for (double& c : px) c *= 0.8;
  auto q = p;
  for (auto& px : q)
    for (double& c : px) c += 0.1;
  const double s = ssim_patch(p, q);
  EXPECT_GT(s, 0.0);
  EXPECT_LT(s, 1.0);
}

TEST(Ssim, BoundedOnRandomPatches) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double s = ssim_patch(random_patch(rng), random_patch(rng));
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(PatchDissimilarity, AlphaZeroIsMeanL1) {
  std::mt19937_64 rng(4);
  const auto p = random_patch(rng), q = random_patch(rng);
  double l1 = 0.0;
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 3; ++c) l1 += std::abs(p[i][c] - q[i][c]);
  EXPECT_NEAR(patch_dissimilarity(p, q, 0.0), l1 / 27.0, 1e-15);
  const double expected = 0.85 * (1.0 - ssim_patch(p, q)) / 2.0 + 0.15 * l1 / 27.0;
  EXPECT_NEAR(patch_dissimilarity(p, q, 0.85), expected, 1e-15);
}

TEST(PhotometricLoss, IdentityPoseIsZeroForAnyDepth) {
  const Image img = smooth_image(32, 32, 0.3);
  const Intrinsics K{30, 30, 15.5, 15.5};
  const SourceView src{&img, Rigid{}};
  const std::vector<Pixel> centers = {{10, 12}, {20.5, 7.25}, {16, 16}};
  for (double d : {0.3, 1.0, 7.5}) {
    const std::vector<double> ds(centers.size(), d);
    const auto v = photometric_loss<double>(centers, ds, 2.0, img, std::span(&src, 1), K, 0.85);
    EXPECT_EQ(v.count, 3u);
    EXPECT_NEAR(v.value, 0.0, 1e-12);
  }
}

TEST(PhotometricLoss, NoValidPatchGivesZeroCount) {
  const Image img = smooth_image(16, 16, 0.0);
  const Intrinsics K{15, 15, 7.5, 7.5};
  const SourceView src{&img, Rigid{}};
  const std::vector<Pixel> centers = {{0, 0}, {15, 8}};  // support leaves the image
  const std::vector<double> ds = {1.0, 1.0};
  const auto v = photometric_loss<double>(centers, ds, 2.0, img, std::span(&src, 1), K, 0.85);
  EXPECT_EQ(v.count, 0u);
  EXPECT_EQ(v.value, 0.0);
}

TEST(PhotometricLoss, TrueDepthBeatsHalfDepth) {
  const BoxScene scene = make_box_scene({});
  const int t = 6;
  const GroundTruth gt_t = render_ground_truth(scene, scene.cameras[t]);
  std::vector<GroundTruth> src_gt;
  std::vector<SourceView> sources;
  for (int s : {t - 2, t - 1, t + 1, t + 2}) src_gt.push_back(render_ground_truth(scene, scene.cameras[s]));
  for (std::size_t i = 0; i < src_gt.size(); ++i) {
    const int s = std::array{t - 2, t - 1, t + 1, t + 2}[i];
    sources.push_back({&src_gt[i].rgb, scene.cameras[s].pose() * scene.cameras[t].pose().inverse()});
  }
  std::vector<Pixel> centers;
  std::vector<double> true_z, half_z;
  for (int y = 4; y < 60; y += 4)
    for (int x = 4; x < 60; x += 4) {
      centers.push_back({double(x), double(y)});
      true_z.push_back(gt_t.depth.at(x, y));
      half_z.push_back(0.5 * gt_t.depth.at(x, y));
    }
  const auto at_true = photometric_loss<double>(centers, true_z, 2.0, gt_t.rgb, sources, scene.cameras[t].K, 0.85);
  const auto at_half = photometric_loss<double>(centers, half_z, 2.0, gt_t.rgb, sources, scene.cameras[t].K, 0.85);
  ASSERT_GT(at_true.count, 10u);
  ASSERT_GT(at_half.count, 10u);
  EXPECT_LT(at_true.value, at_half.value);
}

TEST(PhotometricLoss, GradientMatchesFiniteDifferences) {
  const Image target = smooth_image(40, 40, 0.0);
  const Image source = smooth_image(40, 40, 0.4);
  const Intrinsics K{36, 36, 19.5, 19.5};
  Rigid motion;
  motion.R = Eigen::AngleAxisd(0.05, Eigen::Vector3d(0.2, 1, 0.1).normalized()).toRotationMatrix();
  motion.t = {0.07, -0.03, 0.02};
  const SourceView src{&source, motion};
  const std::vector<Pixel> centers = {{14.3, 17.7}, {21.1, 22.6}, {18.4, 12.2}};
  const ad::TapeClosure f = [&](Tape&, std::span<const Var> d) {
    return photometric_loss<Var>(centers, d, 2.0, target, std::span(&src, 1), K, 0.85).value;
  };
  const auto report = ad::check_gradients(f, depths({1.93, 2.41, 2.17}), {});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(PlanarConsistency, CoplanarIsZero) {
  const Quad<double> q = {{{1, 2, 3}, {2, 2, 3}, {1, 5, 3}, {-4, 0.5, 3}}};
  EXPECT_EQ(quad_triple_product(q), 0.0);
  const std::vector<Quad<double>> none;
  const auto empty = planar_consistency_loss<double>(none);
  EXPECT_EQ(empty.count, 0u);
  EXPECT_EQ(empty.value, 0.0);
}

TEST(PlanarConsistency, UnitBasisGivesOne) {
  const Quad<double> q = {{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  EXPECT_EQ(quad_triple_product(q), 1.0);
}

TEST(PlanarConsistency, CubicScalingAndPermutationInvariance) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    Quad<double> q;
    for (auto& p : q)
      for (double& c : p) c = n(rng);
    const double base = quad_triple_product(q);
    const double s = 0.5 + std::abs(n(rng));
    Quad<double> scaled = q;
    for (auto& p : scaled)
      for (double& c : p) c *= s;
    EXPECT_NEAR(quad_triple_product(scaled), s * s * s * base, 1e-12 * (1 + s * s * s * base));
    int perm[3] = {1, 2, 3};
    do {
      const Quad<double> p = {q[0], q[perm[0]], q[perm[1]], q[perm[2]]};
      EXPECT_NEAR(quad_triple_product(p), base, 1e-12 * (1 + base));
    } while (std::next_permutation(perm, perm + 3));
  }
}

TEST(PlanarConsistency, MeanOverQuads) {
  const std::vector<Quad<double>> quads = {{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}},
                                           {{{0, 0, 0}, {2, 0, 0}, {0, 1, 0}, {0, 0, 1}}}};
  const auto v = planar_consistency_loss<double>(quads);
  EXPECT_EQ(v.count, 2u);
  EXPECT_NEAR(v.value, 1.5, 1e-15);
}

TEST(PlanarConsistency, GradientThroughBackProjectedDepths) {
  const Intrinsics K{50, 50, 31.5, 31.5};
  const std::array<Pixel, 4> px = {{{10, 12}, {40, 15}, {22, 50}, {33, 33}}};
  const ad::TapeClosure f = [&](Tape&, std::span<const Var> d) {
    Quad<Var> q;
    for (int i = 0; i < 4; ++i) q[i] = back_project_scaled(px[i], d[i], K);
    return planar_consistency_loss<Var>(std::span(&q, 1)).value;
  };
  const auto report = ad::check_gradients(f, depths({2.0, 2.3, 1.7, 2.9}), {});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(SparseDepth, Examples) {
  const std::vector<double> z = {1.0, 2.0};
  const std::vector<double> ones = {1.0, 1.0};
  EXPECT_EQ(sparse_depth_loss<double>(z, z, ones), 0.0);
  const std::vector<double> d = {1.5};
  EXPECT_EQ(sparse_depth_loss<double>(d, std::span(z).first(1), std::span(ones).first(1)), 0.25);
  const std::vector<double> half = {0.5};
  EXPECT_EQ(sparse_depth_loss<double>(d, std::span(z).first(1), half), 0.125);
  EXPECT_THROW(sparse_depth_loss<double>(d, z, ones), std::invalid_argument);
}

TEST(Schedule, LambdaSparse) {
  const LossWeights w;
  EXPECT_EQ(lambda_sparse_at(0, 100000, w), 0.05);
  EXPECT_EQ(lambda_sparse_at(49999, 100000, w), 0.05);
  EXPECT_EQ(lambda_sparse_at(50000, 100000, w), 0.0);
  EXPECT_EQ(lambda_sparse_at(99999, 100000, w, true), 0.05);
}

TEST(TotalLoss, DefaultWeightsBeforeAndAfterWarmup) {
  const LossComponents<double> c{1.0, 2.0, 4.0, 8.0};
  EXPECT_NEAR(total_loss(c, 0, 100000, LossWeights{}, {}).total, 1.55, 1e-15);
  EXPECT_NEAR(total_loss(c, 60000, 100000, LossWeights{}, {}).total, 1.15, 1e-15);
  EXPECT_EQ(total_loss(c, 0, 100000, LossWeights{}, {}).lambda_sparse, 0.05);
}

TEST(TotalLoss, StructuralTermsOffEqualsColor) {
  const LossComponents<double> c{0.123, 7.0, 9.0, 11.0};
  LossWeights w;
  w.lambda_ph = w.lambda_pc = w.lambda_sparse = 0.0;
  EXPECT_EQ(total_loss(c, 0, 10, w, {}).total, 0.123);
  EXPECT_EQ(total_loss(c, 0, 10, LossWeights{}, AblationFlags::color_only()).total, 0.123);
  // A non-finite disabled term still cannot leak into the total.
  const LossComponents<double> bad{0.5, std::nan(""), 1.0, 1.0};
  EXPECT_EQ(total_loss(bad, 0, 10, w, {}).total, 0.5);
}

TEST(TotalLoss, AblationsZeroTheirTerm) {
  const LossComponents<double> c{1.0, 2.0, 4.0, 8.0};
  const LossWeights w;
  EXPECT_NEAR(total_loss(c, 0, 10, w, AblationFlags::parse("no_patchmatch")).total, 1.5, 1e-15);
  EXPECT_NEAR(total_loss(c, 0, 10, w, AblationFlags::parse("no_plane_reg")).total, 1.45, 1e-15);
  EXPECT_NEAR(total_loss(c, 0, 10, w, AblationFlags::parse("no_sparse")).total, 1.15, 1e-15);
  EXPECT_NEAR(total_loss(c, 9, 10, w, AblationFlags::parse("no_warmup")).total, 1.55, 1e-15);
}

TEST(AblationFlags, ParseAndPrint) {
  EXPECT_EQ(AblationFlags::parse(""), AblationFlags{});
  const AblationFlags f = AblationFlags::parse("no_patch,no_sparse");
  EXPECT_TRUE(f.no_patch);
  EXPECT_TRUE(f.no_sparse);
  EXPECT_FALSE(f.no_warmup);
  EXPECT_EQ(AblationFlags::parse(f.to_string()), f);
  for (const char* name : kAblationNames) EXPECT_EQ(AblationFlags::parse(name).to_string(), name);
  EXPECT_THROW(AblationFlags::parse("no_such_flag"), std::invalid_argument);
  const AblationFlags c = AblationFlags::color_only();
  EXPECT_TRUE(c.no_patchmatch && c.no_plane_reg && c.no_sparse);
}

TEST(LossWeights, Validate) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  LossWeights w;
  w.alpha = 1.5;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = LossWeights{};
  w.lambda_ph = -1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(Losses, TermsAreNonNegative) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const auto p = random_patch(rng), q = random_patch(rng);
    const double d = patch_dissimilarity(p, q, u(rng));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    Quad<double> quad;
    for (auto& pt : quad)
      for (double& c : pt) c = u(rng) - 0.5;
    EXPECT_GE(quad_triple_product(quad), 0.0);
  }
}
