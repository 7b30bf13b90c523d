#include <gtest/gtest.h>

#include "mfds/mdpm.hpp"
#include "testutil.hpp"

using mfds::MdpmLevel;
using mfds::Rng;
using mfds::Tensor;
using mfds::Var;

namespace {

void zero_doconv(mfds::DOConv2d<float>& conv) {
  conv.conventional_operator().mutable_value().fill(0.f);
  if (conv.bias().defined()) conv.bias().mutable_value().fill(0.f);
}

}  // namespace

TEST(HighfreqMap, ConstantImageIsAllZeros) {
  Tensor<float> img(2, 3, 16, 16);
  img.fill(0.62f);
  Tensor<float> fh = mfds::highfreq_map(img, 8, 8, 1.0);
  EXPECT_EQ(fh.c, 1);
  for (auto v : fh.data) ASSERT_EQ(v, 0.f);
}

TEST(HighfreqMap, BrightPixelPeaksNearResizedLocation) {
  Tensor<float> img(1, 3, 32, 32);
  for (int c = 0; c < 3; ++c) img.at(0, c, 20, 12) = 1.f;
  Tensor<float> fh = mfds::highfreq_map(img, 16, 16, 0.4);
  int best_y = 0, best_x = 0;
  float best = -1.f;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (fh.at(0, 0, y, x) > best) {
        best = fh.at(0, 0, y, x);
        best_y = y;
        best_x = x;
      }
  EXPECT_LE(std::abs(best_y - 10), 1);
  EXPECT_LE(std::abs(best_x - 6), 1);
}

TEST(HighfreqMap, OutputRangeWithinUnitInterval) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    Tensor<float> img(1, 3, 24, 24);
    mfds::fill_uniform(img, rng);
    Tensor<float> fh = mfds::highfreq_map(img, 12, 12, 1.0);
    for (auto v : fh.data) {
      ASSERT_GE(v, 0.f);
      ASSERT_LE(v, 1.f);
    }
  }
}

TEST(HighfreqMap, RejectsTinyTargetsAndBadSigma) {
  Tensor<float> img(1, 3, 16, 16);
  EXPECT_THROW(mfds::highfreq_map(img, 2, 8, 1.0), std::invalid_argument);
  EXPECT_THROW(mfds::highfreq_map(img, 8, 8, 0.0), std::invalid_argument);
}

TEST(EdgeEnhance, MaskOfOnesIsIdentityAndZerosAnnihilate) {
  Rng rng(4);
  Var<float> f(oracle::random_tensor<float>(1, 3, 5, 5, rng), false);
  Tensor<float> ones(1, 1, 5, 5);
  ones.fill(1.f);
  EXPECT_EQ(mfds::max_abs_diff(mfds::edge_enhance(f, Var<float>(ones, false)).value(), f.value()),
            0.f);
  Var<float> zeros(Tensor<float>(1, 1, 5, 5), false);
  Var<float> gated = mfds::edge_enhance(f, zeros);
  for (auto v : gated.value().data) ASSERT_EQ(v, 0.f);
}

TEST(EdgeEnhance, MatchesBroadcastLoop) {
  Rng rng(5);
  Tensor<float> f = oracle::random_tensor<float>(2, 4, 6, 6, rng);
  Tensor<float> fh = oracle::random_tensor<float>(2, 1, 6, 6, rng);
  Tensor<float> got = mfds::edge_enhance(Var<float>(f, false), Var<float>(fh, false)).value();
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
          ASSERT_FLOAT_EQ(got.at(b, c, y, x), f.at(b, c, y, x) * fh.at(b, 0, y, x));
}

TEST(EdgeEnhance, RejectsSpatialMismatch) {
  Var<float> f(Tensor<float>(1, 3, 5, 5), false);
  Var<float> fh(Tensor<float>(1, 1, 4, 5), false);
  EXPECT_THROW(mfds::edge_enhance(f, fh), std::invalid_argument);
}

TEST(FuseAndMask, SigmoidRangeAndZeroWeightsGiveHalf) {
  Rng rng(6);
  for (int c : {8, 16}) {
    MdpmLevel<float> level(c, 4, rng);
    Var<float> f(oracle::random_tensor<float>(1, c, 8, 8, rng), false);
    Var<float> fe(oracle::random_tensor<float>(1, c, 8, 8, rng), false);
    auto [fuse, mask] = level.fuse_and_mask(f, fe);
    EXPECT_EQ(fuse.value().c, c);
    EXPECT_EQ(mask.value().c, 1);
    for (auto v : mask.value().data) {
      ASSERT_GT(v, 0.f);
      ASSERT_LT(v, 1.f);
    }
    zero_doconv(level.mask_conv());
    auto [fuse2, mask2] = level.fuse_and_mask(f, fe);
    for (auto v : mask2.value().data) ASSERT_FLOAT_EQ(v, 0.5f);
  }
}

TEST(GatedResidual, ClosedGateReturnsOriginal) {
  Rng rng(7);
  MdpmLevel<float> level(8, 4, rng);
  Var<float> f_fuse(oracle::random_tensor<float>(1, 8, 6, 6, rng), false);
  Var<float> a_m(oracle::random_tensor<float>(1, 1, 6, 6, rng), false);
  Var<float> f(oracle::random_tensor<float>(1, 8, 6, 6, rng), false);
  // Gain starts at zero by construction.
  Var<float> out = level.gated_residual(f_fuse, a_m, f);
  EXPECT_EQ(mfds::max_abs_diff(out.value(), f.value()), 0.f);
}

TEST(GatedResidual, UnitGateFullMaskAddsFuse) {
  Rng rng(8);
  MdpmLevel<float> level(8, 4, rng);
  level.gain().mutable_value().data[0] = 1.f;
  Var<float> f_fuse(oracle::random_tensor<float>(1, 8, 6, 6, rng), false);
  Tensor<float> ones(1, 1, 6, 6);
  ones.fill(1.f);
  Var<float> f(oracle::random_tensor<float>(1, 8, 6, 6, rng), false);
  Var<float> out = level.gated_residual(f_fuse, Var<float>(ones, false), f);
  for (int64_t i = 0; i < out.value().size(); ++i)
    ASSERT_FLOAT_EQ(out.value().data[i], f_fuse.value().data[i] + f.value().data[i]);
}

TEST(GatedResidual, MatchesElementwiseOracle) {
  Rng rng(9);
  MdpmLevel<float> level(4, 2, rng);
  level.gain().mutable_value().data[0] = -0.7f;
  Tensor<float> f_fuse = oracle::random_tensor<float>(2, 4, 5, 5, rng);
  Tensor<float> a_m = oracle::random_tensor<float>(2, 1, 5, 5, rng);
  Tensor<float> f = oracle::random_tensor<float>(2, 4, 5, 5, rng);
  Tensor<float> got = level
                          .gated_residual(Var<float>(f_fuse, false), Var<float>(a_m, false),
                                          Var<float>(f, false))
                          .value();
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
          ASSERT_NEAR(got.at(b, c, y, x),
                      -0.7f * f_fuse.at(b, c, y, x) * a_m.at(b, 0, y, x) + f.at(b, c, y, x),
                      1e-6f);
}

TEST(Cbam, BothAttentionMapsInUnitIntervalAndShapePreserved) {
  Rng rng(10);
  MdpmLevel<float> level(8, 4, rng);
  Var<float> x(oracle::random_tensor<float>(2, 8, 6, 6, rng), false);
  Var<float> y = level.cbam(x);
  EXPECT_TRUE(y.value().same_shape(x.value()));
  // Attention maps live in (0,1): the channel-attended intermediate bounds
  // the output elementwise and shrinks the input elementwise.
  Var<float> xc = level.cbam_block().channel_attended(x);
  for (int64_t i = 0; i < y.value().size(); ++i) {
    ASSERT_LT(std::abs(xc.value().data[i]), std::abs(x.value().data[i]) + 1e-7f);
    ASSERT_LT(std::abs(y.value().data[i]), std::abs(xc.value().data[i]) + 1e-7f);
  }
}

TEST(Cbam, ZeroSpatialConvGivesExactlyHalfOfChannelAttended) {
  Rng rng(11);
  MdpmLevel<float> level(8, 4, rng);
  Var<float> x(oracle::random_tensor<float>(2, 8, 6, 6, rng), false);
  zero_doconv(level.cbam_block().spatial_conv());
  Var<float> y = level.cbam(x);
  Var<float> xc = level.cbam_block().channel_attended(x);
  for (int64_t i = 0; i < y.value().size(); ++i)
    ASSERT_FLOAT_EQ(y.value().data[i], 0.5f * xc.value().data[i]);
}

TEST(DenseRefine, ShapePreservedAndZeroWeightsGiveIdentity) {
  Rng rng(12);
  MdpmLevel<float> level(8, 4, rng);
  Var<float> x(oracle::random_tensor<float>(1, 8, 6, 6, rng), false);
  EXPECT_TRUE(level.dense_refine(x).value().same_shape(x.value()));
  level.dense_block(0).zero_weights();
  level.dense_block(1).zero_weights();
  Var<float> y = level.dense_refine(x);
  EXPECT_EQ(mfds::max_abs_diff(y.value(), x.value()), 0.f);
}

TEST(DenseRefine, GradientReachesEveryDenseParameter) {
  Rng rng(13);
  MdpmLevel<double> level(4, 2, rng);
  Var<double> x(oracle::random_tensor<double>(1, 4, 6, 6, rng), false);
  Var<double> loss = sum_all(level.dense_refine(x));
  loss.backward();
  std::vector<std::pair<std::string, Var<double>>> params;
  level.dense_block(0).collect_params("d0", params);
  level.dense_block(1).collect_params("d1", params);
  for (auto& [name, p] : params) {
    ASSERT_TRUE(p.has_grad()) << name;
    double norm = 0;
    for (auto v : p.grad().data) norm += std::abs(v);
    EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(MultiscaleRf, OutputNonNegativeAndZeroBranchesReduceToRelu) {
  Rng rng(14);
  MdpmLevel<float> level(8, 4, rng);
  Var<float> x(oracle::random_tensor<float>(1, 8, 12, 12, rng), false);
  Var<float> y = level.multiscale_rf(x);
  EXPECT_TRUE(y.value().same_shape(x.value()));
  for (auto v : y.value().data) ASSERT_GE(v, 0.f);

  for (int r : {1, 3, 5}) {
    level.dilated(r).weight().mutable_value().fill(0.f);
    level.dilated(r).bias().mutable_value().fill(0.f);
  }
  zero_doconv(level.rf_projection());
  Var<float> y2 = level.multiscale_rf(x);
  for (int64_t i = 0; i < y2.value().size(); ++i)
    ASSERT_FLOAT_EQ(y2.value().data[i], std::max(0.f, x.value().data[i]));
}

TEST(MultiscaleRf, OneHotBranchesIdentityProjectionGiveRelu4X) {
  Rng rng(15);
  const int C = 4;
  MdpmLevel<float> level(C, 2, rng);
  // One-hot center tap per branch: weight[o][c][1][1] = (o == c).
  for (int r : {1, 3, 5}) {
    Tensor<float>& w = level.dilated(r).weight().mutable_value();
    w.fill(0.f);
    for (int o = 0; o < C; ++o) w.at(o, o, 1, 1) = 1.f;
    level.dilated(r).bias().mutable_value().fill(0.f);
  }
  // Identity 1x1 projection: D = 1 (d_mul = 1), W[o][0][c] = (o == c).
  mfds::DOConv2d<float>& proj = level.rf_projection();
  proj.depthwise_operator().mutable_value().fill(1.f);
  Tensor<float>& w = proj.conventional_operator().mutable_value();
  w.fill(0.f);
  for (int o = 0; o < C; ++o) w.at(o, 0, o, 0) = 1.f;
  proj.bias().mutable_value().fill(0.f);

  Tensor<float> xt = oracle::random_tensor<float>(1, C, 12, 12, rng);
  Var<float> y = level.multiscale_rf(Var<float>(xt, false));
  for (int64_t i = 0; i < y.value().size(); ++i)
    ASSERT_NEAR(y.value().data[i], std::max(0.f, 4.f * xt.data[i]), 1e-5f);
}

TEST(MdpmForward, ShapesPreservedAndDeterministic) {
  Rng rng(16);
  mfds::Mdpm<float> mdpm({8, 16, 32}, 4, 1.0f, rng);
  mfds::Rng im_rng(17);
  Tensor<float> img = oracle::random_tensor<float>(2, 3, 32, 32, im_rng);
  mfds::FeaturePyramid<float> pyr;
  pyr.level0 = Var<float>(oracle::random_tensor<float>(2, 8, 16, 16, im_rng), false);
  pyr.level1 = Var<float>(oracle::random_tensor<float>(2, 16, 8, 8, im_rng), false);
  pyr.level2 = Var<float>(oracle::random_tensor<float>(2, 32, 4, 4, im_rng), false);
  mfds::NoGradGuard ng;
  auto out1 = mdpm.forward(pyr, img);
  auto out2 = mdpm.forward(pyr, img);
  EXPECT_TRUE(out1.level0.value().same_shape(pyr.level0.value()));
  EXPECT_TRUE(out1.level1.value().same_shape(pyr.level1.value()));
  EXPECT_TRUE(out1.level2.value().same_shape(pyr.level2.value()));
  EXPECT_EQ(mfds::max_abs_diff(out1.level2.value(), out2.level2.value()), 0.f);
}

TEST(MdpmForward, DegenerateConfigurationReducesToReluOfCbam) {
  Rng rng(18);
  mfds::Mdpm<float> mdpm({8, 8, 8}, 4, 1.0f, rng);
  for (int l = 0; l < 3; ++l) {
    MdpmLevel<float>& level = mdpm.level(l);
    // Gain is zero from construction; silence dense and dilated stages.
    level.dense_block(0).zero_weights();
    level.dense_block(1).zero_weights();
    for (int r : {1, 3, 5}) {
      level.dilated(r).weight().mutable_value().fill(0.f);
      level.dilated(r).bias().mutable_value().fill(0.f);
    }
    zero_doconv(level.rf_projection());
  }
  Rng im_rng(19);
  Tensor<float> img = oracle::random_tensor<float>(1, 3, 32, 32, im_rng);
  mfds::FeaturePyramid<float> pyr;
  pyr.level0 = Var<float>(oracle::random_tensor<float>(1, 8, 16, 16, im_rng), false);
  pyr.level1 = Var<float>(oracle::random_tensor<float>(1, 8, 8, 8, im_rng), false);
  pyr.level2 = Var<float>(oracle::random_tensor<float>(1, 8, 4, 4, im_rng), false);
  mfds::NoGradGuard ng;
  auto out = mdpm.forward(pyr, img);
  // With the gate closed the path is relu(cbam(feature)) per level.
  for (int l = 0; l < 3; ++l) {
    const Var<float>& fin = l == 0 ? pyr.level0 : (l == 1 ? pyr.level1 : pyr.level2);
    Var<float> want = relu(mdpm.level(l).cbam(fin));
    const Tensor<float>& got =
        (l == 0 ? out.level0 : (l == 1 ? out.level1 : out.level2)).value();
    EXPECT_LT(mfds::max_abs_diff(got, want.value()), 1e-6f) << "level " << l;
  }
}

TEST(MdpmGrad, GainAndFuseConvFiniteDifferences) {
  Rng rng(20);
  MdpmLevel<double> level(4, 2, rng);
  level.gain().mutable_value().data[0] = 0.3;  // open the gate so fuse params matter
  Tensor<double> f = oracle::random_tensor<double>(1, 4, 8, 8, rng);
  Tensor<double> fh = oracle::random_tensor<double>(1, 1, 8, 8, rng);
  Tensor<double> cot;

  auto run = [&](bool grad) {
    Var<double> vf(f, false), vfh(fh, false);
    if (!grad) {
      mfds::NoGradGuard ng;
      return level.forward(vf, vfh);
    }
    return level.forward(vf, vfh);
  };
  Var<double> out = run(true);
  cot = oracle::random_tensor<double>(out.value().n, out.value().c, out.value().h, out.value().w,
                                      rng);
  out.backward(cot);
  auto eval = [&]() {
    Var<double> y = run(false);
    double acc = 0;
    for (int64_t i = 0; i < y.value().size(); ++i) acc += y.value().data[i] * cot.data[i];
    return acc;
  };
  EXPECT_LT(
      oracle::fd_compare(eval, level.gain().mutable_value(), level.gain().grad()).max_rel_err,
      1e-3);
  mfds::DOConv2d<double>& fuse = level.fuse_conv();
  EXPECT_LT(oracle::fd_compare(eval, fuse.conventional_operator().mutable_value(),
                               fuse.conventional_operator().grad())
                .max_rel_err,
            1e-3);
}
