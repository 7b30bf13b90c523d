#include <gtest/gtest.h>

#include "mfds/backbone.hpp"
#include "testutil.hpp"

using mfds::Backbone;
using mfds::FeaturePyramid;
using mfds::Rng;
using mfds::Tensor;
using mfds::Var;

TEST(Backbone, PyramidShapesAt256) {
  Rng rng(1);
  Backbone<float> net(rng);
  net.set_training(false);
  mfds::NoGradGuard ng;
  Var<float> img(oracle::random_tensor<float>(2, 3, 256, 256, rng), false);
  FeaturePyramid<float> pyr = net.extract(img);
  EXPECT_EQ(pyr.level0.value().shape_str(), "2x64x128x128");
  EXPECT_EQ(pyr.level1.value().shape_str(), "2x128x64x64");
  EXPECT_EQ(pyr.level2.value().shape_str(), "2x256x32x32");
}

TEST(Backbone, BatchSizePreservedAtEveryLevel) {
  Rng rng(2);
  Backbone<float> net(rng, 8);
  net.set_training(false);
  mfds::NoGradGuard ng;
  for (int b : {1, 2, 7}) {
    Var<float> img(oracle::random_tensor<float>(b, 3, 16, 16, rng), false);
    FeaturePyramid<float> pyr = net.extract(img);
    EXPECT_EQ(pyr.level0.value().n, b);
    EXPECT_EQ(pyr.level1.value().n, b);
    EXPECT_EQ(pyr.level2.value().n, b);
  }
}

TEST(Backbone, RejectsIndivisibleDims) {
  Rng rng(3);
  Backbone<float> net(rng, 8);
  Var<float> img(Tensor<float>(1, 3, 20, 16), false);
  EXPECT_THROW(net.extract(img), std::invalid_argument);
}

TEST(Backbone, DeterministicInEvalMode) {
  Rng rng(4);
  Backbone<float> net(rng, 8);
  net.set_training(false);
  mfds::NoGradGuard ng;
  Tensor<float> img = oracle::random_tensor<float>(1, 3, 16, 16, rng);
  FeaturePyramid<float> a = net.extract(Var<float>(img, false));
  FeaturePyramid<float> b = net.extract(Var<float>(img, false));
  EXPECT_EQ(mfds::max_abs_diff(a.level0.value(), b.level0.value()), 0.f);
  EXPECT_EQ(mfds::max_abs_diff(a.level1.value(), b.level1.value()), 0.f);
  EXPECT_EQ(mfds::max_abs_diff(a.level2.value(), b.level2.value()), 0.f);
}

TEST(Backbone, TwinSharesWeightsAndIsSymmetric) {
  Rng rng(5);
  Backbone<float> net(rng, 8);
  net.set_training(false);
  mfds::NoGradGuard ng;
  Tensor<float> a = oracle::random_tensor<float>(1, 3, 16, 16, rng);
  Tensor<float> b = oracle::random_tensor<float>(1, 3, 16, 16, rng);

  auto same = net.twin_extract(Var<float>(a, false), Var<float>(a, false));
  EXPECT_EQ(mfds::max_abs_diff(same.first.level2.value(), same.second.level2.value()), 0.f);

  auto fwd = net.twin_extract(Var<float>(a, false), Var<float>(b, false));
  auto rev = net.twin_extract(Var<float>(b, false), Var<float>(a, false));
  EXPECT_EQ(mfds::max_abs_diff(fwd.first.level1.value(), rev.second.level1.value()), 0.f);
  EXPECT_EQ(mfds::max_abs_diff(fwd.second.level0.value(), rev.first.level0.value()), 0.f);
  EXPECT_GT(mfds::max_abs_diff(fwd.first.level2.value(), fwd.second.level2.value()), 0.f);
}

TEST(Backbone, TwinRejectsShapeMismatch) {
  Rng rng(6);
  Backbone<float> net(rng, 8);
  Var<float> a(Tensor<float>(1, 3, 16, 16), false);
  Var<float> b(Tensor<float>(1, 3, 24, 16), false);
  EXPECT_THROW(net.twin_extract(a, b), std::invalid_argument);
}

TEST(Backbone, NoPoolingInLayerListAndResNet34StageCounts) {
  Rng rng(7);
  Backbone<float> net(rng, 8);
  for (const auto& layer : net.describe())
    EXPECT_EQ(layer.find("pool"), std::string::npos) << layer;
  EXPECT_EQ(net.blocks_in_stage(1), 3);
  EXPECT_EQ(net.blocks_in_stage(2), 4);
  EXPECT_EQ(net.blocks_in_stage(3), 6);
}

TEST(Backbone, GradientReachesEveryParameterFromLevel2Loss) {
  Rng rng(8);
  Backbone<double> net(rng, 4);
  net.set_training(true);
  Var<double> img(oracle::random_tensor<double>(2, 3, 16, 16, rng), false);
  FeaturePyramid<double> pyr = net.extract(img);
  Var<double> loss = mean_all(mul(pyr.level2, pyr.level2));
  loss.backward();
  std::vector<std::pair<std::string, Var<double>>> params;
  net.collect_params("backbone", params);
  ASSERT_GT(params.size(), 50u);
  for (auto& [name, p] : params) {
    ASSERT_TRUE(p.has_grad()) << name;
    double norm = 0;
    for (auto v : p.grad().data) norm += std::abs(v);
    EXPECT_GT(norm, 0.0) << name << " received no gradient";
  }
}
