#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mfds/checkpoint.hpp"
#include "mfds/supervision.hpp"
#include "mfds/train.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using mfds::ForwardOutputs;
using mfds::MfdsNet;
using mfds::ModelConfig;
using mfds::Rng;
using mfds::SupervisionConfig;
using mfds::Tensor;
using mfds::Var;

namespace {

ModelConfig tiny_config() {
  ModelConfig m;
  m.base_channels = 8;
  m.gsem_reduction = 2;
  m.dfim_reduction = 2;
  m.cbam_reduction = 2;
  m.scm_grids = {1, 2, 4};
  return m;
}

Tensor<float> random_binary_mask(int n, int h, int w, Rng& rng) {
  Tensor<float> gt(n, 1, h, w);
  for (auto& v : gt.data) v = rng.bernoulli(0.4) ? 1.f : 0.f;
  return gt;
}

std::vector<mfds::SamplePair> tiny_synth_set(int n, int size, uint64_t seed) {
  mfds::SynthConfig cfg;
  cfg.size = size;
  cfg.seed = seed;
  cfg.min_shapes = 1;
  cfg.max_shapes = 3;
  std::vector<mfds::SamplePair> out;
  for (auto& s : mfds::generate(cfg, n)) out.push_back(std::move(s.pair));
  return out;
}

}  // namespace

TEST(BceLoss, ZeroLogitsGiveLn2) {
  Rng rng(1);
  Tensor<float> logits(2, 1, 4, 4);
  Tensor<float> gt = random_binary_mask(2, 4, 4, rng);
  Var<float> loss = mfds::bce_loss(Var<float>(logits, false), gt);
  EXPECT_NEAR(loss.value().data[0], std::log(2.0), 1e-6);
}

TEST(BceLoss, SaturatedCorrectPredictionsVanish) {
  Rng rng(2);
  Tensor<float> gt = random_binary_mask(1, 4, 4, rng);
  Tensor<float> logits(1, 1, 4, 4);
  for (int64_t i = 0; i < gt.size(); ++i) logits.data[i] = gt.data[i] ? 20.f : -20.f;
  Var<float> loss = mfds::bce_loss(Var<float>(logits, false), gt);
  EXPECT_LT(loss.value().data[0], 1e-8f);
}

TEST(BceLoss, MatchesPixelLoopOracle) {
  Rng rng(3);
  Tensor<float> logits = oracle::random_tensor<float>(2, 1, 8, 8, rng);
  Tensor<float> gt = random_binary_mask(2, 8, 8, rng);
  Var<float> loss = mfds::bce_loss(Var<float>(logits, false), gt);
  double acc = 0;
  for (int64_t i = 0; i < logits.size(); ++i) {
    double p_hat = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[i])));
    double p = gt.data[i];
    acc += -(p * std::log(p_hat) + (1 - p) * std::log(1 - p_hat));
  }
  EXPECT_NEAR(loss.value().data[0], acc / logits.size(), 1e-6);
}

TEST(BceLoss, RejectsNonBinaryGroundTruth) {
  Tensor<float> logits(1, 1, 2, 2);
  Tensor<float> gt(1, 1, 2, 2);
  gt.data[2] = 0.5f;
  EXPECT_THROW(mfds::bce_loss(Var<float>(logits, false), gt), std::invalid_argument);
}

TEST(BceLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor<double> logits = oracle::random_tensor<double>(1, 1, 4, 4, rng);
  Tensor<double> gt = random_binary_mask(1, 4, 4, rng).cast<double>();
  Var<double> v(logits, true);
  Var<double> loss = mfds::bce_loss(v, gt);
  loss.backward();
  auto eval = [&]() {
    mfds::NoGradGuard ng;
    Var<double> vv(v.value(), false);
    return static_cast<double>(mfds::bce_loss(vv, gt).value().data[0]);
  };
  EXPECT_LT(oracle::fd_compare(eval, v.mutable_value(), v.grad()).max_rel_err, 1e-6);
}

TEST(TotalLoss, HandSummedWeightingOfLn2Components) {
  // All six component losses equal ln 2 when every logit map is zero; the
  // 1e-9 agreement with the hand sum needs double arithmetic.
  Rng rng(5);
  ForwardOutputs<double> out;
  out.final_logits = Var<double>(Tensor<double>(1, 1, 32, 32), false);
  for (int i = 0; i < 5; ++i)
    out.aux_logits[i] = Var<double>(Tensor<double>(1, 1, 8, 8), false);
  Tensor<double> gt = random_binary_mask(1, 32, 32, rng).cast<double>();
  SupervisionConfig cfg;  // theta = 0.2, phi = 0.5
  mfds::LossBreakdown<double> lb = mfds::total_loss(out, gt, cfg);
  EXPECT_NEAR(lb.total.value().data[0], 2.9 * std::log(2.0), 1e-9);
  EXPECT_NEAR(lb.total.value().data[0], 2.010126, 1e-6);
}

TEST(TotalLoss, ThetaPhiZeroLeavesFinalOnly) {
  Rng rng(6);
  ForwardOutputs<float> out;
  out.final_logits = Var<float>(oracle::random_tensor<float>(1, 1, 16, 16, rng), false);
  for (int i = 0; i < 5; ++i)
    out.aux_logits[i] = Var<float>(oracle::random_tensor<float>(1, 1, 8, 8, rng), false);
  Tensor<float> gt = random_binary_mask(1, 16, 16, rng);
  SupervisionConfig cfg;
  cfg.theta = 0;
  cfg.phi = 0;
  mfds::LossBreakdown<float> lb = mfds::total_loss(out, gt, cfg);
  EXPECT_FLOAT_EQ(lb.total.value().data[0], lb.final_term.value().data[0]);
}

TEST(TotalLoss, DefaultsMatchPublishedWeights) {
  SupervisionConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.theta, 0.2);
  EXPECT_DOUBLE_EQ(cfg.phi, 0.5);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 0.001);
  EXPECT_EQ(cfg.epochs, 200);
}

TEST(TotalLoss, LinearInThetaAndPhi) {
  Rng rng(7);
  ForwardOutputs<float> out;
  out.final_logits = Var<float>(oracle::random_tensor<float>(1, 1, 16, 16, rng), false);
  for (int i = 0; i < 5; ++i)
    out.aux_logits[i] = Var<float>(oracle::random_tensor<float>(1, 1, 8, 8, rng), false);
  Tensor<float> gt = random_binary_mask(1, 16, 16, rng);
  SupervisionConfig c0, c1, c2;
  c0.theta = 0.0, c1.theta = 1.0, c2.theta = 2.0;
  c0.phi = c1.phi = c2.phi = 0.3;
  double l0 = mfds::total_loss(out, gt, c0).total.value().data[0];
  double l1 = mfds::total_loss(out, gt, c1).total.value().data[0];
  double l2 = mfds::total_loss(out, gt, c2).total.value().data[0];
  EXPECT_NEAR(l2 - l1, l1 - l0, 1e-5);
}

TEST(TotalLoss, RejectsMissingAuxMap) {
  ForwardOutputs<float> out;
  out.final_logits = Var<float>(Tensor<float>(1, 1, 8, 8), false);
  for (int i = 0; i < 4; ++i) out.aux_logits[i] = Var<float>(Tensor<float>(1, 1, 4, 4), false);
  Tensor<float> gt(1, 1, 8, 8);
  EXPECT_THROW(mfds::total_loss(out, gt, SupervisionConfig{}), std::invalid_argument);
}

TEST(AuxHead, UpsampledSingleChannelAndConstantWhenZeroed) {
  Rng rng(8);
  MfdsNet<float> net(11, tiny_config());
  mfds::NoGradGuard ng;
  Var<float> feat(oracle::random_tensor<float>(2, 32, 8, 8, rng), false);
  Var<float> logits = mfds::bilinear(net.aux_head(2).forward(feat), 64, 64);
  EXPECT_EQ(logits.value().shape_str(), "2x1x64x64");

  net.aux_head(2).conventional_operator().mutable_value().fill(0.f);
  net.aux_head(2).bias().mutable_value().data[0] = 0.37f;
  Var<float> flat = mfds::bilinear(net.aux_head(2).forward(feat), 64, 64);
  for (auto v : flat.value().data) ASSERT_FLOAT_EQ(v, 0.37f);
}

TEST(ForwardFull, ShapeTraceAndAuxResolutions) {
  MfdsNet<float> net(21, tiny_config());
  net.set_training(false);
  mfds::NoGradGuard ng;
  Rng rng(9);
  Tensor<float> a = oracle::random_tensor<float>(2, 3, 64, 64, rng);
  Tensor<float> b = oracle::random_tensor<float>(2, 3, 64, 64, rng);
  ForwardOutputs<float> out = net.forward_full(a, b);
  EXPECT_EQ(out.final_logits.value().shape_str(), "2x1x64x64");
  const int expect_hw[5] = {8, 8, 8, 16, 32};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(out.aux_logits[i].value().c, 1);
    EXPECT_EQ(out.aux_logits[i].value().h, expect_hw[i]) << "aux " << i;
    EXPECT_EQ(out.aux_logits[i].value().w, expect_hw[i]) << "aux " << i;
  }
}

TEST(ForwardFull, IdenticalImagesStayFinite) {
  MfdsNet<float> net(22, tiny_config());
  net.set_training(false);
  mfds::NoGradGuard ng;
  Rng rng(10);
  Tensor<float> a = oracle::random_tensor<float>(1, 3, 32, 32, rng);
  ForwardOutputs<float> out = net.forward_full(a, a);
  for (auto v : out.final_logits.value().data) ASSERT_TRUE(std::isfinite(v));
}

TEST(ForwardFull, RejectsBadGridDivisibility) {
  MfdsNet<float> net(23, tiny_config());  // largest grid 4 needs H/8 % 4 == 0
  Tensor<float> a(1, 3, 40, 40);
  EXPECT_THROW(net.forward_full(a, a), std::invalid_argument);
}

TEST(ForwardFull, BatchIndependenceInEvalMode) {
  MfdsNet<float> net(24, tiny_config());
  net.set_training(false);
  mfds::NoGradGuard ng;
  Rng rng(11);
  Tensor<float> a = oracle::random_tensor<float>(2, 3, 32, 32, rng);
  Tensor<float> b = oracle::random_tensor<float>(2, 3, 32, 32, rng);
  ForwardOutputs<float> joint = net.forward_full(a, b);

  auto slice = [](const Tensor<float>& t, int i) {
    Tensor<float> s(1, t.c, t.h, t.w);
    std::copy(t.plane(i, 0), t.plane(i, 0) + s.size(), s.ptr());
    return s;
  };
  for (int i = 0; i < 2; ++i) {
    ForwardOutputs<float> solo = net.forward_full(slice(a, i), slice(b, i));
    Tensor<float> joint_i = slice(joint.final_logits.value(), i);
    EXPECT_LT(mfds::max_abs_diff(joint_i, solo.final_logits.value()), 1e-5f) << "batch " << i;
  }
}

TEST(ForwardFull, PurelyFunctionalInEvalMode) {
  MfdsNet<float> net(25, tiny_config());
  net.set_training(false);
  mfds::NoGradGuard ng;
  Rng rng(12);
  Tensor<float> a = oracle::random_tensor<float>(1, 3, 32, 32, rng);
  Tensor<float> b = oracle::random_tensor<float>(1, 3, 32, 32, rng);
  ForwardOutputs<float> o1 = net.forward_full(a, b);
  ForwardOutputs<float> o2 = net.forward_full(a, b);
  EXPECT_EQ(mfds::max_abs_diff(o1.final_logits.value(), o2.final_logits.value()), 0.f);
}

TEST(FoldModel, LogitsAgreeAndIdempotentWithFewerTensors) {
  MfdsNet<float> net(26, tiny_config());
  net.set_training(false);
  mfds::NoGradGuard ng;
  Rng rng(13);
  size_t params_before = net.named_parameters().size();
  Tensor<float> a = oracle::random_tensor<float>(1, 3, 32, 32, rng);
  Tensor<float> b = oracle::random_tensor<float>(1, 3, 32, 32, rng);
  Tensor<float> before = net.forward_full(a, b).final_logits.value();
  net.fold();
  Tensor<float> after = net.forward_full(a, b).final_logits.value();
  EXPECT_LT(mfds::max_abs_diff(before, after), 1e-4f);
  size_t params_after = net.named_parameters().size();
  EXPECT_LT(params_after, params_before);
  net.fold();  // folding twice is a no-op
  Tensor<float> again = net.forward_full(a, b).final_logits.value();
  EXPECT_EQ(mfds::max_abs_diff(after, again), 0.f);
  EXPECT_EQ(net.named_parameters().size(), params_after);
}

TEST(Checkpoint, SaveLoadForwardBitwiseRoundTrip) {
  fs::path dir = fs::temp_directory_path() / "mfds_ckpt_test";
  fs::create_directories(dir);
  MfdsNet<float> net(27, tiny_config());
  // Move away from the all-default init so the round-trip is non-trivial.
  Rng rng(14);
  for (auto& [name, p] : net.named_parameters())
    for (auto& v : p.mutable_value().data) v += 0.01f * static_cast<float>(rng.normal());
  net.set_training(false);
  std::string path = (dir / "model.ckpt").string();
  mfds::save_checkpoint(path, net, nlohmann::json{{"epoch", 3}}, false);

  MfdsNet<float> restored(999, tiny_config());
  mfds::CheckpointData ckpt = mfds::load_checkpoint_data(path);
  EXPECT_EQ(ckpt.meta["epoch"], 3);
  mfds::load_into_model(ckpt, restored);
  restored.set_training(false);

  mfds::NoGradGuard ng;
  Tensor<float> a = oracle::random_tensor<float>(1, 3, 32, 32, rng);
  Tensor<float> b = oracle::random_tensor<float>(1, 3, 32, 32, rng);
  Tensor<float> y1 = net.forward_full(a, b).final_logits.value();
  Tensor<float> y2 = restored.forward_full(a, b).final_logits.value();
  EXPECT_EQ(mfds::max_abs_diff(y1, y2), 0.f);
}

TEST(Train, LossDecreasesOnTinySyntheticSet) {
  auto data = tiny_synth_set(4, 32, 31);
  MfdsNet<float> net(28, tiny_config());
  SupervisionConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 2;
  cfg.seed = 5;
  mfds::HarnessOptions opt;
  opt.max_steps = 50;
  mfds::TrainReport rep = mfds::train(net, data, data, cfg, opt);
  ASSERT_GE(rep.epoch_losses.size(), 2u);
  EXPECT_LT(rep.epoch_losses.back(), rep.epoch_losses.front());
}

TEST(Train, DeterministicLossSequenceAndBitIdenticalBestCheckpoint) {
  auto data = tiny_synth_set(4, 32, 33);
  fs::path dir1 = fs::temp_directory_path() / "mfds_det_1";
  fs::path dir2 = fs::temp_directory_path() / "mfds_det_2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  auto run = [&](const fs::path& dir) {
    MfdsNet<float> net(29, tiny_config());
    SupervisionConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.seed = 7;
    mfds::HarnessOptions opt;
    opt.out_dir = dir.string();
    return mfds::train(net, data, data, cfg, opt);
  };
  mfds::TrainReport r1 = run(dir1);
  mfds::TrainReport r2 = run(dir2);
  ASSERT_EQ(r1.epoch_losses.size(), r2.epoch_losses.size());
  for (size_t i = 0; i < r1.epoch_losses.size(); ++i)
    EXPECT_NEAR(r1.epoch_losses[i], r2.epoch_losses[i], 1e-6);

  std::ifstream f1(dir1 / "best.ckpt", std::ios::binary);
  std::ifstream f2(dir2 / "best.ckpt", std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  ASSERT_FALSE(c1.empty());
  EXPECT_EQ(c1, c2);
}

TEST(Train, NonFiniteLossAbortsNamingTerm) {
  auto data = tiny_synth_set(2, 32, 35);
  MfdsNet<float> net(30, tiny_config());
  // Poison one final-head weight so the final logits blow up immediately.
  net.endlayer().head().bias().mutable_value().data[0] =
      std::numeric_limits<float>::quiet_NaN();
  SupervisionConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  try {
    mfds::train(net, data, data, cfg, mfds::HarnessOptions{});
    FAIL() << "expected non-finite abort";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("final"), std::string::npos) << e.what();
  }
}

TEST(Train, EveryParameterReceivesGradientAtGenericPoint) {
  // Gates start at zero, which makes their upstream branches vanish from the
  // gradient; open them before checking for dead parameters.
  MfdsNet<double> net(31, tiny_config());
  for (int l = 0; l < 3; ++l) net.mdpm().level(l).gain().mutable_value().data[0] = 0.3;
  for (size_t i = 0; i < net.gsem().scm_count(); ++i)
    net.gsem().scm(i).gamma().mutable_value().data[0] = 0.2;
  net.set_training(true);
  Rng rng(15);
  Tensor<double> a = oracle::random_tensor<double>(2, 3, 32, 32, rng);
  Tensor<double> b = oracle::random_tensor<double>(2, 3, 32, 32, rng);
  Tensor<double> gt = random_binary_mask(2, 32, 32, rng).cast<double>();
  ForwardOutputs<double> out = net.forward_full(a, b);
  mfds::LossBreakdown<double> lb = mfds::total_loss(out, gt, SupervisionConfig{});
  lb.total.backward();
  for (auto& [name, p] : net.named_parameters()) {
    ASSERT_TRUE(p.has_grad()) << name;
    double norm = 0;
    for (auto v : p.grad().data) norm += std::abs(v);
    EXPECT_GT(norm, 0.0) << name << " received no gradient";
  }
}
