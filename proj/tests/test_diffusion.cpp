#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "facecond/diffusion.hpp"
#include "facecond/numerics/kernels.hpp"
#include "support.hpp"

namespace facecond {
namespace {

TrainData small_data(const Config& c, const Params& p) {
  const RecognitionEmbedder rec(p, c);
  const RecognitionFn embed = [&rec](const Tensor& f) { return rec(f); };
  const Dataset image = make_dataset(12, 2, DataStage::Image, RngState{1, 0}, c, embed);
  const Dataset video = make_dataset(12, 1, DataStage::Video, RngState{2, 0}, c, embed);
  return make_train_data(image, video, rec, c);
}

bool same_params(const Params& a, const Params& b, const std::function<bool(const std::string&)>& which) {
  for (const auto& [name, t] : a) {
    if (which(name) && !t.bit_equal(b.at(name))) return false;
  }
  return true;
}

TEST(Schedule, LinearBetasAndAlphaBars) {
  const NoiseSchedule s = NoiseSchedule::linear(100, 1e-4, 0.02);
  ASSERT_EQ(s.size(), 100);
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.betas.back(), 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bars[0], 1.0 - 1e-4);
  for (int t = 1; t < 100; ++t) EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
  EXPECT_THROW(NoiseSchedule::linear(0, 1e-4, 0.02), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.1, 0.01), ConfigError);
  EXPECT_THROW(s.check_t(100), ContractError);
  EXPECT_THROW(s.check_t(-1), ContractError);
}

TEST(Schedule, RespacingKeepsAlphaBars) {
  const NoiseSchedule s = NoiseSchedule::linear(100, 1e-4, 0.02);
  const NoiseSchedule r = s.respaced(10);
  ASSERT_EQ(r.size(), 10);
  EXPECT_EQ(r.timesteps.front(), 0);
  EXPECT_EQ(r.timesteps.back(), 99);
  for (int i = 0; i < r.size(); ++i) EXPECT_NEAR(r.alpha_bars[i], s.alpha_bars[r.timesteps[i]], 1e-15);
}

TEST(Diffusion, ReconstructInvertsForwardNoise) {
  const NoiseSchedule s = NoiseSchedule::linear(100, 1e-4, 0.02);
  RngState r{3, 0};
  const auto x0 = seeded_normal(r, {2, 16}).cast<double>();
  const auto eps = seeded_normal(r, {2, 16}).cast<double>();
  for (int t : {0, 37, 99}) {
    const auto back = reconstruct_x0(forward_noise(x0, t, eps, s), eps, t, s);
    EXPECT_LT(max_abs_diff(back, x0), 1e-12) << "t " << t;
  }
}

TEST(Diffusion, KnownX0OracleSamplingRecoversX0) {
  const Config c = test::small_config();
  RngState r{4, 0};
  const Tensor x0 = seeded_uniform(r, {2, 64}, 0.0f, 1.0f);
  for (const NoiseSchedule& s : {NoiseSchedule::from_config(c), NoiseSchedule::from_config(c).respaced(5)}) {
    const Tensor x = sample_loop(known_x0_oracle(x0, NoiseSchedule::from_config(c)), s, RngState{5, 0}, 2, c);
    EXPECT_LT(max_abs_diff(x, x0), 1e-4);
  }
}

TEST(Diffusion, SampleLoopIsDeterministic) {
  const Config c = test::small_config();
  const Params p = init_params(c, RngState{6, 0});
  RngState r{7, 0};
  FaceCondition cond = embed_condition(seeded_uniform(r, {8, 8}, 0.0f, 1.0f), std::vector<int>(8, 1),
                                       TokenMask::single(8, 2), p, c);
  const NoiseSchedule s = NoiseSchedule::from_config(c).respaced(4);
  EXPECT_TRUE(sample_loop(conditioned_sampler(p, cond, c), s, RngState{8, 0}, 2, c)
                  .bit_equal(sample_loop(conditioned_sampler(p, cond, c), s, RngState{8, 0}, 2, c)));
}

class TrainingTest : public ::testing::Test {
 protected:
  void SetUp() override {
    c_ = test::small_config();
    p_ = init_params(c_, RngState{9, 0});
    data_ = small_data(c_, p_);
  }
  Config c_;
  Params p_;
  TrainData data_;
};

TEST_F(TrainingTest, OracleHasZeroNoiseLoss) {
  const NoiseSchedule s = NoiseSchedule::from_config(c_);
  RngState r{10, 0};
  const LossBreakdown b = loss_total(data_.video[0], oracle_predictor<float>(), p_, s, r, 0.1, 0.5, c_);
  EXPECT_EQ(b.l_noise, 0.0);
  EXPECT_GE(b.l_id, 0.0);
  EXPECT_LE(b.l_id, 2.0);
  EXPECT_DOUBLE_EQ(b.total, b.l_noise + 0.1 * b.l_id);
}

TEST_F(TrainingTest, FaceMaskedLossIgnoresBackground) {
  const NoiseSchedule s = NoiseSchedule::from_config(c_);
  const TrainSample& sample = data_.video[0];
  const std::vector<float> mask = face_pixel_mask(sample, c_);
  const Predictor<float> off_face = [&](ParamBinder<float>& p, const PredictContext<float>& ctx) {
    Tensor e = ctx.true_eps;
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (mask[i] == 0.0f) e[i] += 5.0f;
    }
    return p.graph().constant(e);
  };
  int masked = 0, unmasked = 0;
  for (int k = 0; k < 20; ++k) {
    RngState r{11, static_cast<std::uint64_t>(k) * 1000};
    const LossBreakdown b = loss_total(sample, off_face, p_, s, r, 0.0, 0.5, c_);
    if (b.face_masked) {
      ++masked;
      EXPECT_EQ(b.l_noise, 0.0);
    } else {
      ++unmasked;
      EXPECT_GT(b.l_noise, 1.0);
    }
  }
  EXPECT_GT(masked, 0);
  EXPECT_GT(unmasked, 0);
}

TEST_F(TrainingTest, TrainableSetsFollowFlags) {
  Config c = c_;
  auto base = trainable_in(Stage::BasePretrain, c);
  EXPECT_TRUE(base("base.final.out.w"));
  EXPECT_FALSE(base("adapter.can.proj"));
  auto full = trainable_in(Stage::ImagePretrain, c);
  EXPECT_TRUE(full("adapter.can.proj"));
  EXPECT_TRUE(full("adapter.face.query"));
  EXPECT_TRUE(full("adapter.id.fuse.w1"));
  EXPECT_FALSE(full("base.final.out.w"));
  EXPECT_FALSE(full("fixed.id_proj"));
  c.disable_id_branch = true;
  auto no_id = trainable_in(Stage::VideoFinetune, c);
  EXPECT_FALSE(no_id("adapter.id.fuse.w1"));
  EXPECT_FALSE(no_id("adapter.can.proj"));
  EXPECT_TRUE(no_id("adapter.face.query"));
}

// Frozen weights stay bit-identical through 100 adapter steps.
TEST_F(TrainingTest, AdapterStagesNeverWriteFrozenWeights) {
  Params p = p_;
  AdamState opt;
  RngState r{12, 0};
  for (int step = 0; step < 100; ++step) {
    const TrainSample* s = &data_.video[static_cast<std::size_t>(step) % data_.video.size()];
    train_step(p, {s}, opt, Stage::VideoFinetune, r, 1e-3, c_);
  }
  EXPECT_TRUE(same_params(p, p_, [](const std::string& n) {
    const ParamGroup g = param_group(n);
    return g == ParamGroup::Fixed || g == ParamGroup::Base;
  }));
  EXPECT_FALSE(same_params(p, p_, [](const std::string& n) { return param_group(n) == ParamGroup::Can; }));
}

TEST_F(TrainingTest, BasePretrainTouchesOnlyBase) {
  Params p = p_;
  AdamState opt;
  RngState r{13, 0};
  for (int step = 0; step < 5; ++step) train_step(p, {&data_.image[0], &data_.video[0]}, opt, Stage::BasePretrain, r, 1e-3, c_);
  EXPECT_TRUE(same_params(p, p_, [](const std::string& n) { return param_group(n) != ParamGroup::Base; }));
  EXPECT_FALSE(same_params(p, p_, [](const std::string& n) { return param_group(n) == ParamGroup::Base; }));
}

TEST_F(TrainingTest, ImageStageRejectsVideoSamples) {
  Params p = p_;
  AdamState opt;
  RngState r{14, 0};
  EXPECT_THROW(train_step(p, {&data_.video[0]}, opt, Stage::ImagePretrain, r, 1e-3, c_), ContractError);
  EXPECT_THROW(train_step(p, {}, opt, Stage::ImagePretrain, r, 1e-3, c_), EmptyInputError);
}

TEST_F(TrainingTest, NonFiniteLossAbortsNamingTheTensor) {
  Params p = p_;
  p.at("adapter.face.query")[0] = std::numeric_limits<float>::quiet_NaN();
  AdamState opt;
  RngState r{15, 0};
  try {
    train_step(p, {&data_.video[0]}, opt, Stage::VideoFinetune, r, 1e-3, c_);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("adapter.face.query"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Training, LearningRateSchedule) {
  EXPECT_DOUBLE_EQ(lr_at(1e-3, 0.1, 0, 100), 1e-3);
  EXPECT_NEAR(lr_at(1e-3, 0.1, 99, 100), 1e-4, 1e-15);
  EXPECT_DOUBLE_EQ(lr_at(1e-3, 0.1, 0, 1), 1e-3);
}

TEST_F(TrainingTest, RunTrainingHonorsStagesAndIsDeterministic) {
  Config c = c_;
  c.steps_base = 3;
  c.steps_image = 3;
  c.steps_video = 3;
  Params a = p_, b = p_;
  const TrainReport ra = run_training(a, data_, c);
  const TrainReport rb = run_training(b, data_, c);
  EXPECT_EQ(ra.stages_run, (std::vector<std::string>{"base_pretrain", "image_pretrain", "video_finetune"}));
  EXPECT_EQ(ra.curve.size(), 9u);
  EXPECT_TRUE(same_params(a, b, [](const std::string&) { return true; }));
  EXPECT_EQ(ra.final_l_noise, rb.final_l_noise);

  c.skip_pretrain = true;
  Params s = p_;
  EXPECT_EQ(run_training(s, data_, c).stages_run, (std::vector<std::string>{"base_pretrain", "video_finetune"}));

  c.steps_base = c.steps_image = c.steps_video = 0;
  Params z = p_;
  run_training(z, data_, c);
  EXPECT_TRUE(same_params(z, p_, [](const std::string&) { return true; }));
}

TEST_F(TrainingTest, ManifestListsStagesRun) {
  Config c = c_;
  c.skip_pretrain = true;
  c.steps_base = c.steps_video = 1;
  Params p = p_;
  const std::string m = run_manifest(c, run_training(p, data_, c), {});
  EXPECT_NE(m.find("stages=base_pretrain,video_finetune\n"), std::string::npos);
  EXPECT_EQ(m.find("image_pretrain"), std::string::npos);
}

}  // namespace
}  // namespace facecond
