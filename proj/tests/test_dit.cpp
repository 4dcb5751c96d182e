#include <gtest/gtest.h>

#include <chrono>

#include "facecond/dit.hpp"
#include "facecond/embedder.hpp"
#include "facecond/numerics/kernels.hpp"
#include "support.hpp"

namespace facecond {
namespace {

struct Inputs {
  Tensor x_t, x_txt, x_face, x_id;
  int t;
};

Inputs random_inputs(RngState& r, const Config& c) {
  const auto d = static_cast<std::size_t>(c.d);
  return Inputs{seeded_normal(r, {static_cast<std::size_t>(c.frames), static_cast<std::size_t>(c.pixels())}),
                seeded_normal(r, {static_cast<std::size_t>(c.n_txt), d}),
                seeded_normal(r, {static_cast<std::size_t>(c.face_tokens), d}), seeded_normal(r, {2, d}),
                static_cast<int>(next_below(r, static_cast<std::uint64_t>(c.T)))};
}

void perturb(Params& p, const std::string& prefix, RngState& r) {
  for (auto& [name, t] : p) {
    if (name.rfind(prefix, 0) != 0) continue;
    const Tensor n = seeded_normal(r, t.shape(), 0.2f);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += n[i];
  }
}

TEST(Dit, TimestepFeaturesAtZero) {
  const auto f = timestep_features<double>(0, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(f[i], 0.0);
    EXPECT_EQ(f[4 + i], 1.0);
  }
}

TEST(Dit, GatedResidualWithZeroGateIsIdentity) {
  RngState r{1, 0};
  const Tensor x = seeded_normal(r, {5, 8});
  const Tensor branch = seeded_normal(r, {5, 8});
  EXPECT_TRUE(gated_residual(x, branch, Tensor({8})).bit_equal(x));
}

TEST(Dit, ModulateWithZeroFactorsIsLayerNorm) {
  RngState r{2, 0};
  const Tensor x = seeded_normal(r, {5, 8});
  const Tensor out = modulate(x, Tensor({8}), Tensor({8}));
  const Tensor ln = layer_norm(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[i], ln[i], 1e-6);
}

TEST(Dit, LayoutRejectsWrongFaceCount) {
  const Config c = test::small_config();
  const SequenceLayout l = SequenceLayout::make(c, 2, true);
  EXPECT_EQ(l.total(), static_cast<std::size_t>(c.n_txt + 2 * c.patches_per_frame() + c.face_tokens));
  EXPECT_EQ(l.face_begin(), static_cast<std::size_t>(c.n_txt + 2 * c.patches_per_frame()));
  EXPECT_THROW(SequenceLayout::make(c, 0, false), DimensionError);
}

// Zero-initialized facial machinery and no face tokens reproduce the plain
// stack bit for bit, on the reference config over 20 random inputs, with
// and without identity tokens.
TEST(Dit, BaselineEquivalenceAtInitialization) {
  const Config c;
  const Params p = init_params(c, RngState{3, 0}.substream("init"));
  RngState r{4, 0};
  const auto start = std::chrono::steady_clock::now();
  for (int k = 0; k < 20; ++k) {
    const Inputs in = random_inputs(r, c);
    const Tensor base = base_model_forward(in.x_t, in.x_txt, in.t, p, c);
    EXPECT_TRUE(model_forward(in.x_t, in.x_txt, Tensor(), Tensor(), in.t, p, c).bit_equal(base)) << "case " << k;
    EXPECT_TRUE(model_forward(in.x_t, in.x_txt, Tensor(), in.x_id, in.t, p, c).bit_equal(base)) << "case " << k;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 5.0);
}

TEST(Dit, OutputShapeMatchesInput) {
  const Config c = test::small_config();
  const Params p = init_params(c, RngState{5, 0});
  RngState r{6, 0};
  const Inputs in = random_inputs(r, c);
  EXPECT_EQ(model_forward(in.x_t, in.x_txt, in.x_face, in.x_id, in.t, p, c).shape(), in.x_t.shape());
  EXPECT_THROW(model_forward(in.x_t, in.x_txt, in.x_face, in.x_id, c.T, p, c), ContractError);
}

// Before any training the CAN residual is zero, so the applied text and
// video factors equal the base predictor's on every adapter layer.
TEST(Dit, CanResidualIsIdentityAtInitialization) {
  const Config c;
  const Params p = init_params(c, RngState{7, 0}.substream("init"));
  RngState r{8, 0};
  for (int k = 0; k < 5; ++k) {
    const Inputs in = random_inputs(r, c);
    for (int l = 0; l < c.layers; ++l) {
      if (!has_adapter(l)) continue;
      const auto f = layer_factors(p, in.t, l, in.x_id, c);
      EXPECT_TRUE(f[0].bit_equal(modulation_base(p, in.t, l, Modality::Txt, c))) << "layer " << l;
      EXPECT_TRUE(f[1].bit_equal(modulation_base(p, in.t, l, Modality::Vid, c))) << "layer " << l;
    }
  }
}

TEST(Dit, CanShiftsOnlyAdapterLayersAndRespectsFlags) {
  Config c = test::small_config();
  Params p = init_params(c, RngState{9, 0});
  RngState r{10, 0};
  perturb(p, "adapter.can.", r);
  const Inputs in = random_inputs(r, c);
  for (int l = 0; l < c.layers; ++l) {
    const auto f = layer_factors(p, in.t, l, in.x_id, c);
    const bool same = f[1].bit_equal(modulation_base(p, in.t, l, Modality::Vid, c));
    EXPECT_EQ(same, !has_adapter(l)) << "layer " << l;
    // Without identity tokens nothing shifts.
    EXPECT_TRUE(layer_factors(p, in.t, l, Tensor(), c)[1].bit_equal(modulation_base(p, in.t, l, Modality::Vid, c)));
  }
  c.disable_can = true;
  EXPECT_TRUE(layer_factors(p, in.t, 0, in.x_id, c)[1].bit_equal(modulation_base(p, in.t, 0, Modality::Vid, c)));
}

TEST(Dit, DirectCanPredictionReplacesBaseFactors) {
  Config c = test::small_config();
  c.direct_can_prediction = true;
  const Params p = init_params(c, RngState{11, 0});
  RngState r{12, 0};
  const Inputs in = random_inputs(r, c);
  const auto f = layer_factors(p, in.t, 0, in.x_id, c);
  for (std::size_t k = 0; k < kFactors; ++k) {
    for (float v : f[1].f[k].flat()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Dit, CanResidualNeedsAdapterLayer) {
  const Config c = test::small_config();
  const Params p = init_params(c, RngState{13, 0});
  Graph<float> g;
  ParamBinder<float> b(g, p);
  RngState r{14, 0};
  Var te = time_embedding(b, 3, c);
  Var mu = g.constant(Tensor({1, 16}));
  Var id = g.constant(seeded_normal(r, {2, 16}));
  EXPECT_THROW(can_residual(b, te, 1, mu, id, c), ContractError);
  EXPECT_NO_THROW(can_residual(b, te, 0, mu, id, c));
}

// Cross-attention weights matter on adapter layers with face tokens and
// nowhere else.
TEST(Dit, DecoupledAttentionUsesFaceMapsOnlyOnAdapterLayers) {
  const Config c = test::small_config();
  const Params p0 = init_params(c, RngState{15, 0});
  Params p1 = p0;
  RngState r{16, 0};
  perturb(p1, "adapter.face.block.", r);
  const SequenceLayout with = SequenceLayout::make(c, c.frames, true);
  const SequenceLayout without = SequenceLayout::make(c, c.frames, false);
  const Tensor h = seeded_normal(r, {with.total(), 16});
  const Tensor h_short = seeded_normal(r, {without.total(), 16});
  EXPECT_FALSE(decoupled_attention(h, with, 0, p0, c).bit_equal(decoupled_attention(h, with, 0, p1, c)));
  EXPECT_TRUE(decoupled_attention(h, with, 1, p0, c).bit_equal(decoupled_attention(h, with, 1, p1, c)));
  EXPECT_TRUE(
      decoupled_attention(h_short, without, 0, p0, c).bit_equal(decoupled_attention(h_short, without, 0, p1, c)));
}

TEST(Dit, BaseForwardReadsNoAdapterWeights) {
  const Config c = test::small_config();
  const Params p0 = init_params(c, RngState{17, 0});
  Params p1 = p0;
  RngState r{18, 0};
  perturb(p1, "adapter.", r);
  const Inputs in = random_inputs(r, c);
  EXPECT_TRUE(base_model_forward(in.x_t, in.x_txt, in.t, p0, c).bit_equal(base_model_forward(in.x_t, in.x_txt, in.t, p1, c)));
}

}  // namespace
}  // namespace facecond
