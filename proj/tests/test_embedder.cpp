#include <gtest/gtest.h>

#include "facecond/dataforge.hpp"
#include "facecond/embedder.hpp"
#include "facecond/numerics/kernels.hpp"
#include "support.hpp"

namespace facecond {
namespace {

Tensor random_tensor(RngState& r, Shape shape) { return seeded_normal(r, std::move(shape)); }

TEST(Embedder, PatchifyIsRowMajor) {
  Tensor img({4, 4});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
  const Tensor p = patchify(img, 2);
  ASSERT_EQ(p.shape(), (Shape{4, 4}));
  EXPECT_TRUE(p.bit_equal(Tensor::from_rows({{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}})));
  EXPECT_THROW(patchify(img, 3), DimensionError);
}

TEST(Embedder, TextOutsideVocabularyIsRejected) {
  const Config c = test::small_config();
  const Params p = init_params(c, RngState{1, 0});
  EXPECT_THROW(embed_text<float>({0, 1, 9999}, p), DataError);
  EXPECT_EQ(embed_text<float>({1, 2}, p).shape(), (Shape{2, static_cast<std::size_t>(c.d)}));
}

// All-zero mask is the identity and perturbing x_id never reaches unmasked
// positions, over 50 random cases.
TEST(Embedder, MaskedReplacementTouchesOnlyMaskedTokens) {
  const Config c = test::small_config();
  RngState r{2, 0};
  for (int k = 0; k < 50; ++k) {
    const Params p = init_params(c, r.substream("init", static_cast<std::uint64_t>(k)));
    const std::size_t n = static_cast<std::size_t>(c.n_txt);
    const Tensor x_txt = random_tensor(r, {n, static_cast<std::size_t>(c.d)});
    const Tensor x_id = random_tensor(r, {2, static_cast<std::size_t>(c.d)});
    Tensor x_id2 = x_id;
    for (float& v : x_id2.storage()) v += static_cast<float>(next_normal(r));

    EXPECT_TRUE(fuse_id_text(x_id, x_txt, TokenMask::none(n), p).bit_equal(x_txt)) << "case " << k;

    TokenMask mask = TokenMask::none(n);
    for (std::size_t i = 0; i < n; ++i) mask.bits[i] = next_uniform(r) < 0.3 ? 1 : 0;
    if (!mask.any()) mask.bits[next_below(r, n)] = 1;
    const Tensor a = fuse_id_text(x_id, x_txt, mask, p);
    const Tensor b = fuse_id_text(x_id2, x_txt, mask, p);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ra = a.row(i), rb = b.row(i), rt = x_txt.row(i);
      const bool same_ab = std::equal(ra.begin(), ra.end(), rb.begin());
      const bool same_at = std::equal(ra.begin(), ra.end(), rt.begin());
      if (mask.bits[i]) {
        EXPECT_FALSE(same_ab) << "case " << k << " masked token " << i;
      } else {
        EXPECT_TRUE(same_ab && same_at) << "case " << k << " unmasked token " << i;
      }
    }
  }
}

TEST(Embedder, MaskLengthMustMatch) {
  const Config c = test::small_config();
  const Params p = init_params(c, RngState{3, 0});
  RngState r{4, 0};
  EXPECT_THROW(fuse_id_text(random_tensor(r, {2, 16}), random_tensor(r, {8, 16}), TokenMask::none(5), p),
               DimensionError);
  EXPECT_THROW(TokenMask::single(4, 4), DimensionError);
}

TEST(Embedder, ConditionShapesAndDisabledBranches) {
  Config c = test::small_config();
  const Params p = init_params(c, RngState{5, 0});
  const WorldGeometry geo = WorldGeometry::from_config(c);
  RngState r{6, 0};
  const Identity id = make_identity(r);
  const Tensor img = render_frame(id, Pose{}, geo).pixels;
  int subject = 0;
  const std::vector<int> prompt = make_prompt(r, id.tag, c.n_txt, &subject);
  const TokenMask mask = TokenMask::single(static_cast<std::size_t>(c.n_txt), static_cast<std::size_t>(subject));

  const FaceCondition full = embed_condition(img, prompt, mask, p, c);
  EXPECT_EQ(full.x_face.shape(), (Shape{static_cast<std::size_t>(c.face_tokens), 16}));
  EXPECT_EQ(full.x_id.shape(), (Shape{2, 16}));
  EXPECT_FALSE(full.x_txt_hat.bit_equal(embed_text<float>(prompt, p)));

  c.disable_id_branch = true;
  c.disable_face_branch = true;
  const FaceCondition none = embed_condition(img, prompt, mask, p, c);
  EXPECT_EQ(none.x_face.size(), 0u);
  EXPECT_EQ(none.x_id.size(), 0u);
  EXPECT_TRUE(none.x_txt_hat.bit_equal(embed_text<float>(prompt, p)));
}

// The fixed recognition map separates identities across poses: the same
// identity under a new pose is closer than a different identity.
TEST(Embedder, RecognitionPrefersSameIdentityAcrossPoses) {
  const Config c;
  const Params p = init_params(c, RngState{7, 0}.substream("init"));
  const RecognitionEmbedder rec(p, c);
  const WorldGeometry geo = WorldGeometry::from_config(c);
  RngState r{8, 0};
  int wins = 0;
  for (int i = 0; i < 200; ++i) {
    const Identity a = make_identity(r), b = make_identity(r);
    const Tensor ea = rec(render_frame(a, sample_pose(r, geo), geo).pixels);
    const Tensor ea2 = rec(render_frame(a, sample_pose(r, geo), geo).pixels);
    const Tensor eb = rec(render_frame(b, sample_pose(r, geo), geo).pixels);
    wins += cosine_similarity(ea, ea2) > cosine_similarity(ea, eb) ? 1 : 0;
  }
  EXPECT_GE(wins, 190);
}

TEST(Embedder, RecognitionEmbeddingMatchesEncodeId) {
  const Config c = test::small_config();
  const Params p = init_params(c, RngState{9, 0});
  const RecognitionEmbedder rec(p, c);
  RngState r{10, 0};
  const Tensor img = seeded_uniform(r, {8, 8}, 0.0f, 1.0f);
  const Tensor a = rec(img);
  const Tensor b = encode_id(img, p, c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

}  // namespace
}  // namespace facecond
