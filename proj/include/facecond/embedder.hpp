#pragma once

#include <vector>

#include "facecond/config.hpp"
#include "facecond/numerics/graph.hpp"
#include "facecond/params.hpp"

namespace facecond {

inline constexpr int kIdTokens = 2;

// Token-level fusion mask over the text sequence. All-zero means no fusion.
struct TokenMask {
  std::vector<std::uint8_t> bits;

  static TokenMask none(std::size_t n) { return TokenMask{std::vector<std::uint8_t>(n, 0)}; }
  static TokenMask single(std::size_t n, std::size_t index);
  std::size_t size() const { return bits.size(); }
  bool any() const;
};

// Facial condition: structural tokens plus the fused text sequence.
struct FaceCondition {
  Tensor x_face;      // [face_tokens x d]
  Tensor x_id;        // [2 x d], identity perceiver output
  Tensor x_txt_hat;   // [n_txt x d], masked replacement of x_txt
  TokenMask mask;
};

// Fixed recognition map stored as fixed.id_proj, fitted once on seeded
// renders of the synthetic world: per-image mean removal, removal of the
// mean-face direction, then the 8 leading linear discriminant directions
// (identity vs pose scatter), embedded isometrically into 2*d dims.
Tensor make_recognition_projection(const Config& config, RngState rng);

// Row-major patch order; returns [P x patch*patch].
template <class T>
BasicTensor<T> patchify(const BasicTensor<T>& image, int patch);

// Text embeddings of prompt tokens through the fixed text table.
template <class T>
BasicTensor<T> embed_text(const std::vector<int>& tokens, const ParamMap<T>& params);

// Graph-level building blocks. Images are data (constants on the tape).
template <class T>
Var extract_features(ParamBinder<T>& p, const BasicTensor<T>& image, const Config& c);

template <class T>
Var encode_id(ParamBinder<T>& p, const BasicTensor<T>& image, const Config& c);

// Q-Former style perceiver: per block, pre-normalized single-head
// cross-attention from queries to context, then a pre-normalized FFN, each
// with a residual. prefix selects the weight set.
template <class T>
Var perceiver_forward(ParamBinder<T>& p, const std::string& prefix, Var queries, Var context, int depth);

// Masked replacement of text tokens by MLP_fuse(mean(x_id), x_txt[i]).
template <class T>
Var fuse_id_text(ParamBinder<T>& p, Var x_id, Var x_txt, const TokenMask& mask);

struct ConditionVars {
  Var x_face;     // invalid when the structural branch is disabled
  Var x_id;       // invalid when the identity branch is disabled
  Var x_txt_hat;
};

template <class T>
ConditionVars embed_condition(ParamBinder<T>& p, const BasicTensor<T>& image, Var x_txt, const TokenMask& mask,
                              const Config& c);

// Plain-tensor entry points (evaluate the graph without gradients).
Tensor extract_features(const Tensor& image, const Params& params, const Config& c);
Tensor encode_id(const Tensor& image, const Params& params, const Config& c);
Tensor perceiver_forward(const Tensor& queries, const Tensor& context, const Params& params,
                         const std::string& prefix, int depth);
Tensor fuse_id_text(const Tensor& x_id, const Tensor& x_txt, const TokenMask& mask, const Params& params);
FaceCondition embed_condition(const Tensor& image, const std::vector<int>& prompt, const TokenMask& mask,
                              const Params& params, const Config& c);

// Recognition embedding used by the filter, the identity loss and metrics:
// the two encode_id tokens concatenated into one [2d] vector.
class RecognitionEmbedder {
 public:
  RecognitionEmbedder(const Params& params, const Config& config);
  Tensor operator()(const Tensor& frame) const;
  const Tensor& projection() const { return proj_; }

 private:
  Tensor proj_;  // [H*W x 2d]
  int h_, w_;
};

}  // namespace facecond
