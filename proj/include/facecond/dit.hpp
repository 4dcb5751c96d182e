#pragma once

#include <array>
#include <vector>

#include "facecond/config.hpp"
#include "facecond/params.hpp"

namespace facecond {

// Token spans of the concatenated sequence, ordered [txt | vid | face].
struct SequenceLayout {
  std::size_t n_txt = 0;
  std::size_t n_vid = 0;
  std::size_t n_face = 0;  // 0 (unconditioned) or the configured face token count

  std::size_t txt_begin() const { return 0; }
  std::size_t vid_begin() const { return n_txt; }
  std::size_t face_begin() const { return n_txt + n_vid; }
  std::size_t total() const { return n_txt + n_vid + n_face; }

  // Throws DimensionError on empty spans or a face count other than 0 or
  // face_tokens.
  static SequenceLayout make(const Config& c, int frames, bool with_face);
};

enum class Factor { Mu1 = 0, Sigma1, Gamma1, Mu2, Sigma2, Gamma2 };
inline constexpr std::size_t kFactors = 6;

// The six modulation factors of one modality as [1 x d] graph values.
struct FactorVars {
  std::array<Var, kFactors> f;
  Var operator[](Factor k) const { return f[static_cast<std::size_t>(k)]; }
};

// Plain-tensor form, each factor [d].
struct ModulationFactors {
  std::array<Tensor, kFactors> f;
  const Tensor& operator[](Factor k) const { return f[static_cast<std::size_t>(k)]; }
  bool bit_equal(const ModulationFactors& o) const;
};

enum class Modality { Txt, Vid, Face };

// Factors actually applied inside one block.
struct LayerFactors {
  FactorVars txt, vid, face;
};

// Sinusoidal timestep features: first half sin, second half cos.
template <class T>
BasicTensor<T> timestep_features(int t, int width);

template <class T>
Var time_embedding(ParamBinder<T>& p, int t, const Config& c);

// Two-layer predictor phi(t_embed, layer_embed[l]) -> six d-wide factors.
// prefix names the weight set, e.g. "base.block.0.phi_vid".
template <class T>
FactorVars modulation_base(ParamBinder<T>& p, Var t_embed, int layer, const std::string& prefix, const Config& c);

// CAN prediction (m_hat_vid, m_hat_txt) from the identity tokens. Throws
// ContractError on a layer without adapter.
template <class T>
std::pair<FactorVars, FactorVars> can_residual(ParamBinder<T>& p, Var t_embed, int layer, Var mu1_vid, Var x_id,
                                               const Config& c);

// Factors used by block l. CAN contributes when x_id is valid, the layer has
// an adapter and CAN is enabled; face factors come from phi_face on adapter
// layers and reuse the video factors elsewhere.
template <class T>
LayerFactors resolve_factors(ParamBinder<T>& p, Var t_embed, int layer, Var x_id, const Config& c);

// Shared query; self-attention over the whole sequence plus, when face
// tokens are present on an adapter layer, cross-attention to the face span
// with separate key/value maps and the (zero-initialized) output map.
template <class T>
Var decoupled_attention(ParamBinder<T>& p, Var h, const SequenceLayout& layout, int layer, const Config& c);

template <class T>
Var block_forward(ParamBinder<T>& p, Var x_full, Var x_id, Var t_embed, int layer, const SequenceLayout& layout,
                  const Config& c);

// Embeds x_t [F x H*W] into video tokens with positions.
template <class T>
Var embed_video(ParamBinder<T>& p, const BasicTensor<T>& x_t, const Config& c);

// Epsilon prediction [F x H*W]. x_face and x_id may be invalid Vars: no
// face tokens, no CAN.
template <class T>
Var model_forward(ParamBinder<T>& p, const BasicTensor<T>& x_t, Var x_txt_hat, Var x_face, Var x_id, int t,
                  const Config& c);

// The plain mm-DiT: text and video modulation only, self-attention only.
// Reads base.* and fixed.* weights exclusively.
template <class T>
Var base_model_forward(ParamBinder<T>& p, const BasicTensor<T>& x_t, Var x_txt, int t, const Config& c);

// Plain-tensor wrappers.
Tensor modulate(const Tensor& x, const Tensor& mu, const Tensor& sigma);  // layer_norm(x) * (1 + sigma) + mu
Tensor gated_residual(const Tensor& x, const Tensor& branch, const Tensor& gamma);
ModulationFactors modulation_base(const Params& params, int t, int layer, Modality m, const Config& c);
// Final (txt, vid, face) factors of one layer; x_id may be empty.
std::array<ModulationFactors, 3> layer_factors(const Params& params, int t, int layer, const Tensor& x_id,
                                               const Config& c);
Tensor decoupled_attention(const Tensor& h, const SequenceLayout& layout, int layer, const Params& params,
                           const Config& c);
Tensor model_forward(const Tensor& x_t, const Tensor& x_txt_hat, const Tensor& x_face, const Tensor& x_id, int t,
                     const Params& params, const Config& c);
Tensor base_model_forward(const Tensor& x_t, const Tensor& x_txt, int t, const Params& params, const Config& c);

}  // namespace facecond
