#include "facecond/dit.hpp"

#include <cmath>

#include "facecond/embedder.hpp"

namespace facecond {

SequenceLayout SequenceLayout::make(const Config& c, int frames, bool with_face) {
  if (frames <= 0) throw DimensionError("layout: frame count must be positive, got " + std::to_string(frames));
  SequenceLayout l;
  l.n_txt = static_cast<std::size_t>(c.n_txt);
  l.n_vid = static_cast<std::size_t>(frames) * c.patches_per_frame();
  l.n_face = with_face ? static_cast<std::size_t>(c.face_tokens) : 0;
  if (l.n_txt == 0 || l.n_vid == 0) throw DimensionError("layout: empty text or video span");
  return l;
}

bool ModulationFactors::bit_equal(const ModulationFactors& o) const {
  for (std::size_t k = 0; k < kFactors; ++k) {
    if (!f[k].bit_equal(o.f[k])) return false;
  }
  return true;
}

namespace {

template <class T>
constexpr T kLnEps = static_cast<T>(1e-6);

template <class T>
T inv_sqrt(std::size_t n) {
  return static_cast<T>(1.0 / std::sqrt(static_cast<double>(n)));
}

// x w + b, with w, b named prefix.w / prefix.b unless given explicitly.
template <class T>
Var linear(ParamBinder<T>& p, Var x, const std::string& w, const std::string& b) {
  return p.graph().add_row(p.graph().matmul(x, p(w)), p(b));
}

template <class T>
Var mlp_silu(ParamBinder<T>& p, Var x, const std::string& prefix) {
  Graph<T>& g = p.graph();
  Var h = g.silu(linear(p, x, prefix + ".w1", prefix + ".b1"));
  return linear(p, h, prefix + ".w2", prefix + ".b2");
}

template <class T>
FactorVars split_factors(Graph<T>& g, Var row, std::size_t offset, std::size_t d) {
  FactorVars out;
  for (std::size_t k = 0; k < kFactors; ++k) out.f[k] = g.slice_cols(row, offset + k * d, d);
  return out;
}

template <class T>
FactorVars add_factors(Graph<T>& g, const FactorVars& a, const FactorVars& b) {
  FactorVars out;
  for (std::size_t k = 0; k < kFactors; ++k) out.f[k] = g.add(a.f[k], b.f[k]);
  return out;
}

std::string base_prefix(int layer) { return "base." + block_name(layer) + "."; }
std::string face_prefix(int layer) { return "adapter.face." + block_name(layer) + "."; }

void check_layer(int layer, const Config& c) {
  if (layer < 0 || layer >= c.layers) {
    throw ContractError("layer " + std::to_string(layer) + " outside stack of " + std::to_string(c.layers));
  }
}

struct Spans {
  Var txt, vid, face;  // face invalid when absent
};

template <class T>
Spans split_spans(Graph<T>& g, Var x, const SequenceLayout& l) {
  Spans s;
  s.txt = g.slice_rows(x, l.txt_begin(), l.n_txt);
  s.vid = g.slice_rows(x, l.vid_begin(), l.n_vid);
  if (l.n_face) s.face = g.slice_rows(x, l.face_begin(), l.n_face);
  return s;
}

template <class T>
Var join_spans(Graph<T>& g, const Spans& s) {
  if (s.face.valid()) {
    const Var parts[] = {s.txt, s.vid, s.face};
    return g.concat_rows(parts);
  }
  const Var parts[] = {s.txt, s.vid};
  return g.concat_rows(parts);
}

template <class T>
Var norm_mod(Graph<T>& g, Var x, const FactorVars& m, Factor mu, Factor sigma) {
  return g.modulate(g.layer_norm(x, kLnEps<T>), m[mu], m[sigma]);
}

template <class T>
Var self_attention(ParamBinder<T>& p, Var q, Var h, const std::string& prefix) {
  Graph<T>& g = p.graph();
  const std::size_t d = g.value(h).cols();
  Var k = g.matmul(h, p(prefix + "attn.wk"));
  Var v = g.matmul(h, p(prefix + "attn.wv"));
  Var a = g.softmax_rows(g.scale(g.matmul_nt(q, k), inv_sqrt<T>(d)));
  return g.matmul(g.matmul(a, v), p(prefix + "attn.wo"));
}

template <class T>
Var ffn(ParamBinder<T>& p, Var x, const std::string& prefix) {
  Graph<T>& g = p.graph();
  Var h = g.gelu(linear(p, x, prefix + "ffn.w1", prefix + "ffn.b1"));
  return linear(p, h, prefix + "ffn.w2", prefix + "ffn.b2");
}

// Final adaptive norm on the video span, projection to patches and
// reassembly into frames.
template <class T>
Var final_layer(ParamBinder<T>& p, Var x_vid, Var t_embed, int frames, const Config& c) {
  Graph<T>& g = p.graph();
  const std::size_t d = c.d;
  Var mod = linear(p, g.silu(t_embed), "base.final.mod.w", "base.final.mod.b");
  Var h = g.modulate(g.layer_norm(x_vid, kLnEps<T>), g.slice_cols(mod, 0, d), g.slice_cols(mod, d, d));
  Var patches = linear(p, h, "base.final.out.w", "base.final.out.b");  // [F*P x pd]

  const std::size_t ps = c.patch, pw = c.frame_w / ps, per_frame = c.patches_per_frame(), pd = c.patch_dim();
  const std::size_t hw = c.pixels();
  std::vector<std::uint32_t> index(static_cast<std::size_t>(frames) * hw);
  for (std::size_t f = 0; f < static_cast<std::size_t>(frames); ++f)
    for (std::size_t y = 0; y < static_cast<std::size_t>(c.frame_h); ++y)
      for (std::size_t x = 0; x < static_cast<std::size_t>(c.frame_w); ++x) {
        const std::size_t token = f * per_frame + (y / ps) * pw + x / ps;
        const std::size_t inner = (y % ps) * ps + x % ps;
        index[f * hw + y * c.frame_w + x] = static_cast<std::uint32_t>(token * pd + inner);
      }
  return g.gather(patches, std::move(index), static_cast<std::size_t>(frames), hw);
}

template <class T>
Var embed_text_tokens(ParamBinder<T>& p, Var x_txt) {
  return p.graph().add(x_txt, p("base.pos_txt"));
}

}  // namespace

template <class T>
BasicTensor<T> timestep_features(int t, int width) {
  if (width < 2 || width % 2 != 0) throw DimensionError("timestep features need an even width >= 2");
  const int half = width / 2;
  BasicTensor<T> out(Shape{1, static_cast<std::size_t>(width)});
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out.at(0, i) = static_cast<T>(std::sin(t * freq));
    out.at(0, half + i) = static_cast<T>(std::cos(t * freq));
  }
  return out;
}

template <class T>
Var time_embedding(ParamBinder<T>& p, int t, const Config& c) {
  if (t < 0 || t >= c.T) throw ContractError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(c.T) + ")");
  Graph<T>& g = p.graph();
  Var feats = g.constant(timestep_features<T>(t, c.d_t));
  return mlp_silu(p, feats, "base.time");
}

template <class T>
FactorVars modulation_base(ParamBinder<T>& p, Var t_embed, int layer, const std::string& prefix, const Config& c) {
  check_layer(layer, c);
  Graph<T>& g = p.graph();
  const Var parts[] = {t_embed, g.slice_rows(p("base.layer_embed"), static_cast<std::size_t>(layer), 1)};
  Var out = mlp_silu(p, g.concat_cols(parts), prefix);
  return split_factors(g, out, 0, c.d);
}

template <class T>
std::pair<FactorVars, FactorVars> can_residual(ParamBinder<T>& p, Var t_embed, int layer, Var mu1_vid, Var x_id,
                                               const Config& c) {
  check_layer(layer, c);
  if (!has_adapter(layer)) throw ContractError("can_residual on layer " + std::to_string(layer) + " without adapter");
  Graph<T>& g = p.graph();
  const std::size_t d = c.d;
  Var flat = g.reshape(x_id, 1, g.value(x_id).size());
  Var proj = linear(p, flat, "adapter.can.proj.w", "adapter.can.proj.b");
  const Var parts[] = {proj, t_embed, mu1_vid};
  Var out = mlp_silu(p, g.concat_cols(parts), "adapter.can." + block_name(layer) + ".phi_cond");
  return {split_factors(g, out, 0, d), split_factors(g, out, kFactors * d, d)};
}

template <class T>
LayerFactors resolve_factors(ParamBinder<T>& p, Var t_embed, int layer, Var x_id, const Config& c) {
  Graph<T>& g = p.graph();
  const std::string bp = base_prefix(layer);
  LayerFactors lf;
  lf.txt = modulation_base(p, t_embed, layer, bp + "phi_txt", c);
  lf.vid = modulation_base(p, t_embed, layer, bp + "phi_vid", c);
  if (has_adapter(layer) && x_id.valid() && !c.disable_can) {
    auto [hat_vid, hat_txt] = can_residual(p, t_embed, layer, lf.vid[Factor::Mu1], x_id, c);
    if (c.direct_can_prediction) {
      lf.vid = hat_vid;
      lf.txt = hat_txt;
    } else {
      lf.vid = add_factors(g, hat_vid, lf.vid);
      lf.txt = add_factors(g, hat_txt, lf.txt);
    }
  }
  lf.face = has_adapter(layer) && !c.disable_face_branch
                ? modulation_base(p, t_embed, layer, face_prefix(layer) + "phi_face", c)
                : lf.vid;
  return lf;
}

template <class T>
Var decoupled_attention(ParamBinder<T>& p, Var h, const SequenceLayout& layout, int layer, const Config& c) {
  check_layer(layer, c);
  Graph<T>& g = p.graph();
  if (g.value(h).rows() != layout.total()) {
    throw DimensionError("decoupled_attention: sequence of " + std::to_string(g.value(h).rows()) +
                         " tokens vs layout of " + std::to_string(layout.total()));
  }
  const std::string bp = base_prefix(layer);
  Var q = g.matmul(h, p(bp + "attn.wq"));
  Var out = self_attention(p, q, h, bp);
  if (layout.n_face > 0 && has_adapter(layer)) {
    const std::string fp = face_prefix(layer);
    Var face = g.slice_rows(h, layout.face_begin(), layout.n_face);
    Var k = g.matmul(face, p(fp + "ca.wk"));
    Var v = g.matmul(face, p(fp + "ca.wv"));
    Var a = g.softmax_rows(g.scale(g.matmul_nt(q, k), inv_sqrt<T>(c.d)));
    out = g.add(out, g.matmul(g.matmul(a, v), p(fp + "ca.wo")));
  }
  return out;
}

template <class T>
Var block_forward(ParamBinder<T>& p, Var x_full, Var x_id, Var t_embed, int layer, const SequenceLayout& layout,
                  const Config& c) {
  Graph<T>& g = p.graph();
  if (g.value(x_full).rows() != layout.total() || g.value(x_full).cols() != static_cast<std::size_t>(c.d)) {
    throw DimensionError("block_forward: input " + shape_str(g.value(x_full).shape()) + " vs layout of " +
                         std::to_string(layout.total()) + " tokens");
  }
  const LayerFactors lf = resolve_factors(p, t_embed, layer, x_id, c);
  const std::string bp = base_prefix(layer);

  Spans x = split_spans(g, x_full, layout);
  Spans h{norm_mod(g, x.txt, lf.txt, Factor::Mu1, Factor::Sigma1), norm_mod(g, x.vid, lf.vid, Factor::Mu1, Factor::Sigma1),
          x.face.valid() ? norm_mod(g, x.face, lf.face, Factor::Mu1, Factor::Sigma1) : Var{}};
  Spans a = split_spans(g, decoupled_attention(p, join_spans(g, h), layout, layer, c), layout);
  x.txt = g.gated_residual(x.txt, a.txt, lf.txt[Factor::Gamma1]);
  x.vid = g.gated_residual(x.vid, a.vid, lf.vid[Factor::Gamma1]);
  if (x.face.valid()) x.face = g.gated_residual(x.face, a.face, lf.face[Factor::Gamma1]);

  x.txt = g.gated_residual(x.txt, ffn(p, norm_mod(g, x.txt, lf.txt, Factor::Mu2, Factor::Sigma2), bp),
                           lf.txt[Factor::Gamma2]);
  x.vid = g.gated_residual(x.vid, ffn(p, norm_mod(g, x.vid, lf.vid, Factor::Mu2, Factor::Sigma2), bp),
                           lf.vid[Factor::Gamma2]);
  if (x.face.valid()) {
    x.face = g.gated_residual(x.face, ffn(p, norm_mod(g, x.face, lf.face, Factor::Mu2, Factor::Sigma2), bp),
                              lf.face[Factor::Gamma2]);
  }
  return join_spans(g, x);
}

template <class T>
Var embed_video(ParamBinder<T>& p, const BasicTensor<T>& x_t, const Config& c) {
  const std::size_t hw = c.pixels();
  if (x_t.rank() != 2 || x_t.cols() != hw) {
    throw DimensionError("embed_video: expected [F x " + std::to_string(hw) + "], got " + shape_str(x_t.shape()));
  }
  const std::size_t frames = x_t.rows(), per_frame = c.patches_per_frame();
  const BasicTensor<T>& pos = p.tensor("base.pos_vid");
  if (frames * per_frame > pos.rows()) {
    throw DimensionError("embed_video: " + std::to_string(frames) + " frames exceed the positional table");
  }
  BasicTensor<T> patches(Shape{frames * per_frame, static_cast<std::size_t>(c.patch_dim())});
  for (std::size_t f = 0; f < frames; ++f) {
    BasicTensor<T> frame(Shape{static_cast<std::size_t>(c.frame_h), static_cast<std::size_t>(c.frame_w)},
                         std::vector<T>(x_t.row(f).begin(), x_t.row(f).end()));
    const BasicTensor<T> pf = patchify(frame, c.patch);
    std::copy(pf.storage().begin(), pf.storage().end(), patches.storage().begin() + f * pf.size());
  }
  Graph<T>& g = p.graph();
  Var tok = linear(p, g.constant(std::move(patches)), "base.vid_in.w", "base.vid_in.b");
  return g.add(tok, g.slice_rows(p("base.pos_vid"), 0, frames * per_frame));
}

template <class T>
Var model_forward(ParamBinder<T>& p, const BasicTensor<T>& x_t, Var x_txt_hat, Var x_face, Var x_id, int t,
                  const Config& c) {
  Graph<T>& g = p.graph();
  const int frames = static_cast<int>(x_t.rows());
  const SequenceLayout layout = SequenceLayout::make(c, frames, x_face.valid());
  if (x_face.valid() && g.value(x_face).rows() != layout.n_face) {
    throw DimensionError("model_forward: " + std::to_string(g.value(x_face).rows()) + " face tokens, expected " +
                         std::to_string(layout.n_face));
  }
  Var t_embed = time_embedding(p, t, c);
  Spans s{embed_text_tokens(p, x_txt_hat), embed_video(p, x_t, c), x_face};
  Var x = join_spans(g, s);
  for (int l = 0; l < c.layers; ++l) x = block_forward(p, x, x_id, t_embed, l, layout, c);
  return final_layer(p, g.slice_rows(x, layout.vid_begin(), layout.n_vid), t_embed, frames, c);
}

template <class T>
Var base_model_forward(ParamBinder<T>& p, const BasicTensor<T>& x_t, Var x_txt, int t, const Config& c) {
  Graph<T>& g = p.graph();
  const int frames = static_cast<int>(x_t.rows());
  const SequenceLayout layout = SequenceLayout::make(c, frames, false);
  Var t_embed = time_embedding(p, t, c);
  Var x_txt_tok = embed_text_tokens(p, x_txt);
  Var x_vid = embed_video(p, x_t, c);
  for (int l = 0; l < c.layers; ++l) {
    const std::string bp = base_prefix(l);
    const FactorVars mt = modulation_base(p, t_embed, l, bp + "phi_txt", c);
    const FactorVars mv = modulation_base(p, t_embed, l, bp + "phi_vid", c);
    const Var hs[] = {norm_mod(g, x_txt_tok, mt, Factor::Mu1, Factor::Sigma1),
                      norm_mod(g, x_vid, mv, Factor::Mu1, Factor::Sigma1)};
    Var h = g.concat_rows(hs);
    Var a = self_attention(p, g.matmul(h, p(bp + "attn.wq")), h, bp);
    x_txt_tok = g.gated_residual(x_txt_tok, g.slice_rows(a, 0, layout.n_txt), mt[Factor::Gamma1]);
    x_vid = g.gated_residual(x_vid, g.slice_rows(a, layout.n_txt, layout.n_vid), mv[Factor::Gamma1]);
    x_txt_tok = g.gated_residual(x_txt_tok, ffn(p, norm_mod(g, x_txt_tok, mt, Factor::Mu2, Factor::Sigma2), bp),
                                 mt[Factor::Gamma2]);
    x_vid = g.gated_residual(x_vid, ffn(p, norm_mod(g, x_vid, mv, Factor::Mu2, Factor::Sigma2), bp),
                             mv[Factor::Gamma2]);
  }
  return final_layer(p, x_vid, t_embed, frames, c);
}

// ---- plain-tensor wrappers ----

namespace {

Tensor as_row(const Tensor& v) { return v.reshaped(Shape{1, v.size()}); }

ModulationFactors to_plain(const Graph<float>& g, const FactorVars& fv) {
  ModulationFactors out;
  for (std::size_t k = 0; k < kFactors; ++k) {
    const Tensor& v = g.value(fv.f[k]);
    out.f[k] = v.reshaped(Shape{v.size()});
  }
  return out;
}

}  // namespace

Tensor modulate(const Tensor& x, const Tensor& mu, const Tensor& sigma) {
  Graph<float> g;
  return g.value(g.modulate(g.layer_norm(g.constant(x), kLnEps<float>), g.constant(as_row(mu)),
                            g.constant(as_row(sigma))));
}

Tensor gated_residual(const Tensor& x, const Tensor& branch, const Tensor& gamma) {
  Graph<float> g;
  return g.value(g.gated_residual(g.constant(x), g.constant(branch), g.constant(as_row(gamma))));
}

ModulationFactors modulation_base(const Params& params, int t, int layer, Modality m, const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  Var te = time_embedding(p, t, c);
  std::string prefix;
  switch (m) {
    case Modality::Txt: prefix = base_prefix(layer) + "phi_txt"; break;
    case Modality::Vid: prefix = base_prefix(layer) + "phi_vid"; break;
    case Modality::Face:
      if (!has_adapter(layer)) throw ContractError("no face predictor on layer " + std::to_string(layer));
      prefix = face_prefix(layer) + "phi_face";
      break;
  }
  return to_plain(g, modulation_base(p, te, layer, prefix, c));
}

std::array<ModulationFactors, 3> layer_factors(const Params& params, int t, int layer, const Tensor& x_id,
                                               const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  Var te = time_embedding(p, t, c);
  const LayerFactors lf = resolve_factors(p, te, layer, x_id.empty() ? Var{} : g.constant(x_id), c);
  return {to_plain(g, lf.txt), to_plain(g, lf.vid), to_plain(g, lf.face)};
}

Tensor decoupled_attention(const Tensor& h, const SequenceLayout& layout, int layer, const Params& params,
                           const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  return g.value(decoupled_attention(p, g.constant(h), layout, layer, c));
}

Tensor model_forward(const Tensor& x_t, const Tensor& x_txt_hat, const Tensor& x_face, const Tensor& x_id, int t,
                     const Params& params, const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  return g.value(model_forward(p, x_t, g.constant(x_txt_hat), x_face.empty() ? Var{} : g.constant(x_face),
                               x_id.empty() ? Var{} : g.constant(x_id), t, c));
}

Tensor base_model_forward(const Tensor& x_t, const Tensor& x_txt, int t, const Params& params, const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  return g.value(base_model_forward(p, x_t, g.constant(x_txt), t, c));
}

#define FACECOND_INSTANTIATE(T)                                                                                  \
  template BasicTensor<T> timestep_features<T>(int, int);                                                       \
  template Var time_embedding<T>(ParamBinder<T>&, int, const Config&);                                          \
  template FactorVars modulation_base<T>(ParamBinder<T>&, Var, int, const std::string&, const Config&);         \
  template std::pair<FactorVars, FactorVars> can_residual<T>(ParamBinder<T>&, Var, int, Var, Var, const Config&); \
  template LayerFactors resolve_factors<T>(ParamBinder<T>&, Var, int, Var, const Config&);                      \
  template Var decoupled_attention<T>(ParamBinder<T>&, Var, const SequenceLayout&, int, const Config&);         \
  template Var block_forward<T>(ParamBinder<T>&, Var, Var, Var, int, const SequenceLayout&, const Config&);     \
  template Var embed_video<T>(ParamBinder<T>&, const BasicTensor<T>&, const Config&);                           \
  template Var model_forward<T>(ParamBinder<T>&, const BasicTensor<T>&, Var, Var, Var, int, const Config&);     \
  template Var base_model_forward<T>(ParamBinder<T>&, const BasicTensor<T>&, Var, int, const Config&);

FACECOND_INSTANTIATE(float)
FACECOND_INSTANTIATE(double)

#undef FACECOND_INSTANTIATE

}  // namespace facecond
