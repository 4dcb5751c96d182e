#include "facecond/params.hpp"

#include <cmath>

#include "facecond/dataforge.hpp"
#include "facecond/embedder.hpp"

namespace facecond {

ParamGroup param_group(std::string_view name) {
  if (name.starts_with("fixed.")) return ParamGroup::Fixed;
  if (name.starts_with("base.")) return ParamGroup::Base;
  if (name.starts_with("adapter.face.")) return ParamGroup::FaceBranch;
  if (name.starts_with("adapter.id.")) return ParamGroup::IdBranch;
  if (name.starts_with("adapter.can.")) return ParamGroup::Can;
  throw ContractError("parameter '" + std::string(name) + "' has no group prefix");
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Fixed: return "fixed";
    case ParamGroup::Base: return "base";
    case ParamGroup::FaceBranch: return "face_branch";
    case ParamGroup::IdBranch: return "id_branch";
    case ParamGroup::Can: return "can";
  }
  return "?";
}

std::string block_name(int layer) { return "block." + std::to_string(layer); }

bool has_adapter(int layer) { return layer % 2 == 0; }

namespace {

class Initializer {
 public:
  explicit Initializer(RngState rng) : rng_(rng) {}

  void normal(Params& out, const std::string& name, std::size_t rows, std::size_t cols, double stddev) {
    RngState s = rng_.substream(name);
    out.emplace(name, seeded_normal(s, {rows, cols}, static_cast<float>(stddev)));
  }
  // Weight with std 1/sqrt(fan_in).
  void linear(Params& out, const std::string& name, std::size_t in, std::size_t outw) {
    normal(out, name, in, outw, 1.0 / std::sqrt(static_cast<double>(in)));
  }
  static void zeros(Params& out, const std::string& name, std::size_t rows, std::size_t cols) {
    out.emplace(name, Tensor({rows, cols}));
  }
  // Two-layer map prefix.{w1,b1,w2,b2}; w2 drawn with out_std, or zero.
  void mlp(Params& out, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t outw,
           double out_std) {
    linear(out, prefix + ".w1", in, hidden);
    zeros(out, prefix + ".b1", 1, hidden);
    if (out_std > 0.0) {
      normal(out, prefix + ".w2", hidden, outw, out_std);
    } else {
      zeros(out, prefix + ".w2", hidden, outw);
    }
    zeros(out, prefix + ".b2", 1, outw);
  }
  void perceiver(Params& out, const std::string& prefix, const Config& c) {
    const std::size_t d = c.d, h = static_cast<std::size_t>(c.ffn_mult) * c.d;
    for (int j = 0; j < c.perceiver_depth; ++j) {
      const std::string b = prefix + ".perceiver." + std::to_string(j) + ".";
      linear(out, b + "wq", d, d);
      linear(out, b + "wk", d, d);
      linear(out, b + "wv", d, d);
      linear(out, b + "wo", d, d);
      mlp(out, b + "ffn", d, h, d, 1.0 / std::sqrt(static_cast<double>(h)));
    }
  }

 private:
  RngState rng_;
};

}  // namespace

Params init_params(const Config& c, RngState init_rng) {
  c.validate();
  Initializer in(init_rng);
  Params p;
  const std::size_t d = c.d, dt = c.d_t, pd = c.patch_dim(), hid = c.mod_hidden;
  const std::size_t ffn = static_cast<std::size_t>(c.ffn_mult) * c.d;
  const std::size_t tokens_vid = static_cast<std::size_t>(c.frames) * c.patches_per_frame();

  in.linear(p, "fixed.feat_proj", pd, d);
  p.emplace("fixed.id_proj", make_recognition_projection(c, init_rng.substream("fixed.id_proj")));
  in.normal(p, "fixed.text_table", vocabulary().size(), d, 1.0);

  in.linear(p, "base.time.w1", dt, dt);
  Initializer::zeros(p, "base.time.b1", 1, dt);
  in.linear(p, "base.time.w2", dt, dt);
  Initializer::zeros(p, "base.time.b2", 1, dt);
  in.normal(p, "base.layer_embed", c.layers, dt, 1.0);
  in.linear(p, "base.vid_in.w", pd, d);
  Initializer::zeros(p, "base.vid_in.b", 1, d);
  in.normal(p, "base.pos_vid", tokens_vid, d, 0.1);
  in.normal(p, "base.pos_txt", c.n_txt, d, 0.1);
  for (int l = 0; l < c.layers; ++l) {
    const std::string b = "base." + block_name(l) + ".";
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) in.linear(p, b + w, d, d);
    in.mlp(p, b + "ffn", d, ffn, d, 1.0 / std::sqrt(static_cast<double>(ffn)));
    in.mlp(p, b + "phi_txt", 2 * dt, hid, 6 * d, 0.02);
    in.mlp(p, b + "phi_vid", 2 * dt, hid, 6 * d, 0.02);
  }
  in.normal(p, "base.final.mod.w", dt, 2 * d, 0.02);
  Initializer::zeros(p, "base.final.mod.b", 1, 2 * d);
  in.linear(p, "base.final.out.w", d, pd);
  Initializer::zeros(p, "base.final.out.b", 1, pd);

  in.normal(p, "adapter.face.query", c.face_tokens, d, 1.0);
  in.perceiver(p, "adapter.face", c);
  in.linear(p, "adapter.face.proj.w", d, d);
  Initializer::zeros(p, "adapter.face.proj.b", 1, d);
  in.perceiver(p, "adapter.id", c);
  in.mlp(p, "adapter.id.fuse", 2 * d, 2 * d, d, 1.0 / std::sqrt(2.0 * d));
  in.linear(p, "adapter.can.proj.w", 2 * d, c.c1);
  Initializer::zeros(p, "adapter.can.proj.b", 1, c.c1);
  for (int l = 0; l < c.layers; ++l) {
    if (!has_adapter(l)) continue;
    const std::string bn = block_name(l) + ".";
    in.mlp(p, "adapter.face." + bn + "phi_face", 2 * dt, hid, 6 * d, 0.0);
    in.linear(p, "adapter.face." + bn + "ca.wk", d, d);
    in.linear(p, "adapter.face." + bn + "ca.wv", d, d);
    Initializer::zeros(p, "adapter.face." + bn + "ca.wo", d, d);
    in.mlp(p, "adapter.can." + bn + "phi_cond", c.c1 + dt + d, hid, 12 * d, 0.0);
  }
  return p;
}

}  // namespace facecond
