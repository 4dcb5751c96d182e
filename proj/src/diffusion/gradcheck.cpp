#include "facecond/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "facecond/diffusion.hpp"
#include "facecond/numerics/kernels.hpp"
#include "facecond/textio.hpp"

namespace facecond {

Config gradcheck_config() {
  Config c;
  c.d = 16;
  c.layers = 2;
  c.d_t = 8;
  c.c1 = 8;
  c.perceiver_depth = 1;
  c.face_tokens = 4;
  c.n_txt = 8;
  c.frame_h = 8;
  c.frame_w = 8;
  c.frames = 2;
  c.ffn_mult = 2;
  c.mod_hidden = 16;
  c.T = 20;
  c.face_mask_prob = 0.5;
  c.validate();
  return c;
}

double grad_rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradcheckResult run_gradcheck(const Config& c, std::uint64_t seed, double h, double tolerance) {
  const RngState root{seed, 0};
  Params init = init_params(c, root.substream("init"));
  {
    RngState r = root.substream("perturb");
    for (auto& [name, t] : init) {
      if (param_group(name) == ParamGroup::Fixed) continue;
      const Tensor n = seeded_normal(r, t.shape(), 0.1f);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += n[i];
    }
  }
  const ParamMap<double> params = cast_params<double>(init);

  RngState data_rng = root.substream("data");
  const WorldGeometry geo = WorldGeometry::from_config(c);
  PairRecord rec;
  rec.identity = make_identity(data_rng);
  rec.kind = PairKind::VideoClip;
  rec.ref = render_frame(rec.identity, sample_pose(data_rng, geo), geo);
  rec.target = synth_clip(rec.identity, sample_trajectory(data_rng, geo, c.frames), geo);
  rec.prompt = make_prompt(data_rng, rec.identity.tag, c.n_txt, &rec.subject_index);
  const TrainSample sample = make_train_sample(rec, RecognitionEmbedder(init, c), c);

  const NoiseSchedule sched = NoiseSchedule::from_config(c);
  RngState draw_rng = root.substream("draw");
  const LossDraw<double> draw = draw_loss_inputs<double>(draw_rng, sample.frames(), sched, c.face_mask_prob, c);
  const Predictor<double> model = conditioned_predictor<double>(c);
  const double lambda = 1.0;
  const TrainablePredicate trainable = [](const std::string& n) { return param_group(n) != ParamGroup::Fixed; };

  auto loss_at = [&](const ParamMap<double>& ps) {
    Graph<double> g;
    ParamBinder<double> p(g, ps);
    return g.value(loss_graph(p, sample, draw, model, sched, lambda, c).total)[0];
  };

  Graph<double> g;
  ParamBinder<double> p(g, params, trainable);
  const LossVars<double> lv = loss_graph(p, sample, draw, model, sched, lambda, c);
  g.backward(lv.total);

  GradcheckResult res;
  res.seed = seed;
  for (const auto& [name, t] : params) {
    if (!trainable(name)) continue;
    ++res.tensors;
    auto bound = p.bound().find(name);
    const BasicTensor<double> analytic =
        bound == p.bound().end() ? BasicTensor<double>(t.shape()) : g.grad(bound->second);
    ParamMap<double> probe = params;
    const BasicTensor<double> numeric = finite_diff_grad<double>(
        [&](const BasicTensor<double>& x) {
          probe.at(name) = x;
          return loss_at(probe);
        },
        t, h);
    const double rel = relative_error(analytic, numeric);
    res.coordinates += t.size();
    std::size_t worst_i = 0;
    double worst_coord = -1.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double e = grad_rel_error(analytic[i], numeric[i], kGradcheckFloor);
      if (e > worst_coord) {
        worst_coord = e;
        worst_i = i;
      }
    }
    res.per_tensor.push_back(GradcheckEntry{name, worst_i, analytic[worst_i], numeric[worst_i], rel});
    if (rel > res.max_rel_error || res.worst.name.empty()) {
      res.max_rel_error = std::max(rel, res.max_rel_error);
      res.worst = res.per_tensor.back();
    }
    if (!(rel < tolerance)) {
      res.failures.push_back(name + " rel_error=" + fmt_double(rel) + " worst coordinate " + std::to_string(worst_i) +
                             ": analytic " + fmt_double(analytic[worst_i]) + " numeric " +
                             fmt_double(numeric[worst_i]));
    }
  }
  return res;
}

}  // namespace facecond
