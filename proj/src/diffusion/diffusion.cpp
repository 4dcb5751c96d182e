#include "facecond/diffusion.hpp"

#include <cmath>
#include <sstream>

#include "facecond/dit.hpp"
#include "facecond/textio.hpp"

namespace facecond {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T <= 0) throw ConfigError("schedule: T must be positive");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  double ab = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    ab *= 1.0 - b;
    s.betas.push_back(b);
    s.alpha_bars.push_back(ab);
    s.timesteps.push_back(t);
  }
  return s;
}

NoiseSchedule NoiseSchedule::from_config(const Config& c) { return linear(c.T, c.beta_start, c.beta_end); }

NoiseSchedule NoiseSchedule::respaced(int steps) const {
  const int n = size();
  if (steps <= 0 || steps > n) {
    throw ConfigError("respaced: steps " + std::to_string(steps) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<int> keep;
  if (steps == 1) {
    keep = {n - 1};
  } else {
    for (int i = 0; i < steps; ++i) {
      keep.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (n - 1) / (steps - 1))));
    }
  }
  NoiseSchedule s;
  double prev = 1.0;
  for (int k : keep) {
    const double ab = alpha_bars[k];
    s.betas.push_back(1.0 - ab / prev);
    s.alpha_bars.push_back(ab);
    s.timesteps.push_back(timesteps[k]);
    prev = ab;
  }
  return s;
}

void NoiseSchedule::check_t(int t) const {
  if (t < 0 || t >= size()) {
    throw ContractError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(size()) + ")");
  }
}

template <class T>
BasicTensor<T> forward_noise(const BasicTensor<T>& x0, int t, const BasicTensor<T>& eps, const NoiseSchedule& s) {
  s.check_t(t);
  if (x0.shape() != eps.shape()) {
    throw DimensionError("forward_noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const T a = static_cast<T>(std::sqrt(s.alpha_bars[t]));
  const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bars[t]));
  BasicTensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

template <class T>
BasicTensor<T> reconstruct_x0(const BasicTensor<T>& x_t, const BasicTensor<T>& eps, int t, const NoiseSchedule& s) {
  s.check_t(t);
  if (x_t.shape() != eps.shape()) {
    throw DimensionError("reconstruct_x0: x_t " + shape_str(x_t.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const double a = std::sqrt(s.alpha_bars[t]), b = std::sqrt(1.0 - s.alpha_bars[t]);
  BasicTensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((x_t[i] - b * eps[i]) / a);
  return out;
}

TrainSample make_train_sample(const PairRecord& r, const RecognitionEmbedder& rec, const Config& c) {
  if (r.target.empty()) throw DataError("train sample: record without frames");
  TrainSample s;
  const std::size_t hw = c.pixels();
  s.x0 = Tensor({r.target.size(), hw});
  for (std::size_t f = 0; f < r.target.size(); ++f) {
    const Tensor& px = r.target[f].pixels;
    if (px.size() != hw) throw DimensionError("train sample: frame " + shape_str(px.shape()) + " vs config");
    std::copy(px.storage().begin(), px.storage().end(), s.x0.storage().begin() + f * hw);
    s.face_regions.push_back(r.target[f].face_region);
  }
  s.reference = r.ref.pixels;
  s.prompt = r.prompt;
  s.mask = TokenMask::single(static_cast<std::size_t>(c.n_txt), static_cast<std::size_t>(r.subject_index));
  s.q_face_target = rec(r.ref.pixels);
  return s;
}

std::vector<float> face_pixel_mask(const TrainSample& s, const Config& c) {
  const std::size_t hw = c.pixels();
  std::vector<float> mask(s.x0.size(), 0.0f);
  for (std::size_t f = 0; f < s.face_regions.size(); ++f) {
    const Rect& r = s.face_regions[f];
    for (int y = std::max(0, r.y0); y < std::min(c.frame_h, r.y1); ++y)
      for (int x = std::max(0, r.x0); x < std::min(c.frame_w, r.x1); ++x) mask[f * hw + y * c.frame_w + x] = 1.0f;
  }
  return mask;
}

template <class T>
LossDraw<T> draw_loss_inputs(RngState& rng, int frames, const NoiseSchedule& s, double face_mask_prob,
                             const Config& c) {
  LossDraw<T> d;
  d.t = static_cast<int>(next_below(rng, static_cast<std::uint64_t>(s.size())));
  d.eps = seeded_normal(rng, {static_cast<std::size_t>(frames), static_cast<std::size_t>(c.pixels())})
              .template cast<T>();
  d.face_masked = next_uniform(rng) < face_mask_prob;
  return d;
}

template <class T>
Predictor<T> conditioned_predictor(const Config& c) {
  return [c](ParamBinder<T>& p, const PredictContext<T>& ctx) {
    Graph<T>& g = p.graph();
    const BasicTensor<T> ref = ctx.sample.reference.template cast<T>();
    Var x_txt = g.constant(embed_text<T>(ctx.sample.prompt, p.params()));
    const ConditionVars cv = embed_condition(p, ref, x_txt, ctx.sample.mask, c);
    return model_forward(p, ctx.x_t, cv.x_txt_hat, cv.x_face, cv.x_id, ctx.t, c);
  };
}

template <class T>
Predictor<T> base_predictor(const Config& c) {
  return [c](ParamBinder<T>& p, const PredictContext<T>& ctx) {
    Var x_txt = p.graph().constant(embed_text<T>(ctx.sample.prompt, p.params()));
    return base_model_forward(p, ctx.x_t, x_txt, ctx.t, c);
  };
}

template <class T>
Predictor<T> oracle_predictor() {
  return [](ParamBinder<T>& p, const PredictContext<T>& ctx) { return p.graph().constant(ctx.true_eps); };
}

template <class T>
LossVars<T> loss_graph(ParamBinder<T>& p, const TrainSample& sample, const LossDraw<T>& draw,
                       const Predictor<T>& model, const NoiseSchedule& s, double lambda, const Config& c) {
  if (!(lambda >= 0.0)) throw ContractError("loss: lambda must be >= 0");
  Graph<T>& g = p.graph();
  const BasicTensor<T> x0 = sample.x0.template cast<T>();
  const BasicTensor<T> x_t = forward_noise(x0, draw.t, draw.eps, s);
  const PredictContext<T> ctx{x_t, s.timesteps[draw.t], sample, draw.eps};
  Var eps_hat = model(p, ctx);
  if (g.value(eps_hat).shape() != x0.shape()) {
    throw DimensionError("loss: prediction " + shape_str(g.value(eps_hat).shape()) + " vs data " +
                         shape_str(x0.shape()));
  }
  Var eps = g.constant(draw.eps);
  LossVars<T> out;
  if (draw.face_masked) {
    const std::vector<float> m = face_pixel_mask(sample, c);
    out.l_noise = g.masked_mse(eps_hat, eps, std::vector<T>(m.begin(), m.end()));
  } else {
    out.l_noise = g.mean_squared_error(eps_hat, eps);
  }

  const double ab = s.alpha_bars[draw.t];
  Var x0_hat = g.scale(g.axpy(g.constant(x_t), eps_hat, static_cast<T>(-std::sqrt(1.0 - ab))),
                       static_cast<T>(1.0 / std::sqrt(ab)));
  Var emb = g.matmul(x0_hat, p("fixed.id_proj"));
  Var target = g.constant(sample.q_face_target.template cast<T>().reshaped(Shape{1, sample.q_face_target.size()}));
  std::vector<Var> cosines;
  for (std::size_t f = 0; f < x0.rows(); ++f) cosines.push_back(g.cosine(target, g.slice_rows(emb, f, 1)));
  Var mean_cos = g.mean_rows(g.concat_rows(cosines));
  out.l_id = g.add_scalar(g.scale(mean_cos, T(-1)), T(1));
  out.total = g.axpy(out.l_noise, out.l_id, static_cast<T>(lambda));
  return out;
}

namespace {

template <class T>
LossBreakdown breakdown(const Graph<T>& g, const LossVars<T>& v, double lambda, const LossDraw<T>& d) {
  LossBreakdown b;
  b.l_noise = static_cast<double>(g.value(v.l_noise)[0]);
  b.l_id = static_cast<double>(g.value(v.l_id)[0]);
  b.lambda = lambda;
  b.total = b.l_noise + lambda * b.l_id;
  b.face_masked = d.face_masked;
  b.t = d.t;
  return b;
}

}  // namespace

LossBreakdown loss_total(const TrainSample& sample, const Predictor<float>& model, const Params& params,
                         const NoiseSchedule& s, RngState& rng, double lambda, double face_mask_prob,
                         const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  const LossDraw<float> d = draw_loss_inputs<float>(rng, sample.frames(), s, face_mask_prob, c);
  return breakdown(g, loss_graph(p, sample, d, model, s, lambda, c), lambda, d);
}

// ---- training ----

std::string to_string(Stage s) {
  switch (s) {
    case Stage::BasePretrain: return "base_pretrain";
    case Stage::ImagePretrain: return "image_pretrain";
    case Stage::VideoFinetune: return "video_finetune";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  if (s == "base_pretrain") return Stage::BasePretrain;
  if (s == "image_pretrain") return Stage::ImagePretrain;
  if (s == "video_finetune") return Stage::VideoFinetune;
  throw ConfigError("unknown stage '" + s + "'");
}

TrainablePredicate trainable_in(Stage stage, const Config& c) {
  if (stage == Stage::BasePretrain) {
    return [](const std::string& name) { return param_group(name) == ParamGroup::Base; };
  }
  const bool face = !c.disable_face_branch, id = !c.disable_id_branch, can = !c.disable_can && !c.disable_id_branch;
  return [face, id, can](const std::string& name) {
    switch (param_group(name)) {
      case ParamGroup::FaceBranch: return face;
      case ParamGroup::IdBranch: return id;
      case ParamGroup::Can: return can;
      default: return false;
    }
  };
}

double lr_at(double lr, double min_ratio, int step, int total) {
  if (total <= 1) return lr;
  const double progress = static_cast<double>(step) / (total - 1);
  const double pi = std::acos(-1.0);
  return lr * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + std::cos(pi * progress)));
}

namespace {

std::string first_non_finite(const Params& params, const std::map<std::string, Tensor>& grads) {
  for (const auto& [name, t] : params) {
    if (!t.all_finite()) return "parameter '" + name + "'";
  }
  for (const auto& [name, gr] : grads) {
    if (!gr.all_finite()) return "gradient of '" + name + "'";
  }
  return "loss";
}

}  // namespace

StepResult train_step(Params& params, const std::vector<const TrainSample*>& batch, AdamState& opt, Stage stage,
                      RngState& rng, double lr, const Config& c) {
  if (batch.empty()) throw EmptyInputError("train_step: empty batch");
  for (const TrainSample* s : batch) {
    if (stage == Stage::ImagePretrain && s->frames() != 1) {
      throw ContractError("image_pretrain received a " + std::to_string(s->frames()) + "-frame sample");
    }
  }
  const NoiseSchedule sched = NoiseSchedule::from_config(c);
  const TrainablePredicate trainable = trainable_in(stage, c);
  const Predictor<float> model =
      stage == Stage::BasePretrain ? base_predictor<float>(c) : conditioned_predictor<float>(c);
  const double lambda = stage == Stage::BasePretrain ? 0.0 : c.lambda_id;

  std::map<std::string, Tensor> grads;
  StepResult res;
  for (const TrainSample* s : batch) {
    Graph<float> g;
    ParamBinder<float> p(g, params, trainable);
    const LossDraw<float> d = draw_loss_inputs<float>(rng, s->frames(), sched, c.face_mask_prob, c);
    const LossVars<float> lv = loss_graph(p, *s, d, model, sched, lambda, c);
    const LossBreakdown b = breakdown(g, lv, lambda, d);
    if (!std::isfinite(b.total)) {
      throw NumericError("step " + std::to_string(opt.steps) + " (" + to_string(stage) +
                         "): non-finite loss, first offending tensor: " + first_non_finite(params, grads));
    }
    g.backward(lv.total);
    for (const auto& [name, v] : p.bound()) {
      if (!g.requires_grad(v)) continue;
      Tensor gr = g.grad(v);
      auto [it, fresh] = grads.emplace(name, std::move(gr));
      if (!fresh) {
        const Tensor& add = g.grad(v);
        for (std::size_t i = 0; i < it->second.size(); ++i) it->second[i] += add[i];
      }
    }
    res.samples.push_back(b);
  }
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  for (auto& [name, gr] : grads) {
    for (float& x : gr.storage()) x *= inv_b;
    if (!gr.all_finite()) {
      throw NumericError("step " + std::to_string(opt.steps) + " (" + to_string(stage) +
                         "): non-finite gradient in '" + name + "'");
    }
  }

  ++opt.steps;
  const double b1 = c.adam_beta1, b2 = c.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(opt.steps));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(opt.steps));
  for (auto& [name, w] : params) {
    if (!trainable(name)) continue;
    auto git = grads.find(name);
    Tensor& m = opt.m.try_emplace(name, w.shape()).first->second;
    Tensor& v = opt.v.try_emplace(name, w.shape()).first->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = git == grads.end() ? 0.0 : git->second[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double upd = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.adam_eps) + c.weight_decay * w[i];
      w[i] = static_cast<float>(w[i] - lr * upd);
    }
  }

  for (const LossBreakdown& b : res.samples) {
    res.mean.l_noise += b.l_noise;
    res.mean.l_id += b.l_id;
  }
  res.mean.l_noise /= static_cast<double>(batch.size());
  res.mean.l_id /= static_cast<double>(batch.size());
  res.mean.lambda = lambda;
  res.mean.total = res.mean.l_noise + lambda * res.mean.l_id;
  return res;
}

TrainData make_train_data(const Dataset& image, const Dataset& video, const RecognitionEmbedder& rec,
                          const Config& c) {
  TrainData d;
  for (const PairRecord& r : image.records) {
    if (r.kept) d.image.push_back(make_train_sample(r, rec, c));
  }
  for (const PairRecord& r : video.records) {
    if (r.kept) d.video.push_back(make_train_sample(r, rec, c));
  }
  return d;
}

TrainReport run_training(Params& params, const TrainData& data, const Config& c, const StageHook& hook) {
  struct Plan {
    Stage stage;
    int steps;
    int batch;
    double lr;
    std::vector<const TrainSample*> pool;
  };
  std::vector<const TrainSample*> image, video, mixed;
  for (const auto& s : data.image) image.push_back(&s);
  for (const auto& s : data.video) video.push_back(&s);
  mixed = image;
  mixed.insert(mixed.end(), video.begin(), video.end());

  std::vector<Plan> plans;
  plans.push_back({Stage::BasePretrain, c.steps_base, c.batch_base, c.lr_base, mixed});
  if (!c.skip_pretrain) plans.push_back({Stage::ImagePretrain, c.steps_image, c.batch_image, c.lr, image});
  plans.push_back({Stage::VideoFinetune, c.steps_video, c.batch_video, c.lr, video});

  TrainReport report;
  const RngState root = RngState{c.seed, 0}.substream("train");
  std::vector<double> adapter_noise;
  for (const Plan& plan : plans) {
    report.stages_run.push_back(to_string(plan.stage));
    if (plan.steps > 0 && plan.pool.empty()) {
      throw DataError(to_string(plan.stage) + ": no training samples");
    }
    RngState rng = root.substream(to_string(plan.stage));
    AdamState opt;
    for (int step = 0; step < plan.steps; ++step) {
      std::vector<const TrainSample*> batch;
      for (int b = 0; b < plan.batch; ++b) batch.push_back(plan.pool[next_below(rng, plan.pool.size())]);
      const double lr = lr_at(plan.lr, c.lr_min_ratio, step, plan.steps);
      const StepResult r = train_step(params, batch, opt, plan.stage, rng, lr, c);
      report.curve.push_back(CurvePoint{plan.stage, step, r.mean});
      if (plan.stage != Stage::BasePretrain) adapter_noise.push_back(r.mean.l_noise);
    }
    if (hook) hook(plan.stage, plan.steps, params);
  }
  if (!adapter_noise.empty()) {
    const std::size_t head = std::min<std::size_t>(10, adapter_noise.size());
    const std::size_t tail = std::min<std::size_t>(50, adapter_noise.size());
    for (std::size_t i = 0; i < head; ++i) report.initial_l_noise += adapter_noise[i] / head;
    for (std::size_t i = adapter_noise.size() - tail; i < adapter_noise.size(); ++i) {
      report.final_l_noise += adapter_noise[i] / tail;
    }
  }
  return report;
}

// ---- sampling ----

Tensor sample_loop(const SamplePredictor& model, const NoiseSchedule& s, RngState rng, int frames, const Config& c) {
  if (frames <= 0) throw DimensionError("sample_loop: frames must be positive");
  Tensor x = seeded_normal(rng, {static_cast<std::size_t>(frames), static_cast<std::size_t>(c.pixels())});
  for (int i = s.size() - 1; i >= 0; --i) {
    const Tensor eps = model(x, s.timesteps[i]);
    if (eps.shape() != x.shape()) {
      throw DimensionError("sample_loop: prediction " + shape_str(eps.shape()) + " vs " + shape_str(x.shape()));
    }
    const double beta = s.betas[i], ab = s.alpha_bars[i];
    const double ab_prev = i > 0 ? s.alpha_bars[i - 1] : 1.0;
    const double coef = beta / std::sqrt(1.0 - ab), inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    Tensor next(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) next[k] = static_cast<float>((x[k] - coef * eps[k]) * inv_sqrt_alpha);
    if (i > 0) {
      const double sd = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
      const Tensor z = seeded_normal(rng, x.shape());
      for (std::size_t k = 0; k < x.size(); ++k) next[k] = static_cast<float>(next[k] + sd * z[k]);
    }
    if (!next.all_finite()) throw NumericError("sample_loop: non-finite state at step " + std::to_string(i));
    x = std::move(next);
  }
  return x;
}

SamplePredictor conditioned_sampler(const Params& params, const FaceCondition& cond, const Config& c) {
  return [&params, cond, c](const Tensor& x_t, int t) {
    return model_forward(x_t, cond.x_txt_hat, cond.x_face, cond.x_id, t, params, c);
  };
}

SamplePredictor known_x0_oracle(const Tensor& x0, const NoiseSchedule& s) {
  return [x0, s](const Tensor& x_t, int t) {
    s.check_t(t);
    const double a = std::sqrt(s.alpha_bars[t]), b = std::sqrt(1.0 - s.alpha_bars[t]);
    Tensor eps(x_t.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<float>((x_t[i] - a * x0[i]) / b);
    return eps;
  };
}

std::string run_manifest(const Config& c, const TrainReport& report, const std::map<std::string, std::string>& extra) {
  std::ostringstream o;
  o << "seed=" << c.seed << "\n";
  o << "config_hash=" << c.full_hash() << "\n";
  o << "architecture_hash=" << c.architecture_hash() << "\n";
  std::string stages;
  for (const auto& s : report.stages_run) stages += (stages.empty() ? "" : ",") + s;
  o << "stages=" << stages << "\n";
  o << "lambda=" << fmt_double(c.lambda_id) << "\n";
  o << "T=" << c.T << "\n";
  o << "beta_start=" << fmt_double(c.beta_start) << "\n";
  o << "beta_end=" << fmt_double(c.beta_end) << "\n";
  o << "initial_l_noise=" << fmt_double(report.initial_l_noise) << "\n";
  o << "final_l_noise=" << fmt_double(report.final_l_noise) << "\n";
  for (const auto& [k, v] : extra) o << k << "=" << v << "\n";
  return o.str();
}

#define FACECOND_INSTANTIATE(T)                                                                                   \
  template BasicTensor<T> forward_noise<T>(const BasicTensor<T>&, int, const BasicTensor<T>&, const NoiseSchedule&); \
  template BasicTensor<T> reconstruct_x0<T>(const BasicTensor<T>&, const BasicTensor<T>&, int,                    \
                                            const NoiseSchedule&);                                               \
  template LossDraw<T> draw_loss_inputs<T>(RngState&, int, const NoiseSchedule&, double, const Config&);          \
  template Predictor<T> conditioned_predictor<T>(const Config&);                                                 \
  template Predictor<T> base_predictor<T>(const Config&);                                                        \
  template Predictor<T> oracle_predictor<T>();                                                                   \
  template LossVars<T> loss_graph<T>(ParamBinder<T>&, const TrainSample&, const LossDraw<T>&, const Predictor<T>&, \
                                     const NoiseSchedule&, double, const Config&);

FACECOND_INSTANTIATE(float)
FACECOND_INSTANTIATE(double)

#undef FACECOND_INSTANTIATE

}  // namespace facecond
