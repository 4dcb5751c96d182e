#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "facecond/config.hpp"
#include "facecond/dataforge.hpp"
#include "facecond/embedder.hpp"
#include "facecond/params.hpp"

namespace facecond {

// Linear beta schedule. alpha_bar[t] = prod_{s<=t} (1 - beta[s]).
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alpha_bars;
  std::vector<int> timesteps;  // model timestep of each entry; identity unless respaced

  int size() const { return static_cast<int>(betas.size()); }
  static NoiseSchedule linear(int T, double beta_start, double beta_end);
  static NoiseSchedule from_config(const Config& c);
  // Keeps `steps` evenly spaced timesteps (always including T-1 and 0) and
  // recomputes betas so the kept alpha_bars are unchanged.
  NoiseSchedule respaced(int steps) const;
  // Throws ContractError outside [0, T).
  void check_t(int t) const;
};

template <class T>
BasicTensor<T> forward_noise(const BasicTensor<T>& x0, int t, const BasicTensor<T>& eps, const NoiseSchedule& s);

// Closed-form inverse of forward_noise given a noise estimate.
template <class T>
BasicTensor<T> reconstruct_x0(const BasicTensor<T>& x_t, const BasicTensor<T>& eps, int t, const NoiseSchedule& s);

struct TrainSample {
  Tensor x0;                    // [F x H*W]
  Tensor reference;             // [H x W]
  std::vector<int> prompt;      // n_txt token ids
  TokenMask mask;               // subject position
  std::vector<Rect> face_regions;  // one per frame
  Tensor q_face_target;         // recognition embedding of the reference, [2d]
  int frames() const { return static_cast<int>(x0.rows()); }
};

TrainSample make_train_sample(const PairRecord& record, const RecognitionEmbedder& rec, const Config& c);
// [F x H*W] indicator of the per-frame face regions.
std::vector<float> face_pixel_mask(const TrainSample& s, const Config& c);

struct LossBreakdown {
  double l_noise = 0.0;
  double l_id = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  bool face_masked = false;
  int t = 0;
};

// Random choices of one loss evaluation: timestep, noise and the face-mask
// coin. Drawn in that order from the rng.
template <class T>
struct LossDraw {
  int t = 0;
  BasicTensor<T> eps;
  bool face_masked = false;
};

template <class T>
LossDraw<T> draw_loss_inputs(RngState& rng, int frames, const NoiseSchedule& s, double face_mask_prob,
                             const Config& c);

template <class T>
struct PredictContext {
  const BasicTensor<T>& x_t;
  int t;
  const TrainSample& sample;
  const BasicTensor<T>& true_eps;  // for oracles only
};

template <class T>
using Predictor = std::function<Var(ParamBinder<T>&, const PredictContext<T>&)>;

// Full conditioned model: embedder on the reference, fused text, DiT.
template <class T>
Predictor<T> conditioned_predictor(const Config& c);
// Plain mm-DiT on raw text, no reference.
template <class T>
Predictor<T> base_predictor(const Config& c);
// Returns the true noise.
template <class T>
Predictor<T> oracle_predictor();

template <class T>
struct LossVars {
  Var total, l_noise, l_id;
};

// l_noise + lambda * l_id on one sample. l_id is the mean over frames of
// 1 - cos(q_face_target, E_rec(x0_hat[f])) with the identity decoder.
template <class T>
LossVars<T> loss_graph(ParamBinder<T>& p, const TrainSample& sample, const LossDraw<T>& draw,
                       const Predictor<T>& model, const NoiseSchedule& s, double lambda, const Config& c);

LossBreakdown loss_total(const TrainSample& sample, const Predictor<float>& model, const Params& params,
                         const NoiseSchedule& s, RngState& rng, double lambda, double face_mask_prob,
                         const Config& c);

// ---- training ----

enum class Stage { BasePretrain, ImagePretrain, VideoFinetune };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

// Which parameters a stage updates under the config's ablation flags.
// BasePretrain: base.*. Adapter stages: the face, identity and CAN groups,
// minus disabled branches (CAN also needs the identity branch).
TrainablePredicate trainable_in(Stage stage, const Config& c);

struct AdamState {
  std::map<std::string, Tensor> m, v;
  long long steps = 0;
};

struct StepResult {
  LossBreakdown mean;  // batch means
  std::vector<LossBreakdown> samples;
};

// One AdamW step on the batch mean loss. Parameters outside the stage's
// trainable set are never written. Throws NumericError naming the first
// offending tensor when the loss or a gradient is not finite, ContractError
// on a multi-frame sample in ImagePretrain.
StepResult train_step(Params& params, const std::vector<const TrainSample*>& batch, AdamState& opt, Stage stage,
                      RngState& rng, double lr, const Config& c);

// Cosine decay from lr to lr * min_ratio over total steps.
double lr_at(double lr, double min_ratio, int step, int total);

struct CurvePoint {
  Stage stage;
  int step;  // within stage
  LossBreakdown loss;
};

struct TrainReport {
  std::vector<CurvePoint> curve;
  std::vector<std::string> stages_run;
  double initial_l_noise = 0.0;  // mean of the first 10 adapter-stage steps
  double final_l_noise = 0.0;    // running mean over the last 50 adapter-stage steps
};

struct TrainData {
  std::vector<TrainSample> image;
  std::vector<TrainSample> video;
};

TrainData make_train_data(const Dataset& image, const Dataset& video, const RecognitionEmbedder& rec,
                          const Config& c);

// Hook invoked after each completed stage (e.g. to write a checkpoint).
using StageHook = std::function<void(Stage, int steps, const Params&)>;

// Base pretraining, then image pretraining (unless skip_pretrain), then
// video finetuning. Step counts and batch sizes come from the config.
TrainReport run_training(Params& params, const TrainData& data, const Config& c, const StageHook& hook = {});

// ---- sampling ----

using SamplePredictor = std::function<Tensor(const Tensor& x_t, int t)>;

// Ancestral sampling from N(0, I) of shape [frames x H*W] over the
// schedule's timesteps, last to first. The posterior variance scales the
// injected noise; the final step adds none.
Tensor sample_loop(const SamplePredictor& model, const NoiseSchedule& s, RngState rng, int frames, const Config& c);

SamplePredictor conditioned_sampler(const Params& params, const FaceCondition& cond, const Config& c);
// Predicts the exact noise that maps x_t back to x0.
SamplePredictor known_x0_oracle(const Tensor& x0, const NoiseSchedule& s);

// key=value run manifest.
std::string run_manifest(const Config& c, const TrainReport& report, const std::map<std::string, std::string>& extra);

}  // namespace facecond
