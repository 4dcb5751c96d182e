#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace facecond {

// Every tunable of the engine. Text form is flat "key = value" lines with
// '#' comments; keys are the member names below.
struct Config {
  // Model.
  int d = 64;
  int layers = 4;
  int d_t = 32;
  int c1 = 16;
  int heads = 1;
  int perceiver_depth = 2;
  int face_tokens = 32;
  int n_txt = 8;
  int patch = 4;
  int frame_h = 16;
  int frame_w = 16;
  int frames = 4;
  int ffn_mult = 4;
  int mod_hidden = 64;

  // Noise schedule.
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  // Training.
  double lr = 1e-3;
  double lr_base = 2e-3;
  double lr_min_ratio = 0.1;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps_base = 1500;
  int steps_image = 2000;
  int steps_video = 500;
  int batch_base = 4;
  int batch_image = 4;
  int batch_video = 2;
  double lambda_id = 0.1;
  double face_mask_prob = 0.5;

  // Synthetic data.
  int n_ids = 200;
  int per_id = 4;
  int video_n_ids = 100;
  int video_per_id = 2;
  double max_angle = 0.25;
  double max_shift = 0.08;  // fraction of frame width
  double scale_min = 0.9;
  double scale_max = 1.1;
  double filter_threshold = 0.65;

  // Evaluation.
  double theta_id = 0.5;
  double theta_motion = 0.01;
  int eval_samples = 50;
  int sample_steps = 0;  // 0 = use T

  std::uint64_t seed = 1234;

  // Ablations.
  bool disable_can = false;
  bool disable_id_branch = false;
  bool disable_face_branch = false;
  bool direct_can_prediction = false;
  bool skip_pretrain = false;

  int patches_per_frame() const { return (frame_h / patch) * (frame_w / patch); }
  int patch_dim() const { return patch * patch; }
  int pixels() const { return frame_h * frame_w; }

  // Throws ConfigError on non-positive dimensions or inconsistent values.
  void validate() const;

  // Hash of the fields that define parameter shapes and the schedule.
  std::uint64_t architecture_hash() const;
  std::uint64_t full_hash() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string to_text() const;
  static Config from_text(const std::string& text);
  static Config load(const std::string& path);

  // Applies FACECOND_SEED from the environment when set.
  void apply_env_overrides();
};

}  // namespace facecond
