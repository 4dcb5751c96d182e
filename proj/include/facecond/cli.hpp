#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "facecond/checkpoint.hpp"
#include "facecond/diffusion.hpp"
#include "facecond/metrics.hpp"

namespace facecond {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitOther = 1;

// ConfigError -> 2; DataError, EmptyInputError, IoError -> 3;
// NumericError -> 4; anything else -> 1.
int exit_code_for(const std::exception& e);

// Named substream of the config seed ("data.image", "data.video", "init",
// "train", "sample", "eval").
RngState seed_stream(const Config& c, std::string_view label);

Params initial_params(const Config& c);
// Respaced to sample_steps when that is positive.
NoiseSchedule sampling_schedule(const Config& c);

// ---- datagen ----

struct DatagenSummary {
  std::size_t image_kept = 0, image_dropped = 0;
  std::size_t video_kept = 0, video_dropped = 0;
  std::string text() const;
};

// Writes <dir>/image.{mmds,manifest} and <dir>/video.{mmds,manifest}.
DatagenSummary cmd_datagen(const Config& c, const std::string& out_dir);
std::string dataset_base(const std::string& dir, DataStage stage);

// ---- train ----

struct CurveRow {
  int step = 0;  // global over the stages run
  double l_noise = 0.0, l_id = 0.0, total = 0.0;
};

// One "step l_noise l_id total" line per step, "# stage=<name> first=<step>"
// before each stage.
std::string format_curve(const TrainReport& r);
std::vector<CurveRow> parse_curve(const std::string& text);

struct TrainOutputs {
  TrainReport report;
  std::string manifest;
  Params params;
};

// Reads the datasets of data_dir, refusing stage or shape mismatches with
// DataError. Writes <out>/init.mmck, <out>/<stage>.mmck after each stage,
// <out>/model.mmck, <out>/curve.txt and <out>/manifest.txt.
TrainOutputs cmd_train(const Config& c, const std::string& data_dir, const std::string& out_dir);
TrainData load_train_data(const Config& c, const std::string& data_dir, const Params& params);

// ---- sample ----

struct SampleRequest {
  std::optional<std::uint64_t> identity_seed;  // frontal render of make_identity(seed)
  std::string reference_path;                   // or the first frame of an MMDS blob
  int n = 1;
};

// Writes <out>/samples.mmds (only when n > 0), <out>/samples.sidecar,
// <out>/samples.eval and <out>/references.eval.
void cmd_sample(const Config& c, const std::string& checkpoint_path, const SampleRequest& req,
                const std::string& out_dir);

// ---- eval ----

// Frame records come from samples_path and reference records from
// references_path, whatever their role fields say.
EvalReport cmd_eval(const Config& c, const std::string& samples_path, const std::string& references_path);

// Conditioned samples for n held-out identities with frontal references.
// A win is a clip whose mean frame similarity to its own reference exceeds
// that to the next identity's reference.
struct IdentityProbe {
  int samples = 0;
  int wins = 0;
  double mean_own = 0.0;
  double mean_other = 0.0;
  std::vector<VideoEval> evals;
};
IdentityProbe identity_probe(const Params& params, const Config& c, int n);

// ---- ablate ----

struct AblationVariant {
  std::string name;
  Config config;
};

// full, disable_can, skip_pretrain, disable_id_branch, disable_face_branch,
// direct_can_prediction; all share the base config's seed.
std::vector<AblationVariant> ablation_variants(const Config& base);

struct AblationRun {
  std::string name;
  TrainReport report;
  std::set<std::string> changed;   // tensors that differ from the shared base-pretrained state
  std::set<std::string> expected;  // tensors the variant's flags allow to train
  bool designated_ok = false;      // changed == expected
  IdentityProbe probe;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::string curves;   // step column plus one l_noise column per variant
  std::string metrics;  // one row per variant
};

// Base pretraining runs once and every variant continues from the same
// state; its stages then run per flags. Writes <out>/<variant>.curve,
// <out>/curves.txt and <out>/metrics.txt.
AblationResult cmd_ablate(const Config& c, const std::string& data_dir, const std::string& out_dir);

// ---- gradcheck ----

struct GradcheckSummary {
  std::vector<std::uint64_t> seeds;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  std::string text;
};
GradcheckSummary cmd_gradcheck(const std::vector<std::uint64_t>& seeds);

}  // namespace facecond
