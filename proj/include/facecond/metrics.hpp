#pragma once

#include <optional>
#include <string>
#include <vector>

#include "facecond/dataforge.hpp"
#include "facecond/numerics/tensor.hpp"

namespace facecond {

struct LandmarkSet {
  Landmarks points{};
  int frame_w = 0;
  int frame_h = 0;

  // Throws DataError when a point lies outside [0, w] x [0, h].
  void validate() const;
};

// Inputs of the identity and motion metrics for one clip. Landmarks are
// optional per frame; motion metrics need them on every frame.
struct VideoEval {
  std::string clip;
  std::vector<Tensor> frame_embeddings;
  std::vector<std::optional<LandmarkSet>> frame_landmarks;  // same length as frame_embeddings
  std::vector<Tensor> reference_embeddings;                 // >= 1, same identity
  std::optional<LandmarkSet> reference_landmarks;

  std::size_t frames() const { return frame_embeddings.size(); }
  bool has_motion() const;  // every frame has landmarks
  void validate() const;
};

// Reference pooling: each reference embedding is normalized, the unit
// vectors are averaged and the mean is normalized again.
Tensor pooled_reference(const VideoEval& e);
// Cosine of each frame embedding with the pooled reference.
std::vector<double> frame_similarities(const VideoEval& e);

double id_similarity_avg(const VideoEval& e);
// K = min(8, F) uniformly spaced frames; max(0, sim(first) - sim(last)).
double similarity_decay(const VideoEval& e);
std::vector<std::size_t> decay_sample_indices(std::size_t frames);

// Landmarks centered on their centroid and divided by their bounding-box
// diagonal. Centering uses pairwise differences so that translating all
// points leaves the result bit-identical whenever the translated
// coordinates are exact.
std::array<Point, kLandmarks> align_landmarks(const LandmarkSet& lm);
double fm_ref(const VideoEval& e, const LandmarkSet& ref);
// Coordinates divided by frame size, no centering. Maximum (fm_inter) or
// mean (fm_inter_mean) over consecutive frame pairs of the mean point
// displacement.
double fm_inter(const VideoEval& e);
double fm_inter_mean(const VideoEval& e);

struct SuccessThresholds {
  double theta_id = 0.5;
  double theta_motion = 0.01;
};

struct SuccessRates {
  std::size_t videos = 0;
  double face_recognized = 0.0;  // >= 1 frame with a finite non-zero embedding
  double identity_check = 0.0;   // id_similarity_avg >= theta_id
  std::optional<double> motion;  // over clips with landmarks; empty when none have them
  // Text alignment has no toy-scale scorer and is always reported n/a.
};

SuccessRates success_rates(const std::vector<VideoEval>& evals, const SuccessThresholds& th);

// Line records: clip=<id> role=frame|ref frame=<i> w=<W> h=<H>
// emb=<v,v,...> lm=<x1,y1,...,x5,y5>|none. Clips keep first-appearance
// order; frames must be numbered 0..F-1 within a clip.
std::vector<VideoEval> parse_video_evals(const std::string& text);
// Unvalidated parse that reads every line with the given role, ignoring the
// role field (Frame / Reference), or as written.
enum class EvalRole { AsWritten, Frame, Reference };
std::vector<VideoEval> parse_eval_records(const std::string& text, EvalRole role);
// Attaches each reference clip to the frame clip of the same name and
// validates the result. Throws DataError on a clip without references.
std::vector<VideoEval> join_evals(std::vector<VideoEval> frames, const std::vector<VideoEval>& references);
std::string format_video_evals(const std::vector<VideoEval>& evals);

struct ClipMetrics {
  std::string clip;
  double id_similarity = 0.0;
  std::optional<double> decay;  // needs >= 2 frames
  std::optional<double> fm_ref;
  std::optional<double> fm_inter;
  std::optional<double> fm_inter_mean;
};

struct EvalReport {
  std::vector<ClipMetrics> clips;
  SuccessRates rates;
  double mean_id_similarity = 0.0;
};

// Throws EmptyInputError on an empty set.
EvalReport evaluate(const std::vector<VideoEval>& evals, const SuccessThresholds& th);
std::string report_text(const EvalReport& r);
std::string report_kv(const EvalReport& r);

}  // namespace facecond
