#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "facecond/config.hpp"
#include "facecond/numerics/rng.hpp"
#include "facecond/numerics/tensor.hpp"

namespace facecond {

enum class Demographic { Man, Woman, Person };

struct Identity {
  Tensor z;  // [8]
  Demographic tag = Demographic::Person;
};

inline constexpr std::size_t kIdentityDim = 8;
inline constexpr double kIdentityNormMin = 0.5;
inline constexpr double kIdentityNormMax = 2.0;

// Rotation (radians) about the face center, translation in pixels and a
// uniform scale.
struct Pose {
  double angle = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double scale = 1.0;

  friend bool operator==(const Pose&, const Pose&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr std::size_t kLandmarks = 5;
using Landmarks = std::array<Point, kLandmarks>;

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(const Point& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct RenderedFrame {
  Tensor pixels;  // [H x W], values in [0, 1]
  Landmarks landmarks{};
  Rect face_region;
};

// Frame geometry of the synthetic world.
struct WorldGeometry {
  int height = 16;
  int width = 16;
  double max_angle = 0.5;
  double max_shift_px = 3.2;
  double scale_min = 0.8;
  double scale_max = 1.25;

  static WorldGeometry from_config(const Config& c);
  // Legal range for any render, independent of the sampling ranges above.
  void check_pose(const Pose& pose) const;
};

Identity make_identity(RngState& rng);

// Landmarks before pose, in pixel offsets from the frame center.
Landmarks canonical_landmarks(const Identity& id, const WorldGeometry& geo);
// Affine image of the canonical landmarks under a pose.
Landmarks posed_landmarks(const Identity& id, const Pose& pose, const WorldGeometry& geo);

RenderedFrame render_frame(const Identity& id, const Pose& pose, const WorldGeometry& geo);
std::vector<RenderedFrame> synth_clip(const Identity& id, const std::vector<Pose>& trajectory,
                                      const WorldGeometry& geo);

// Uniform draw inside the sampling ranges of the geometry.
Pose sample_pose(RngState& rng, const WorldGeometry& geo);
// Linear interpolation from a random start pose to a random end pose.
std::vector<Pose> sample_trajectory(RngState& rng, const WorldGeometry& geo, int frames);

enum class PairKind { SelfReference, CrossPose, VideoClip };
std::string to_string(PairKind kind);
PairKind pair_kind_from_string(const std::string& s);

struct PairRecord {
  std::size_t identity_index = 0;
  Identity identity;
  PairKind kind = PairKind::SelfReference;
  Pose ref_pose;
  std::vector<Pose> trajectory;
  RenderedFrame ref;
  std::vector<RenderedFrame> target;
  double cos_sim = 0.0;
  bool kept = false;
  std::string drop_reason;
  std::vector<int> prompt;  // token ids, length n_txt
  int subject_index = 0;
};

using RecognitionFn = std::function<Tensor(const Tensor& frame)>;

// Scores each candidate with the recognition embedding of ref against the
// first target frame and keeps it iff cos_sim > threshold. Order is
// preserved; degenerate embeddings are kept in the output as dropped with a
// reason.
std::vector<PairRecord> filter_pairs(std::vector<PairRecord> pairs, const RecognitionFn& embed,
                                     double threshold = 0.65);

// Optional extra predicate stage standing in for caption / NSFW /
// resolution filters. Returns an empty string to accept, else a reason.
using PairPredicate = std::function<std::string(const PairRecord&)>;

enum class DataStage { Image, Video };
std::string to_string(DataStage s);
DataStage data_stage_from_string(const std::string& s);

struct Dataset {
  DataStage stage = DataStage::Image;
  int frames = 1;
  int height = 0;
  int width = 0;
  std::vector<PairRecord> records;  // kept and dropped, in generation order
  std::size_t kept_count() const;
  std::size_t dropped_count() const;
};

// Prompt vocabulary of the toy text encoder.
const std::vector<std::string>& vocabulary();
std::vector<int> make_prompt(RngState& rng, Demographic tag, int n_txt, int* subject_index);

struct DatasetOptions {
  double threshold = 0.65;
  PairPredicate predicate;  // optional
};

// Identity latents come from identity_rng; poses, prompts and pair kinds
// from pose_rng. Throws EmptyInputError if filtering leaves nothing.
Dataset make_dataset(int n_ids, int per_id, DataStage stage, RngState identity_rng, RngState pose_rng,
                     const Config& config, const RecognitionFn& embed, const DatasetOptions& options = {});
Dataset make_dataset(int n_ids, int per_id, DataStage stage, RngState rng, const Config& config,
                     const RecognitionFn& embed, const DatasetOptions& options = {});

// On-disk form: "<base>.mmds" frame blob plus "<base>.manifest" records.
void write_dataset(const Dataset& ds, const std::string& base_path);
Dataset read_dataset(const std::string& base_path);

struct BlobHeader {
  std::uint32_t version = 1;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t frames = 0;
};

// Frame blob: "MMDS", u32 version, u32 H, u32 W, u32 F, then frames as
// little-endian float32, row-major. Offsets are byte offsets into the file.
class BlobWriter {
 public:
  BlobWriter(const std::string& path, BlobHeader header);
  std::uint64_t append(const Tensor& frame);
  void close();

 private:
  std::string path_;
  std::vector<char> bytes_;
  BlobHeader header_;
};

BlobHeader read_blob_header(const std::string& path);
Tensor read_blob_frame(const std::vector<char>& blob, std::uint64_t offset, int height, int width);
std::vector<char> read_file_bytes(const std::string& path);

}  // namespace facecond
