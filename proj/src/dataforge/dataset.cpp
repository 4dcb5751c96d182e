#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "facecond/dataforge.hpp"
#include "facecond/numerics/kernels.hpp"
#include "facecond/textio.hpp"

namespace facecond {

std::string to_string(PairKind kind) {
  switch (kind) {
    case PairKind::SelfReference: return "self";
    case PairKind::CrossPose: return "cross";
    case PairKind::VideoClip: return "clip";
  }
  return "?";
}

PairKind pair_kind_from_string(const std::string& s) {
  if (s == "self") return PairKind::SelfReference;
  if (s == "cross") return PairKind::CrossPose;
  if (s == "clip") return PairKind::VideoClip;
  throw DataError("unknown pair kind '" + s + "'");
}

std::string to_string(DataStage s) { return s == DataStage::Image ? "image" : "video"; }

DataStage data_stage_from_string(const std::string& s) {
  if (s == "image") return DataStage::Image;
  if (s == "video") return DataStage::Video;
  throw DataError("unknown data stage '" + s + "'");
}

std::size_t Dataset::kept_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.kept ? 1 : 0;
  return n;
}

std::size_t Dataset::dropped_count() const { return records.size() - kept_count(); }

std::vector<PairRecord> filter_pairs(std::vector<PairRecord> pairs, const RecognitionFn& embed, double threshold) {
  if (!(threshold > -1.0 && threshold < 1.0)) {
    throw ContractError("filter_pairs: threshold " + fmt_double(threshold) + " outside (-1, 1)");
  }
  for (PairRecord& p : pairs) {
    if (p.target.empty()) throw DataError("filter_pairs: record without target frames");
    try {
      p.cos_sim = cosine_similarity(embed(p.ref.pixels), embed(p.target.front().pixels));
      p.kept = p.cos_sim > threshold;
      p.drop_reason = p.kept ? "" : "below_threshold";
    } catch (const DegenerateInputError&) {
      p.cos_sim = 0.0;
      p.kept = false;
      p.drop_reason = "degenerate_embedding";
    }
  }
  return pairs;
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = {
      "<pad>", "a",     "photo",  "video",   "of",    "the",  "man",   "woman",  "person", "smiling",
      "turning", "looking", "left", "right", "slowly", "in",  "park",  "room",   "street", "portrait",
      "close", "up",    "nodding", "talking", "with",  "light", "soft",  "bright",
  };
  return vocab;
}

namespace {

int token_id(const std::string& w) {
  const auto& v = vocabulary();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == w) return static_cast<int>(i);
  }
  throw ContractError("word '" + w + "' not in vocabulary");
}

const char* subject_word(Demographic tag) {
  switch (tag) {
    case Demographic::Man: return "man";
    case Demographic::Woman: return "woman";
    case Demographic::Person: return "person";
  }
  return "person";
}

template <std::size_t N>
const char* pick(RngState& rng, const char* const (&words)[N]) {
  return words[next_below(rng, N)];
}

}  // namespace

std::vector<int> make_prompt(RngState& rng, Demographic tag, int n_txt, int* subject_index) {
  static const char* const kLead[] = {"photo", "video", "portrait"};
  static const char* const kAction[] = {"smiling", "turning", "looking", "nodding", "talking"};
  static const char* const kPlace[] = {"park", "room", "street", "light"};
  std::vector<std::string> words;
  // Two templates move the subject token between positions.
  if (next_below(rng, 2) == 0) {
    words = {"a", pick(rng, kLead), "of", "a", subject_word(tag), pick(rng, kAction), "in", pick(rng, kPlace)};
  } else {
    words = {"the", subject_word(tag), pick(rng, kAction), "slowly", "in", "the", pick(rng, kPlace)};
  }
  int subj = -1;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == subject_word(tag)) subj = static_cast<int>(i);
  }
  if (subj < 0 || subj >= n_txt) throw ConfigError("n_txt " + std::to_string(n_txt) + " too short for prompts");
  std::vector<int> out(static_cast<std::size_t>(n_txt), token_id("<pad>"));
  for (std::size_t i = 0; i < words.size() && i < out.size(); ++i) out[i] = token_id(words[i]);
  if (subject_index) *subject_index = subj;
  return out;
}

Dataset make_dataset(int n_ids, int per_id, DataStage stage, RngState identity_rng, RngState pose_rng,
                     const Config& config, const RecognitionFn& embed, const DatasetOptions& options) {
  if (n_ids <= 0 || per_id <= 0) throw ConfigError("make_dataset: n_ids and per_id must be positive");
  const WorldGeometry geo = WorldGeometry::from_config(config);
  Dataset ds;
  ds.stage = stage;
  ds.frames = stage == DataStage::Image ? 1 : config.frames;
  ds.height = geo.height;
  ds.width = geo.width;

  std::vector<PairRecord> candidates;
  candidates.reserve(static_cast<std::size_t>(n_ids) * per_id);
  for (int i = 0; i < n_ids; ++i) {
    RngState id_rng = identity_rng.substream("identity", static_cast<std::uint64_t>(i));
    const Identity id = make_identity(id_rng);
    for (int j = 0; j < per_id; ++j) {
      RngState r = pose_rng.substream("pair", static_cast<std::uint64_t>(i) * per_id + j);
      PairRecord p;
      p.identity_index = static_cast<std::size_t>(i);
      p.identity = id;
      if (stage == DataStage::Video) {
        p.kind = PairKind::VideoClip;
        p.ref_pose = sample_pose(r, geo);
        p.trajectory = sample_trajectory(r, geo, config.frames);
      } else {
        // One self-reference pair in four; the rest use an independent pose.
        p.kind = next_below(r, 4) == 0 ? PairKind::SelfReference : PairKind::CrossPose;
        p.trajectory = {sample_pose(r, geo)};
        p.ref_pose = p.kind == PairKind::SelfReference ? p.trajectory.front() : sample_pose(r, geo);
      }
      p.ref = render_frame(id, p.ref_pose, geo);
      p.target = synth_clip(id, p.trajectory, geo);
      p.prompt = make_prompt(r, id.tag, config.n_txt, &p.subject_index);
      candidates.push_back(std::move(p));
    }
  }
  ds.records = filter_pairs(std::move(candidates), embed, options.threshold);
  if (options.predicate) {
    for (PairRecord& p : ds.records) {
      if (!p.kept) continue;
      std::string reason = options.predicate(p);
      if (!reason.empty()) {
        p.kept = false;
        p.drop_reason = std::move(reason);
      }
    }
  }
  if (ds.kept_count() == 0) {
    throw EmptyInputError("make_dataset: filtering kept 0 of " + std::to_string(ds.records.size()) +
                          " pairs at threshold " + fmt_double(options.threshold));
  }
  return ds;
}

Dataset make_dataset(int n_ids, int per_id, DataStage stage, RngState rng, const Config& config,
                     const RecognitionFn& embed, const DatasetOptions& options) {
  return make_dataset(n_ids, per_id, stage, rng.substream("identities"), rng.substream("poses"), config, embed,
                      options);
}

// ---- on-disk form ----

namespace {

constexpr char kBlobMagic[4] = {'M', 'M', 'D', 'S'};
constexpr std::size_t kBlobHeaderBytes = 4 + 4 * 4;

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string fmt_pose(const Pose& p) {
  return fmt_double(p.angle) + ":" + fmt_double(p.dx) + ":" + fmt_double(p.dy) + ":" + fmt_double(p.scale);
}

Pose parse_pose(const std::string& s, std::size_t line_no) {
  const auto f = split(s, ':');
  if (f.size() != 4) throw DataError("line " + std::to_string(line_no) + ": bad pose '" + s + "'");
  return Pose{parse_double(f[0], line_no), parse_double(f[1], line_no), parse_double(f[2], line_no),
              parse_double(f[3], line_no)};
}

std::string fmt_landmarks(const Landmarks& lm) {
  std::vector<double> v;
  for (const Point& p : lm) {
    v.push_back(p.x);
    v.push_back(p.y);
  }
  return fmt_doubles(v);
}

Landmarks parse_landmarks(const std::string& s, std::size_t line_no) {
  const auto f = split(s, ',');
  if (f.size() != 2 * kLandmarks) throw DataError("line " + std::to_string(line_no) + ": bad landmarks '" + s + "'");
  Landmarks lm{};
  for (std::size_t k = 0; k < kLandmarks; ++k) {
    lm[k] = Point{parse_double(f[2 * k], line_no), parse_double(f[2 * k + 1], line_no)};
  }
  return lm;
}

std::string fmt_rect(const Rect& r) {
  return std::to_string(r.x0) + ":" + std::to_string(r.y0) + ":" + std::to_string(r.x1) + ":" + std::to_string(r.y1);
}

Rect parse_rect(const std::string& s, std::size_t line_no) {
  const auto f = split(s, ':');
  if (f.size() != 4) throw DataError("line " + std::to_string(line_no) + ": bad region '" + s + "'");
  return Rect{static_cast<int>(parse_int(f[0], line_no)), static_cast<int>(parse_int(f[1], line_no)),
              static_cast<int>(parse_int(f[2], line_no)), static_cast<int>(parse_int(f[3], line_no))};
}

template <class Item, class Fmt>
std::string join(const std::vector<Item>& items, char sep, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += fmt(items[i]);
  }
  return out;
}

}  // namespace

BlobWriter::BlobWriter(const std::string& path, BlobHeader header) : path_(path), header_(header) {
  bytes_.insert(bytes_.end(), kBlobMagic, kBlobMagic + 4);
  put_u32(bytes_, header.version);
  put_u32(bytes_, header.height);
  put_u32(bytes_, header.width);
  put_u32(bytes_, header.frames);
}

std::uint64_t BlobWriter::append(const Tensor& frame) {
  if (frame.size() != static_cast<std::size_t>(header_.height) * header_.width) {
    throw DimensionError("blob: frame " + shape_str(frame.shape()) + " does not match header " +
                         std::to_string(header_.height) + "x" + std::to_string(header_.width));
  }
  const std::uint64_t offset = bytes_.size();
  for (float v : frame.flat()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(bytes_, bits);
  }
  return offset;
}

void BlobWriter::close() { write_binary_file(path_, bytes_); }

std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

namespace {

BlobHeader parse_blob_header(const std::vector<char>& bytes, const std::string& what) {
  if (bytes.size() < kBlobHeaderBytes || std::memcmp(bytes.data(), kBlobMagic, 4) != 0) {
    throw DataError(what + ": not a frame blob (bad magic)");
  }
  BlobHeader h;
  h.version = get_u32(bytes.data() + 4);
  h.height = get_u32(bytes.data() + 8);
  h.width = get_u32(bytes.data() + 12);
  h.frames = get_u32(bytes.data() + 16);
  if (h.version != 1) throw DataError(what + ": unsupported blob version " + std::to_string(h.version));
  return h;
}

}  // namespace

BlobHeader read_blob_header(const std::string& path) { return parse_blob_header(read_file_bytes(path), path); }

Tensor read_blob_frame(const std::vector<char>& blob, std::uint64_t offset, int height, int width) {
  const std::uint64_t n = static_cast<std::uint64_t>(height) * width;
  if (offset < kBlobHeaderBytes || offset + 4 * n > blob.size()) {
    throw DataError("blob: frame offset " + std::to_string(offset) + " outside file of " +
                    std::to_string(blob.size()) + " bytes");
  }
  Tensor t({static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(blob.data() + offset + 4 * i);
    std::memcpy(&t[i], &bits, 4);
  }
  return t;
}

void write_dataset(const Dataset& ds, const std::string& base) {
  BlobWriter blob(base + ".mmds", BlobHeader{1, static_cast<std::uint32_t>(ds.height),
                                             static_cast<std::uint32_t>(ds.width),
                                             static_cast<std::uint32_t>(ds.frames)});
  std::ostringstream m;
  m << "# stage=" << to_string(ds.stage) << " frames=" << ds.frames << " h=" << ds.height << " w=" << ds.width
    << " records=" << ds.records.size() << " kept=" << ds.kept_count() << " dropped=" << ds.dropped_count()
    << "\n";
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const PairRecord& r = ds.records[i];
    if (static_cast<int>(r.target.size()) != ds.frames) {
      throw DataError("write_dataset: record " + std::to_string(i) + " has " + std::to_string(r.target.size()) +
                      " frames, dataset has " + std::to_string(ds.frames));
    }
    const std::uint64_t ref_off = blob.append(r.ref.pixels);
    std::vector<std::uint64_t> offs;
    for (const RenderedFrame& f : r.target) offs.push_back(blob.append(f.pixels));
    std::vector<double> z(r.identity.z.flat().begin(), r.identity.z.flat().end());
    m << "idx=" << i << " id=" << r.identity_index << " stage=" << to_string(ds.stage) << " kind=" << to_string(r.kind)
      << " tag=" << static_cast<int>(r.identity.tag) << " z=" << fmt_doubles(z) << " ref_pose=" << fmt_pose(r.ref_pose)
      << " traj=" << join(r.trajectory, ';', fmt_pose) << " cos_sim=" << fmt_double(r.cos_sim)
      << " kept=" << (r.kept ? "true" : "false") << " ref_offset=" << ref_off
      << " target_offset=" << join(offs, ';', [](std::uint64_t o) { return std::to_string(o); })
      << " ref_lm=" << fmt_landmarks(r.ref.landmarks) << " ref_region=" << fmt_rect(r.ref.face_region)
      << " lm=" << join(r.target, ';', [](const RenderedFrame& f) { return fmt_landmarks(f.landmarks); })
      << " region=" << join(r.target, ';', [](const RenderedFrame& f) { return fmt_rect(f.face_region); })
      << " prompt=" << join(r.prompt, ',', [](int t) { return std::to_string(t); })
      << " subject=" << r.subject_index << " reason=" << (r.drop_reason.empty() ? "-" : r.drop_reason) << "\n";
  }
  blob.close();
  write_text_file(base + ".manifest", m.str());
}

Dataset read_dataset(const std::string& base) {
  const std::vector<char> blob = read_file_bytes(base + ".mmds");
  const BlobHeader h = parse_blob_header(blob, base + ".mmds");
  const std::string text = read_text_file(base + ".manifest");
  Dataset ds;
  ds.height = static_cast<int>(h.height);
  ds.width = static_cast<int>(h.width);
  ds.frames = static_cast<int>(h.frames);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const KvRecord hdr = parse_kv_line(std::string_view(line).substr(1), line_no);
      ds.stage = data_stage_from_string(kv_get(hdr, "stage", line_no));
      if (kv_int(hdr, "frames", line_no) != ds.frames || kv_int(hdr, "h", line_no) != ds.height ||
          kv_int(hdr, "w", line_no) != ds.width) {
        throw DataError("line " + std::to_string(line_no) + ": manifest header disagrees with blob header");
      }
      header_seen = true;
      continue;
    }
    if (!header_seen) throw DataError("line " + std::to_string(line_no) + ": record before manifest header");
    const KvRecord kv = parse_kv_line(line, line_no);
    PairRecord r;
    r.identity_index = static_cast<std::size_t>(kv_int(kv, "id", line_no));
    r.kind = pair_kind_from_string(kv_get(kv, "kind", line_no));
    const long long tag = kv_int(kv, "tag", line_no);
    if (tag < 0 || tag > 2) throw DataError("line " + std::to_string(line_no) + ": bad tag");
    r.identity.tag = static_cast<Demographic>(tag);
    const auto zs = split(kv_get(kv, "z", line_no), ',');
    if (zs.size() != kIdentityDim) throw DataError("line " + std::to_string(line_no) + ": bad identity latent");
    r.identity.z = Tensor({kIdentityDim});
    for (std::size_t k = 0; k < kIdentityDim; ++k) r.identity.z[k] = static_cast<float>(parse_double(zs[k], line_no));
    r.ref_pose = parse_pose(kv_get(kv, "ref_pose", line_no), line_no);
    for (const auto& s : split(kv_get(kv, "traj", line_no), ';')) r.trajectory.push_back(parse_pose(s, line_no));
    r.cos_sim = kv_double(kv, "cos_sim", line_no);
    const std::string& kept = kv_get(kv, "kept", line_no);
    if (kept != "true" && kept != "false") throw DataError("line " + std::to_string(line_no) + ": bad kept flag");
    r.kept = kept == "true";
    const std::string& reason = kv_get(kv, "reason", line_no);
    r.drop_reason = reason == "-" ? "" : reason;

    r.ref.pixels = read_blob_frame(blob, static_cast<std::uint64_t>(kv_int(kv, "ref_offset", line_no)), ds.height,
                                   ds.width);
    r.ref.landmarks = parse_landmarks(kv_get(kv, "ref_lm", line_no), line_no);
    r.ref.face_region = parse_rect(kv_get(kv, "ref_region", line_no), line_no);
    const auto offs = split(kv_get(kv, "target_offset", line_no), ';');
    const auto lms = split(kv_get(kv, "lm", line_no), ';');
    const auto regions = split(kv_get(kv, "region", line_no), ';');
    if (static_cast<int>(offs.size()) != ds.frames || lms.size() != offs.size() || regions.size() != offs.size() ||
        r.trajectory.size() != offs.size()) {
      throw DataError("line " + std::to_string(line_no) + ": frame count disagrees with header F=" +
                      std::to_string(ds.frames));
    }
    for (std::size_t f = 0; f < offs.size(); ++f) {
      RenderedFrame fr;
      fr.pixels = read_blob_frame(blob, static_cast<std::uint64_t>(parse_int(offs[f], line_no)), ds.height, ds.width);
      fr.landmarks = parse_landmarks(lms[f], line_no);
      fr.face_region = parse_rect(regions[f], line_no);
      r.target.push_back(std::move(fr));
    }
    for (const auto& s : split(kv_get(kv, "prompt", line_no), ',')) {
      r.prompt.push_back(static_cast<int>(parse_int(s, line_no)));
    }
    r.subject_index = static_cast<int>(kv_int(kv, "subject", line_no));
    ds.records.push_back(std::move(r));
  }
  if (!header_seen) throw DataError(base + ".manifest: missing header line");
  return ds;
}

}  // namespace facecond
