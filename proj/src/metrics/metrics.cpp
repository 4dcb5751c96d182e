#include "facecond/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "facecond/numerics/kernels.hpp"
#include "facecond/textio.hpp"

namespace facecond {

void LandmarkSet::validate() const {
  if (frame_w <= 0 || frame_h <= 0) throw DataError("landmarks: frame size must be positive");
  for (const Point& p : points) {
    if (!(p.x >= 0.0 && p.x <= frame_w && p.y >= 0.0 && p.y <= frame_h)) {
      throw DataError("landmarks: point (" + fmt_double(p.x) + ", " + fmt_double(p.y) + ") outside " +
                      std::to_string(frame_w) + "x" + std::to_string(frame_h) + " frame");
    }
  }
}

bool VideoEval::has_motion() const {
  if (frame_landmarks.size() != frame_embeddings.size() || frame_landmarks.empty()) return false;
  for (const auto& lm : frame_landmarks) {
    if (!lm) return false;
  }
  return true;
}

void VideoEval::validate() const {
  if (frame_embeddings.empty()) throw EmptyInputError("clip '" + clip + "': no frames");
  if (reference_embeddings.empty()) throw EmptyInputError("clip '" + clip + "': no reference embedding");
  if (frame_landmarks.size() != frame_embeddings.size()) {
    throw DataError("clip '" + clip + "': " + std::to_string(frame_landmarks.size()) + " landmark entries for " +
                    std::to_string(frame_embeddings.size()) + " frames");
  }
  const std::size_t dim = reference_embeddings.front().size();
  for (const auto* group : {&frame_embeddings, &reference_embeddings}) {
    for (const Tensor& e : *group) {
      if (e.size() != dim) throw DimensionError("clip '" + clip + "': embedding widths differ");
    }
  }
}

Tensor pooled_reference(const VideoEval& e) {
  if (e.reference_embeddings.empty()) throw EmptyInputError("clip '" + e.clip + "': no reference embedding");
  const std::size_t dim = e.reference_embeddings.front().size();
  std::vector<double> acc(dim, 0.0);
  for (const Tensor& r : e.reference_embeddings) {
    if (r.size() != dim) throw DimensionError("reference embeddings of different widths");
    double n = 0.0;
    for (float v : r.flat()) n += static_cast<double>(v) * v;
    if (n == 0.0) throw DegenerateInputError("clip '" + e.clip + "': zero-norm reference embedding");
    n = std::sqrt(n);
    for (std::size_t i = 0; i < dim; ++i) acc[i] += r[i] / n;
  }
  double n = 0.0;
  for (double v : acc) n += v * v;
  if (n == 0.0) throw DegenerateInputError("clip '" + e.clip + "': reference embeddings cancel out");
  n = std::sqrt(n);
  Tensor out({dim});
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / n);
  return out;
}

std::vector<double> frame_similarities(const VideoEval& e) {
  if (e.frame_embeddings.empty()) throw EmptyInputError("clip '" + e.clip + "': no frames");
  const Tensor ref = pooled_reference(e);
  std::vector<double> out;
  for (const Tensor& f : e.frame_embeddings) out.push_back(cosine_similarity(f, ref));
  return out;
}

double id_similarity_avg(const VideoEval& e) {
  const std::vector<double> s = frame_similarities(e);
  double sum = 0.0;
  for (double v : s) sum += v;
  return sum / static_cast<double>(s.size());
}

std::vector<std::size_t> decay_sample_indices(std::size_t frames) {
  if (frames < 2) throw DataError("similarity decay needs at least 2 frames, got " + std::to_string(frames));
  const std::size_t k = std::min<std::size_t>(8, frames);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < k; ++i) idx.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(i) * (frames - 1) / (k - 1))));
  return idx;
}

double similarity_decay(const VideoEval& e) {
  const std::vector<std::size_t> idx = decay_sample_indices(e.frames());
  const std::vector<double> s = frame_similarities(e);
  return std::max(0.0, s[idx.front()] - s[idx.back()]);
}

std::array<Point, kLandmarks> align_landmarks(const LandmarkSet& lm) {
  double x0 = lm.points[0].x, x1 = x0, y0 = lm.points[0].y, y1 = y0;
  for (const Point& p : lm.points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double diag = std::hypot(x1 - x0, y1 - y0);
  if (diag == 0.0) throw DegenerateInputError("landmarks: all points coincide");
  std::array<Point, kLandmarks> out{};
  for (std::size_t i = 0; i < kLandmarks; ++i) {
    double cx = 0.0, cy = 0.0;
    for (std::size_t j = 0; j < kLandmarks; ++j) {
      cx += lm.points[i].x - lm.points[j].x;
      cy += lm.points[i].y - lm.points[j].y;
    }
    out[i] = Point{cx / kLandmarks / diag, cy / kLandmarks / diag};
  }
  return out;
}

double fm_ref(const VideoEval& e, const LandmarkSet& ref) {
  if (!e.has_motion()) throw DataError("fm_ref: clip '" + e.clip + "' lacks landmarks");
  const auto r = align_landmarks(ref);
  double total = 0.0;
  for (const auto& lm : e.frame_landmarks) {
    const auto a = align_landmarks(*lm);
    double s = 0.0;
    for (std::size_t k = 0; k < kLandmarks; ++k) s += std::hypot(a[k].x - r[k].x, a[k].y - r[k].y);
    total += s / kLandmarks;
  }
  return total / static_cast<double>(e.frames());
}

namespace {

std::vector<double> inter_frame_motion(const VideoEval& e) {
  if (e.frames() < 2) throw DataError("fm_inter needs at least 2 frames, got " + std::to_string(e.frames()));
  if (!e.has_motion()) throw DataError("fm_inter: clip '" + e.clip + "' lacks landmarks");
  std::vector<double> out;
  for (std::size_t f = 1; f < e.frames(); ++f) {
    const LandmarkSet& a = *e.frame_landmarks[f - 1];
    const LandmarkSet& b = *e.frame_landmarks[f];
    double s = 0.0;
    for (std::size_t k = 0; k < kLandmarks; ++k) {
      s += std::hypot(b.points[k].x / b.frame_w - a.points[k].x / a.frame_w,
                      b.points[k].y / b.frame_h - a.points[k].y / a.frame_h);
    }
    out.push_back(s / kLandmarks);
  }
  return out;
}

}  // namespace

double fm_inter(const VideoEval& e) {
  const std::vector<double> m = inter_frame_motion(e);
  return *std::max_element(m.begin(), m.end());
}

double fm_inter_mean(const VideoEval& e) {
  const std::vector<double> m = inter_frame_motion(e);
  double s = 0.0;
  for (double v : m) s += v;
  return s / static_cast<double>(m.size());
}

SuccessRates success_rates(const std::vector<VideoEval>& evals, const SuccessThresholds& th) {
  if (evals.empty()) throw EmptyInputError("success_rates: no videos");
  SuccessRates r;
  r.videos = evals.size();
  std::size_t recognized = 0, identity = 0, motion_pass = 0, motion_n = 0;
  for (const VideoEval& e : evals) {
    bool any = false;
    for (const Tensor& f : e.frame_embeddings) {
      double n = 0.0;
      for (float v : f.flat()) n += static_cast<double>(v) * v;
      any = any || (std::isfinite(n) && n > 0.0);
    }
    recognized += any ? 1 : 0;
    if (any) {
      try {
        identity += id_similarity_avg(e) >= th.theta_id ? 1 : 0;
      } catch (const DegenerateInputError&) {
      }
    }
    if (e.has_motion() && e.frames() >= 2) {
      ++motion_n;
      motion_pass += fm_inter(e) >= th.theta_motion ? 1 : 0;
    }
  }
  const double n = static_cast<double>(evals.size());
  r.face_recognized = recognized / n;
  r.identity_check = identity / n;
  if (motion_n > 0) r.motion = static_cast<double>(motion_pass) / motion_n;
  return r;
}

// ---- text form ----

namespace {

std::optional<LandmarkSet> parse_lm(const std::string& s, int w, int h, std::size_t line_no) {
  if (s == "none") return std::nullopt;
  const auto f = split(s, ',');
  if (f.size() != 2 * kLandmarks) {
    throw DataError("line " + std::to_string(line_no) + ": expected 10 landmark coordinates, got " +
                    std::to_string(f.size()));
  }
  LandmarkSet lm;
  lm.frame_w = w;
  lm.frame_h = h;
  for (std::size_t k = 0; k < kLandmarks; ++k) {
    lm.points[k] = Point{parse_double(f[2 * k], line_no), parse_double(f[2 * k + 1], line_no)};
  }
  try {
    lm.validate();
  } catch (const DataError& e) {
    throw DataError("line " + std::to_string(line_no) + ": " + e.what());
  }
  return lm;
}

std::string fmt_lm(const std::optional<LandmarkSet>& lm) {
  if (!lm) return "none";
  std::vector<double> v;
  for (const Point& p : lm->points) {
    v.push_back(p.x);
    v.push_back(p.y);
  }
  return fmt_doubles(v);
}

std::string fmt_emb(const Tensor& t) {
  std::vector<double> v(t.flat().begin(), t.flat().end());
  return fmt_doubles(v);
}

}  // namespace

std::vector<VideoEval> parse_video_evals(const std::string& text) {
  std::vector<VideoEval> out = parse_eval_records(text, EvalRole::AsWritten);
  for (const VideoEval& e : out) e.validate();
  return out;
}

std::vector<VideoEval> join_evals(std::vector<VideoEval> frames, const std::vector<VideoEval>& references) {
  std::map<std::string, const VideoEval*> refs;
  for (const VideoEval& r : references) refs.emplace(r.clip, &r);
  for (VideoEval& e : frames) {
    auto it = refs.find(e.clip);
    if (it == refs.end()) throw DataError("clip '" + e.clip + "' has no reference record");
    e.reference_embeddings = it->second->reference_embeddings;
    e.reference_landmarks = it->second->reference_landmarks;
    e.validate();
  }
  return frames;
}

std::vector<VideoEval> parse_eval_records(const std::string& text, EvalRole forced) {
  std::vector<VideoEval> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::pair<int, int>> frame_size;  // per clip, from the first line
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const KvRecord kv = parse_kv_line(line, line_no);
    const std::string& clip = kv_get(kv, "clip", line_no);
    const std::string role = forced == EvalRole::Frame       ? "frame"
                             : forced == EvalRole::Reference ? "ref"
                                                             : kv_get(kv, "role", line_no);
    const int w = static_cast<int>(kv_int(kv, "w", line_no));
    const int h = static_cast<int>(kv_int(kv, "h", line_no));
    auto [it, fresh] = index.emplace(clip, out.size());
    if (fresh) {
      out.push_back(VideoEval{});
      out.back().clip = clip;
      frame_size.emplace_back(w, h);
    }
    VideoEval& e = out[it->second];
    if (frame_size[it->second] != std::make_pair(w, h)) {
      throw DataError("line " + std::to_string(line_no) + ": frame size changes within clip '" + clip + "'");
    }
    const auto parts = split(kv_get(kv, "emb", line_no), ',');
    if (parts.empty()) throw DataError("line " + std::to_string(line_no) + ": empty embedding");
    Tensor emb({parts.size()});
    for (std::size_t i = 0; i < parts.size(); ++i) emb[i] = static_cast<float>(parse_double(parts[i], line_no));
    const std::optional<LandmarkSet> lm = parse_lm(kv_get(kv, "lm", line_no), w, h, line_no);
    if (role == "frame") {
      const long long f = kv_int(kv, "frame", line_no);
      if (f != static_cast<long long>(e.frames())) {
        throw DataError("line " + std::to_string(line_no) + ": clip '" + clip + "' expected frame " +
                        std::to_string(e.frames()) + ", got " + std::to_string(f));
      }
      e.frame_embeddings.push_back(std::move(emb));
      e.frame_landmarks.push_back(lm);
    } else if (role == "ref") {
      e.reference_embeddings.push_back(std::move(emb));
      if (lm && !e.reference_landmarks) e.reference_landmarks = lm;
    } else {
      throw DataError("line " + std::to_string(line_no) + ": unknown role '" + role + "'");
    }
  }
  return out;
}

std::string format_video_evals(const std::vector<VideoEval>& evals) {
  std::ostringstream o;
  for (const VideoEval& e : evals) {
    const int w = e.reference_landmarks ? e.reference_landmarks->frame_w : 0;
    const int h = e.reference_landmarks ? e.reference_landmarks->frame_h : 0;
    auto size_of = [&](const std::optional<LandmarkSet>& lm) {
      return lm ? std::make_pair(lm->frame_w, lm->frame_h) : std::make_pair(w, h);
    };
    for (const Tensor& r : e.reference_embeddings) {
      const auto [rw, rh] = size_of(e.reference_landmarks);
      o << "clip=" << e.clip << " role=ref frame=0 w=" << rw << " h=" << rh << " emb=" << fmt_emb(r)
        << " lm=" << fmt_lm(&r == &e.reference_embeddings.front() ? e.reference_landmarks : std::nullopt) << "\n";
    }
    for (std::size_t f = 0; f < e.frames(); ++f) {
      const auto [fw, fh] = size_of(e.frame_landmarks[f]);
      o << "clip=" << e.clip << " role=frame frame=" << f << " w=" << fw << " h=" << fh
        << " emb=" << fmt_emb(e.frame_embeddings[f]) << " lm=" << fmt_lm(e.frame_landmarks[f]) << "\n";
    }
  }
  return o.str();
}

EvalReport evaluate(const std::vector<VideoEval>& evals, const SuccessThresholds& th) {
  if (evals.empty()) throw EmptyInputError("evaluate: no clips");
  EvalReport r;
  for (const VideoEval& e : evals) {
    ClipMetrics m;
    m.clip = e.clip;
    m.id_similarity = id_similarity_avg(e);
    if (e.frames() >= 2) m.decay = similarity_decay(e);
    if (e.has_motion()) {
      if (e.reference_landmarks) m.fm_ref = fm_ref(e, *e.reference_landmarks);
      if (e.frames() >= 2) {
        m.fm_inter = fm_inter(e);
        m.fm_inter_mean = fm_inter_mean(e);
      }
    }
    r.mean_id_similarity += m.id_similarity / static_cast<double>(evals.size());
    r.clips.push_back(std::move(m));
  }
  r.rates = success_rates(evals, th);
  return r;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? fmt_double(*v) : "n/a"; }

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string opt4(const std::optional<double>& v) { return v ? fixed4(*v) : "n/a"; }

}  // namespace

std::string report_text(const EvalReport& r) {
  std::ostringstream o;
  o << "clip                 id_sim   decay    fm_ref   fm_inter fm_inter_mean\n";
  for (const ClipMetrics& m : r.clips) {
    char name[32];
    std::snprintf(name, sizeof name, "%-20.20s", m.clip.c_str());
    o << name << " " << fixed4(m.id_similarity) << "   " << opt4(m.decay) << "   " << opt4(m.fm_ref) << "   "
      << opt4(m.fm_inter) << "   " << opt4(m.fm_inter_mean) << "\n";
  }
  o << "\nvideos            " << r.rates.videos << "\n";
  o << "mean id_sim       " << fixed4(r.mean_id_similarity) << "\n";
  o << "face recognized   " << fixed4(r.rates.face_recognized) << "\n";
  o << "identity check    " << fixed4(r.rates.identity_check) << "\n";
  o << "motion            " << opt4(r.rates.motion) << "\n";
  o << "text alignment    n/a\n";
  return o.str();
}

std::string report_kv(const EvalReport& r) {
  std::ostringstream o;
  for (const ClipMetrics& m : r.clips) {
    o << "clip=" << m.clip << " id_sim=" << fmt_double(m.id_similarity) << " decay=" << opt(m.decay)
      << " fm_ref=" << opt(m.fm_ref) << " fm_inter=" << opt(m.fm_inter) << " fm_inter_mean=" << opt(m.fm_inter_mean)
      << "\n";
  }
  o << "summary=1 videos=" << r.rates.videos << " mean_id_sim=" << fmt_double(r.mean_id_similarity)
    << " face_recognized=" << fmt_double(r.rates.face_recognized)
    << " identity_check=" << fmt_double(r.rates.identity_check) << " motion=" << opt(r.rates.motion)
    << " text_alignment=n/a\n";
  return o.str();
}

}  // namespace facecond
