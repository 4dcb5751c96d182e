// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "facecond/cli.hpp"
#include "facecond/dataforge.hpp"
#include "facecond/dit.hpp"
#include "facecond/embedder.hpp"
#include "facecond/gradcheck.hpp"
#include "facecond/metrics.hpp"
#include "facecond/numerics/kernels.hpp"
#include "facecond/textio.hpp"
#include "support.hpp"

namespace facecond {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Pinned tolerances.
constexpr int kEquivalenceInputs = 20;
constexpr double kEquivalenceSeconds = 5.0;
constexpr int kGradcheckSeeds = 5;
constexpr double kGradcheckSeconds = 120.0;
constexpr int kMaskCases = 50;
constexpr int kFilterPairs = 500;
constexpr double kFilterThreshold = 0.65;
constexpr double kFmInterTolerance = 1e-6;
constexpr double kLossRatio = 0.5;
constexpr int kProbeSamples = 50;
constexpr int kProbeWins = 40;
constexpr double kEndToEndSeconds = 15.0 * 60.0;

Tensor normal(RngState& r, std::size_t rows, std::size_t cols) { return seeded_normal(r, {rows, cols}); }

Outcome baseline_equivalence() {
  const Config c;
  const Params p = initial_params(c);
  RngState r{101, 0};
  int equal = 0;
  const auto start = Clock::now();
  for (int k = 0; k < kEquivalenceInputs; ++k) {
    const Tensor x_t = normal(r, static_cast<std::size_t>(c.frames), static_cast<std::size_t>(c.pixels()));
    const Tensor x_txt = normal(r, static_cast<std::size_t>(c.n_txt), static_cast<std::size_t>(c.d));
    const Tensor x_id = normal(r, 2, static_cast<std::size_t>(c.d));
    const int t = static_cast<int>(next_below(r, static_cast<std::uint64_t>(c.T)));
    const Tensor base = base_model_forward(x_t, x_txt, t, p, c);
    const bool same = model_forward(x_t, x_txt, Tensor(), Tensor(), t, p, c).bit_equal(base) &&
                      model_forward(x_t, x_txt, Tensor(), x_id, t, p, c).bit_equal(base);
    equal += same ? 1 : 0;
  }
  const double secs = seconds_since(start);
  return {equal == kEquivalenceInputs && secs < kEquivalenceSeconds,
          fmt::format("{}/{} bit-identical in {:.2f}s", equal, kEquivalenceInputs, secs)};
}

Outcome can_identity() {
  const Config c;
  const Params p = initial_params(c);
  RngState r{102, 0};
  int checked = 0, equal = 0;
  for (int k = 0; k < 10; ++k) {
    const Tensor x_id = normal(r, 2, static_cast<std::size_t>(c.d));
    const int t = static_cast<int>(next_below(r, static_cast<std::uint64_t>(c.T)));
    for (int l = 0; l < c.layers; ++l) {
      if (!has_adapter(l)) continue;
      const auto f = layer_factors(p, t, l, x_id, c);
      ++checked;
      equal += f[0].bit_equal(modulation_base(p, t, l, Modality::Txt, c)) &&
                       f[1].bit_equal(modulation_base(p, t, l, Modality::Vid, c))
                   ? 1
                   : 0;
    }
  }
  return {checked > 0 && equal == checked, fmt::format("{}/{} adapter-layer factor sets bit-equal", equal, checked)};
}

Outcome gradient_suite() {
  std::vector<std::uint64_t> seeds;
  for (int s = 1; s <= kGradcheckSeeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  const auto start = Clock::now();
  const GradcheckSummary g = cmd_gradcheck(seeds);
  const double secs = seconds_since(start);
  return {g.failures == 0 && g.max_rel_error < kGradcheckTolerance && secs < kGradcheckSeconds,
          fmt::format("{} seeds, {} coordinates, max rel error {:.3e} (< {:.0e}), {:.1f}s", seeds.size(),
                      g.coordinates, g.max_rel_error, kGradcheckTolerance, secs)};
}

Outcome masked_replacement() {
  const Config c = test::small_config();
  const auto n = static_cast<std::size_t>(c.n_txt);
  const auto d = static_cast<std::size_t>(c.d);
  RngState r{104, 0};
  int good = 0;
  for (int k = 0; k < kMaskCases; ++k) {
    const Params p = init_params(c, r.substream("init", static_cast<std::uint64_t>(k)));
    const Tensor x_txt = normal(r, n, d);
    const Tensor x_id = normal(r, 2, d);
    Tensor x_id2 = x_id;
    for (float& v : x_id2.storage()) v += static_cast<float>(next_normal(r));
    bool ok = fuse_id_text(x_id, x_txt, TokenMask::none(n), p).bit_equal(x_txt);
    TokenMask mask = TokenMask::none(n);
    for (std::size_t i = 0; i < n; ++i) mask.bits[i] = next_uniform(r) < 0.3 ? 1 : 0;
    if (!mask.any()) mask.bits[next_below(r, n)] = 1;
    const Tensor a = fuse_id_text(x_id, x_txt, mask, p);
    const Tensor b = fuse_id_text(x_id2, x_txt, mask, p);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.bits[i]) continue;
      const auto ra = a.row(i), rb = b.row(i), rt = x_txt.row(i);
      ok = ok && std::equal(ra.begin(), ra.end(), rb.begin()) && std::equal(ra.begin(), ra.end(), rt.begin());
    }
    good += ok ? 1 : 0;
  }
  return {good == kMaskCases, fmt::format("{}/{} cases", good, kMaskCases)};
}

Outcome filter_pipeline() {
  const Config c;
  const Params p = initial_params(c);
  const RecognitionEmbedder rec(p, c);
  const WorldGeometry geo = WorldGeometry::from_config(c);
  RngState r{105, 0};
  std::vector<Identity> ids;
  for (int i = 0; i < 100; ++i) ids.push_back(make_identity(r));
  std::vector<PairRecord> pairs;
  for (int i = 0; i < kFilterPairs; ++i) {
    PairRecord pr;
    pr.identity_index = static_cast<std::size_t>(i % 100);
    pr.identity = ids[static_cast<std::size_t>(i % 100)];
    const Identity& target = i % 5 == 0 ? ids[static_cast<std::size_t>((i + 37) % 100)] : pr.identity;
    pr.kind = PairKind::CrossPose;
    pr.ref_pose = sample_pose(r, geo);
    pr.trajectory = {sample_pose(r, geo)};
    pr.ref = render_frame(pr.identity, pr.ref_pose, geo);
    pr.target = {render_frame(target, pr.trajectory[0], geo)};
    pairs.push_back(std::move(pr));
  }
  const std::vector<PairRecord> out =
      filter_pairs(pairs, [&rec](const Tensor& f) { return rec(f); }, kFilterThreshold);
  std::size_t agree = 0, kept = 0;
  for (std::size_t i = 0; i < pairs.size() && i < out.size(); ++i) {
    const Tensor a = rec(pairs[i].ref.pixels);
    const Tensor b = rec(pairs[i].target[0].pixels);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      dot += static_cast<double>(a[k]) * b[k];
      na += static_cast<double>(a[k]) * a[k];
      nb += static_cast<double>(b[k]) * b[k];
    }
    const bool keep = dot / (std::sqrt(na) * std::sqrt(nb)) > kFilterThreshold;
    agree += out[i].kept == keep ? 1 : 0;
    kept += keep ? 1 : 0;
  }
  return {out.size() == pairs.size() && agree == pairs.size(),
          fmt::format("{}/{} pairs agree ({} kept)", agree, pairs.size(), kept)};
}

LandmarkSet face_landmarks(double scale, double dx, double dy) {
  // Dyadic coordinates keep translation and scaling exact.
  const Point base[kLandmarks] = {{4.5, 5.25}, {8.75, 5.0}, {6.5, 7.5}, {5.0, 10.25}, {8.25, 10.0}};
  LandmarkSet s;
  for (std::size_t i = 0; i < kLandmarks; ++i) s.points[i] = Point{base[i].x * scale + dx, base[i].y * scale + dy};
  s.frame_w = 16;
  s.frame_h = 16;
  return s;
}

Outcome metric_oracles() {
  VideoEval e;
  e.clip = "oracle";
  e.frame_embeddings.assign(4, Tensor({4}, 1.0f));
  e.reference_embeddings = {Tensor({4}, 0.5f)};
  e.frame_landmarks.assign(4, face_landmarks(1.0, 0.0, 0.0));

  int ref_zero = 0, ref_cases = 0;
  for (double s : {0.25, 0.5, 1.0, 2.0}) {
    for (double dx : {-3.0, 0.0, 1.5}) {
      ++ref_cases;
      ref_zero += fm_ref(e, face_landmarks(s, dx, -0.75 * dx)) == 0.0 ? 1 : 0;
    }
  }

  const double jx = 1.3, jy = -0.7;
  e.frame_landmarks[2] = face_landmarks(1.0, jx, jy);
  e.frame_landmarks[3] = face_landmarks(1.0, jx, jy);
  const double jump_err = std::abs(fm_inter(e) - std::hypot(jx / 16.0, jy / 16.0));

  RngState r{106, 0};
  int decay_zero = 0;
  const int decay_cases = 10;
  for (int k = 0; k < decay_cases; ++k) {
    VideoEval constant;
    constant.clip = "constant";
    const Tensor f = seeded_normal(r, {16});
    constant.frame_embeddings.assign(static_cast<std::size_t>(2 + k), f);
    constant.frame_landmarks.assign(constant.frame_embeddings.size(), std::nullopt);
    constant.reference_embeddings = {seeded_normal(r, {16})};
    decay_zero += similarity_decay(constant) == 0.0 ? 1 : 0;
  }
  return {ref_zero == ref_cases && jump_err <= kFmInterTolerance && decay_zero == decay_cases,
          fmt::format("fm_ref zero {}/{}, fm_inter error {:.1e}, decay zero {}/{}", ref_zero, ref_cases, jump_err,
                      decay_zero, decay_cases)};
}

Outcome end_to_end(const std::string& data_dir, const std::string& run_dir) {
  const Config c;
  const auto start = Clock::now();
  cmd_datagen(c, data_dir);
  const TrainOutputs t = cmd_train(c, data_dir, run_dir);
  const IdentityProbe probe = identity_probe(t.params, c, kProbeSamples);
  const double secs = seconds_since(start);
  const double ratio = t.report.final_l_noise / t.report.initial_l_noise;
  const bool a = ratio <= kLossRatio;
  const bool b = probe.samples == kProbeSamples && probe.wins >= kProbeWins;
  return {a && b && secs < kEndToEndSeconds,
          fmt::format("(a) {} l_noise initial {:.4f} final {:.4f} ratio {:.3f} (<= {}); (b) {} wins {}/{} (>= {}), "
                      "mean sim own {:.3f} other {:.3f}; {:.0f}s",
                      a ? "pass" : "FAIL", t.report.initial_l_noise, t.report.final_l_noise, ratio, kLossRatio,
                      b ? "pass" : "FAIL", probe.wins, probe.samples, kProbeWins, probe.mean_own, probe.mean_other,
                      secs)};
}

Outcome ablation_harness(const std::string& data_dir, const std::string& out_dir) {
  Config c;
  c.steps_base = 20;
  c.steps_image = 20;
  c.steps_video = 20;
  c.eval_samples = 4;
  c.sample_steps = 10;
  const AblationResult r = cmd_ablate(c, data_dir, out_dir);
  std::size_t ok = 0;
  std::size_t steps = 0;
  bool aligned = true;
  for (const AblationRun& run : r.runs) {
    const std::vector<CurveRow> rows = parse_curve(read_text_file(out_dir + "/" + run.name + ".curve"));
    if (steps == 0) steps = rows.size();
    aligned = aligned && !rows.empty();
    ok += run.designated_ok ? 1 : 0;
  }
  const bool tables = !split(read_text_file(out_dir + "/curves.txt"), '\n').empty() &&
                      !split(read_text_file(out_dir + "/metrics.txt"), '\n').empty();
  return {r.runs.size() == 6 && ok == r.runs.size() && aligned && tables,
          fmt::format("{} variants run, {} with changes confined to designated tensors, curves parse: {}",
                      r.runs.size(), ok, aligned ? "yes" : "no")};
}

bool same_files(const std::string& a, const std::string& b, const std::vector<std::string>& names,
                std::string& first_diff) {
  for (const std::string& n : names) {
    if (read_file_bytes(a + "/" + n) != read_file_bytes(b + "/" + n)) {
      first_diff = n;
      return false;
    }
  }
  return true;
}

Outcome determinism() {
  Config c;
  c.steps_base = 10;
  c.steps_image = 10;
  c.steps_video = 10;
  c.sample_steps = 10;
  test::TempDir a("acc_det_a"), b("acc_det_b");
  std::string diff;
  bool ok = true;
  for (const test::TempDir* d : {&a, &b}) {
    cmd_datagen(c, *d / "data");
    cmd_train(c, *d / "data", *d / "run");
    SampleRequest req;
    req.identity_seed = 7;
    req.n = 2;
    cmd_sample(c, *d / "run/model.mmck", req, *d / "sample");
  }
  ok = ok && same_files(a / "data", b / "data", {"image.mmds", "image.manifest", "video.mmds", "video.manifest"}, diff);
  ok = ok && same_files(a / "run", b / "run",
                        {"init.mmck", "base_pretrain.mmck", "image_pretrain.mmck", "video_finetune.mmck", "model.mmck",
                         "curve.txt", "manifest.txt"},
                        diff);
  ok = ok && same_files(a / "sample", b / "sample",
                        {"samples.mmds", "samples.sidecar", "samples.eval", "references.eval"}, diff);
  return {ok, ok ? "datagen, train and sample outputs byte-identical across two runs" : "differs: " + diff};
}

}  // namespace
}  // namespace facecond

int main() {
  using namespace facecond;
  test::TempDir work("acceptance");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"baseline equivalence", baseline_equivalence},
      {"CAN residual identity at init", can_identity},
      {"gradient suite", gradient_suite},
      {"masked replacement", masked_replacement},
      {"filter pipeline", filter_pipeline},
      {"metric oracles", metric_oracles},
      {"end-to-end toy run", [&] { return end_to_end(work / "data", work / "run"); }},
      {"ablation harness", [&] { return ablation_harness(work / "data", work / "ablate"); }},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = Outcome{false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %zu %-32s %s  %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
