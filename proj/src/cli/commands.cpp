#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "facecond/cli.hpp"
#include "facecond/dit.hpp"
#include "facecond/gradcheck.hpp"
#include "facecond/numerics/kernels.hpp"
#include "facecond/textio.hpp"

namespace facecond {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const DegenerateInputError*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitOther;
}

RngState seed_stream(const Config& c, std::string_view label) { return RngState{c.seed, 0}.substream(label); }

Params initial_params(const Config& c) { return init_params(c, seed_stream(c, "init")); }

NoiseSchedule sampling_schedule(const Config& c) {
  const NoiseSchedule s = NoiseSchedule::from_config(c);
  return c.sample_steps > 0 && c.sample_steps < c.T ? s.respaced(c.sample_steps) : s;
}

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

Tensor frame_of(const Tensor& clip, std::size_t f, const Config& c) {
  const auto row = clip.row(f);
  return Tensor({static_cast<std::size_t>(c.frame_h), static_cast<std::size_t>(c.frame_w)},
                std::vector<float>(row.begin(), row.end()));
}

LandmarkSet landmark_set(const Landmarks& lm, const Config& c) {
  LandmarkSet s;
  s.points = lm;
  s.frame_w = c.frame_w;
  s.frame_h = c.frame_h;
  return s;
}

RecognitionFn recognition_fn(const RecognitionEmbedder& rec) {
  return [&rec](const Tensor& frame) { return rec(frame); };
}

}  // namespace

// ---- datagen ----

std::string DatagenSummary::text() const {
  std::ostringstream o;
  o << "image kept=" << image_kept << " dropped=" << image_dropped << "\n";
  o << "video kept=" << video_kept << " dropped=" << video_dropped << "\n";
  return o.str();
}

std::string dataset_base(const std::string& dir, DataStage stage) { return join_path(dir, to_string(stage)); }

DatagenSummary cmd_datagen(const Config& c, const std::string& out_dir) {
  c.validate();
  const Params params = initial_params(c);
  const RecognitionEmbedder rec(params, c);
  DatasetOptions opt;
  opt.threshold = c.filter_threshold;
  const Dataset image =
      make_dataset(c.n_ids, c.per_id, DataStage::Image, seed_stream(c, "data.image"), c, recognition_fn(rec), opt);
  const Dataset video = make_dataset(c.video_n_ids, c.video_per_id, DataStage::Video, seed_stream(c, "data.video"),
                                     c, recognition_fn(rec), opt);
  ensure_dir(out_dir);
  write_dataset(image, dataset_base(out_dir, DataStage::Image));
  write_dataset(video, dataset_base(out_dir, DataStage::Video));
  return DatagenSummary{image.kept_count(), image.dropped_count(), video.kept_count(), video.dropped_count()};
}

// ---- train ----

std::string format_curve(const TrainReport& r) {
  std::ostringstream o;
  int global = 0;
  for (const std::string& stage : r.stages_run) {
    o << "# stage=" << stage << " first=" << global << "\n";
    for (const CurvePoint& p : r.curve) {
      if (to_string(p.stage) != stage) continue;
      o << global++ << " " << fmt_double(p.loss.l_noise) << " " << fmt_double(p.loss.l_id) << " "
        << fmt_double(p.loss.total) << "\n";
    }
  }
  return o.str();
}

std::vector<CurveRow> parse_curve(const std::string& text) {
  std::vector<CurveRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, ' ');
    if (f.size() != 4) {
      throw DataError("curve line " + std::to_string(line_no) + ": expected 4 fields, got " + std::to_string(f.size()));
    }
    CurveRow r{static_cast<int>(parse_int(f[0], line_no)), parse_double(f[1], line_no), parse_double(f[2], line_no),
               parse_double(f[3], line_no)};
    if (!rows.empty() && r.step != rows.back().step + 1) {
      throw DataError("curve line " + std::to_string(line_no) + ": step " + std::to_string(r.step) + " follows " +
                      std::to_string(rows.back().step));
    }
    rows.push_back(r);
  }
  return rows;
}

TrainData load_train_data(const Config& c, const std::string& data_dir, const Params& params) {
  const Dataset image = read_dataset(dataset_base(data_dir, DataStage::Image));
  const Dataset video = read_dataset(dataset_base(data_dir, DataStage::Video));
  auto check = [&](const Dataset& ds, DataStage want, int frames) {
    if (ds.stage != want || ds.frames != frames || ds.height != c.frame_h || ds.width != c.frame_w) {
      throw DataError("stage/data mismatch: " + to_string(want) + " dataset holds " + to_string(ds.stage) + " " +
                      std::to_string(ds.frames) + "x" + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                      ", config needs " + std::to_string(frames) + "x" + std::to_string(c.frame_h) + "x" +
                      std::to_string(c.frame_w));
    }
  };
  check(image, DataStage::Image, 1);
  check(video, DataStage::Video, c.frames);
  return make_train_data(image, video, RecognitionEmbedder(params, c), c);
}

namespace {

CheckpointStage checkpoint_stage(Stage s) {
  switch (s) {
    case Stage::BasePretrain: return CheckpointStage::BasePretrain;
    case Stage::ImagePretrain: return CheckpointStage::ImagePretrain;
    case Stage::VideoFinetune: return CheckpointStage::VideoFinetune;
  }
  return CheckpointStage::Init;
}

}  // namespace

TrainOutputs cmd_train(const Config& c, const std::string& data_dir, const std::string& out_dir) {
  c.validate();
  TrainOutputs out;
  out.params = initial_params(c);
  const TrainData data = load_train_data(c, data_dir, out.params);
  ensure_dir(out_dir);
  save_checkpoint(join_path(out_dir, "init.mmck"), Checkpoint{c.architecture_hash(), CheckpointStage::Init, 0, out.params});

  std::uint64_t total_steps = 0;
  CheckpointStage last = CheckpointStage::Init;
  out.report = run_training(out.params, data, c, [&](Stage s, int steps, const Params& p) {
    total_steps += static_cast<std::uint64_t>(steps);
    last = checkpoint_stage(s);
    save_checkpoint(join_path(out_dir, to_string(s) + ".mmck"), Checkpoint{c.architecture_hash(), last, total_steps, p});
  });
  save_checkpoint(join_path(out_dir, "model.mmck"), Checkpoint{c.architecture_hash(), last, total_steps, out.params});
  write_text_file(join_path(out_dir, "curve.txt"), format_curve(out.report));
  out.manifest = run_manifest(c, out.report,
                              {{"image_samples", std::to_string(data.image.size())},
                               {"video_samples", std::to_string(data.video.size())},
                               {"total_steps", std::to_string(total_steps)}});
  write_text_file(join_path(out_dir, "manifest.txt"), out.manifest);
  return out;
}

// ---- sample ----

namespace {

std::string eval_line(const std::string& clip, const char* role, std::size_t frame, const Tensor& emb,
                      const std::optional<LandmarkSet>& lm, const Config& c) {
  std::ostringstream o;
  o << "clip=" << clip << " role=" << role << " frame=" << frame << " w=" << c.frame_w << " h=" << c.frame_h
    << " emb=" << fmt_doubles(std::vector<double>(emb.flat().begin(), emb.flat().end())) << " lm=";
  if (lm) {
    std::vector<double> v;
    for (const Point& p : lm->points) {
      v.push_back(p.x);
      v.push_back(p.y);
    }
    o << fmt_doubles(v);
  } else {
    o << "none";
  }
  o << "\n";
  return o.str();
}

}  // namespace

void cmd_sample(const Config& c, const std::string& checkpoint_path, const SampleRequest& req,
                const std::string& out_dir) {
  c.validate();
  if (req.n < 0) throw ConfigError("sample: n must be >= 0");
  if (req.identity_seed.has_value() == !req.reference_path.empty()) {
    throw ConfigError("sample: give exactly one of an identity seed or a reference file");
  }
  const Checkpoint ck = load_checkpoint(checkpoint_path, c);
  const Params& params = ck.params;
  const RecognitionEmbedder rec(params, c);

  Tensor reference;
  std::optional<LandmarkSet> ref_landmarks;
  Demographic tag = Demographic::Person;
  std::string source;
  if (req.identity_seed) {
    RngState r = RngState{*req.identity_seed, 0}.substream("identity");
    const Identity id = make_identity(r);
    const RenderedFrame f = render_frame(id, Pose{}, WorldGeometry::from_config(c));
    reference = f.pixels;
    ref_landmarks = landmark_set(f.landmarks, c);
    tag = id.tag;
    source = "seed:" + std::to_string(*req.identity_seed);
  } else {
    const std::vector<char> blob = read_file_bytes(req.reference_path);
    const BlobHeader h = read_blob_header(req.reference_path);
    if (static_cast<int>(h.height) != c.frame_h || static_cast<int>(h.width) != c.frame_w) {
      throw DataError(req.reference_path + ": reference is " + std::to_string(h.height) + "x" +
                      std::to_string(h.width) + ", config needs " + std::to_string(c.frame_h) + "x" +
                      std::to_string(c.frame_w));
    }
    reference = read_blob_frame(blob, 20, c.frame_h, c.frame_w);
    source = "file";
  }

  ensure_dir(out_dir);
  const NoiseSchedule sched = sampling_schedule(c);
  const RngState root = seed_stream(c, "sample");
  std::ostringstream sidecar, frames_eval, refs_eval;
  std::optional<BlobWriter> blob;
  if (req.n > 0) {
    blob.emplace(join_path(out_dir, "samples.mmds"),
                 BlobHeader{1, static_cast<std::uint32_t>(c.frame_h), static_cast<std::uint32_t>(c.frame_w),
                            static_cast<std::uint32_t>(c.frames)});
  }
  const Tensor ref_emb = rec(reference);
  for (int i = 0; i < req.n; ++i) {
    const std::string clip = "sample" + std::to_string(i);
    RngState prompt_rng = root.substream("prompt", static_cast<std::uint64_t>(i));
    int subject = 0;
    const std::vector<int> prompt = make_prompt(prompt_rng, tag, c.n_txt, &subject);
    const TokenMask mask = TokenMask::single(static_cast<std::size_t>(c.n_txt), static_cast<std::size_t>(subject));
    const FaceCondition cond = embed_condition(reference, prompt, mask, params, c);
    const Tensor x = sample_loop(conditioned_sampler(params, cond, c), sched,
                                 root.substream("clip", static_cast<std::uint64_t>(i)), c.frames, c);
    std::uint64_t offset = 0;
    std::vector<double> prompt_d(prompt.begin(), prompt.end());
    for (int f = 0; f < c.frames; ++f) {
      const Tensor frame = frame_of(x, static_cast<std::size_t>(f), c);
      const std::uint64_t o = blob->append(frame);
      if (f == 0) offset = o;
      frames_eval << eval_line(clip, "frame", static_cast<std::size_t>(f), rec(frame), std::nullopt, c);
    }
    refs_eval << eval_line(clip, "ref", 0, ref_emb, ref_landmarks, c);
    sidecar << "clip=" << clip << " offset=" << offset << " frames=" << c.frames << " h=" << c.frame_h
            << " w=" << c.frame_w << " source=" << source << " prompt=" << fmt_doubles(prompt_d)
            << " subject=" << subject << " sample_steps=" << sched.size() << "\n";
  }
  if (blob) blob->close();
  write_text_file(join_path(out_dir, "samples.sidecar"), sidecar.str());
  write_text_file(join_path(out_dir, "samples.eval"), frames_eval.str());
  write_text_file(join_path(out_dir, "references.eval"), refs_eval.str());
}

// ---- eval ----

EvalReport cmd_eval(const Config& c, const std::string& samples_path, const std::string& references_path) {
  std::vector<VideoEval> frames = parse_eval_records(read_text_file(samples_path), EvalRole::Frame);
  const std::vector<VideoEval> refs = parse_eval_records(read_text_file(references_path), EvalRole::Reference);
  if (frames.empty()) throw EmptyInputError(samples_path + ": no sample clips");
  return evaluate(join_evals(std::move(frames), refs), SuccessThresholds{c.theta_id, c.theta_motion});
}

IdentityProbe identity_probe(const Params& params, const Config& c, int n) {
  if (n <= 0) throw ConfigError("identity probe: n must be positive");
  const RecognitionEmbedder rec(params, c);
  const WorldGeometry geo = WorldGeometry::from_config(c);
  const NoiseSchedule sched = sampling_schedule(c);
  RngState ids = seed_stream(c, "eval");
  std::vector<Identity> people;
  for (int i = 0; i <= n; ++i) people.push_back(make_identity(ids));
  std::vector<RenderedFrame> refs;
  std::vector<Tensor> ref_emb;
  for (const Identity& id : people) {
    refs.push_back(render_frame(id, Pose{}, geo));
    ref_emb.push_back(rec(refs.back().pixels));
  }
  IdentityProbe out;
  const RngState root = seed_stream(c, "sample").substream("probe");
  for (int i = 0; i < n; ++i) {
    RngState prompt_rng = root.substream("prompt", static_cast<std::uint64_t>(i));
    int subject = 0;
    const std::vector<int> prompt = make_prompt(prompt_rng, people[i].tag, c.n_txt, &subject);
    const FaceCondition cond = embed_condition(
        refs[i].pixels, prompt, TokenMask::single(static_cast<std::size_t>(c.n_txt), static_cast<std::size_t>(subject)),
        params, c);
    const Tensor x = sample_loop(conditioned_sampler(params, cond, c), sched,
                                 root.substream("clip", static_cast<std::uint64_t>(i)), c.frames, c);
    VideoEval e;
    e.clip = "probe" + std::to_string(i);
    e.reference_embeddings = {ref_emb[i]};
    e.reference_landmarks = landmark_set(refs[i].landmarks, c);
    double own = 0.0, other = 0.0;
    for (int f = 0; f < c.frames; ++f) {
      const Tensor emb = rec(frame_of(x, static_cast<std::size_t>(f), c));
      own += cosine_similarity(emb, ref_emb[i]) / c.frames;
      other += cosine_similarity(emb, ref_emb[i + 1]) / c.frames;
      e.frame_embeddings.push_back(emb);
      e.frame_landmarks.push_back(std::nullopt);
    }
    out.wins += own > other ? 1 : 0;
    out.mean_own += own / n;
    out.mean_other += other / n;
    out.evals.push_back(std::move(e));
  }
  out.samples = n;
  return out;
}

// ---- ablate ----

std::vector<AblationVariant> ablation_variants(const Config& base) {
  std::vector<AblationVariant> v;
  auto add = [&](const std::string& name, auto&& set) {
    Config c = base;
    c.disable_can = c.disable_id_branch = c.disable_face_branch = c.direct_can_prediction = c.skip_pretrain = false;
    set(c);
    v.push_back({name, c});
  };
  add("full", [](Config&) {});
  add("disable_can", [](Config& c) { c.disable_can = true; });
  add("skip_pretrain", [](Config& c) { c.skip_pretrain = true; });
  add("disable_id_branch", [](Config& c) { c.disable_id_branch = true; });
  add("disable_face_branch", [](Config& c) { c.disable_face_branch = true; });
  add("direct_can_prediction", [](Config& c) { c.direct_can_prediction = true; });
  return v;
}

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

AblationResult cmd_ablate(const Config& c, const std::string& data_dir, const std::string& out_dir) {
  c.validate();
  Params base = initial_params(c);
  const TrainData data = load_train_data(c, data_dir, base);
  Config base_cfg = c;
  base_cfg.steps_image = 0;
  base_cfg.steps_video = 0;
  const TrainReport base_report = run_training(base, data, base_cfg);
  ensure_dir(out_dir);

  AblationResult res;
  for (const AblationVariant& v : ablation_variants(c)) {
    AblationRun run;
    run.name = v.name;
    Config cv = v.config;
    cv.steps_base = 0;
    Params p = base;
    const TrainReport r = run_training(p, data, cv);
    run.report = r;
    run.report.stages_run = {to_string(Stage::BasePretrain)};
    run.report.curve = base_report.curve;
    for (const std::string& s : r.stages_run) {
      if (s != to_string(Stage::BasePretrain)) run.report.stages_run.push_back(s);
    }
    for (const CurvePoint& cp : r.curve) run.report.curve.push_back(cp);

    const TrainablePredicate allowed = trainable_in(Stage::VideoFinetune, cv);
    for (const auto& [name, t] : p) {
      if (!t.bit_equal(base.at(name))) run.changed.insert(name);
      if (allowed(name)) run.expected.insert(name);
    }
    run.designated_ok = run.changed == run.expected;
    if (c.eval_samples > 0) run.probe = identity_probe(p, cv, c.eval_samples);
    write_text_file(join_path(out_dir, v.name + ".curve"), format_curve(run.report));
    res.runs.push_back(std::move(run));
  }

  std::map<int, std::vector<std::string>> grid;
  for (std::size_t k = 0; k < res.runs.size(); ++k) {
    for (const CurveRow& row : parse_curve(format_curve(res.runs[k].report))) {
      auto& cells = grid[row.step];
      cells.resize(res.runs.size(), "-");
      cells[k] = fmt_double(row.l_noise);
    }
  }
  std::ostringstream curves;
  curves << "step";
  for (const AblationRun& r : res.runs) curves << " " << r.name;
  curves << "\n";
  for (auto& [step, cells] : grid) {
    cells.resize(res.runs.size(), "-");
    curves << step;
    for (const std::string& s : cells) curves << " " << s;
    curves << "\n";
  }
  res.curves = curves.str();

  std::ostringstream m;
  m << "variant                 stages  initial_l_noise final_l_noise ratio   wins    own_sim other_sim id_check "
       "designated\n";
  for (const AblationRun& r : res.runs) {
    char name[32];
    std::snprintf(name, sizeof name, "%-23s", r.name.c_str());
    const double ratio = r.report.initial_l_noise > 0.0 ? r.report.final_l_noise / r.report.initial_l_noise : 0.0;
    std::string check = "n/a";
    if (!r.probe.evals.empty()) {
      check = fixed(success_rates(r.probe.evals, SuccessThresholds{c.theta_id, c.theta_motion}).identity_check);
    }
    m << name << " " << r.report.stages_run.size() << "       " << fixed(r.report.initial_l_noise) << "          "
      << fixed(r.report.final_l_noise) << "        " << fixed(ratio, 3) << "   " << r.probe.wins << "/"
      << r.probe.samples << "   " << fixed(r.probe.mean_own, 3) << "   " << fixed(r.probe.mean_other, 3) << "     "
      << check << "   " << (r.designated_ok ? "ok" : "MISMATCH") << "\n";
  }
  res.metrics = m.str();
  write_text_file(join_path(out_dir, "curves.txt"), res.curves);
  write_text_file(join_path(out_dir, "metrics.txt"), res.metrics);
  return res;
}

// ---- gradcheck ----

GradcheckSummary cmd_gradcheck(const std::vector<std::uint64_t>& seeds) {
  GradcheckSummary s;
  s.seeds = seeds;
  std::ostringstream o;
  const Config c = gradcheck_config();
  for (std::uint64_t seed : seeds) {
    const GradcheckResult r = run_gradcheck(c, seed);
    s.max_rel_error = std::max(s.max_rel_error, r.max_rel_error);
    s.coordinates += r.coordinates;
    s.failures += r.failures.size();
    o << "seed=" << seed << " tensors=" << r.tensors << " coordinates=" << r.coordinates
      << " max_rel_error=" << fmt_double(r.max_rel_error) << " worst=" << r.worst.name << "[" << r.worst.index
      << "] failures=" << r.failures.size() << "\n";
    for (const std::string& f : r.failures) o << "  fail " << f << "\n";
  }
  o << "summary seeds=" << seeds.size() << " coordinates=" << s.coordinates
    << " max_rel_error=" << fmt_double(s.max_rel_error) << " tolerance=" << fmt_double(kGradcheckTolerance)
    << " failures=" << s.failures << "\n";
  s.text = o.str();
  return s;
}

}  // namespace facecond
