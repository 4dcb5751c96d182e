#include <gtest/gtest.h>

#include <filesystem>

#include "facecond/cli.hpp"
#include "facecond/embedder.hpp"
#include "facecond/textio.hpp"
#include "support.hpp"

namespace facecond {
namespace {

namespace fs = std::filesystem;

Config cli_config() {
  Config c = test::small_config();
  c.n_ids = 16;
  c.per_id = 2;
  c.video_n_ids = 8;
  c.video_per_id = 2;
  c.steps_base = 3;
  c.steps_image = 3;
  c.steps_video = 3;
  c.batch_base = c.batch_image = c.batch_video = 1;
  c.sample_steps = 4;
  c.eval_samples = 2;
  return c;
}

std::vector<char> bytes_of(const std::string& path) { return read_file_bytes(path); }

bool same_params(const Params& a, const Params& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    if (!t.bit_equal(b.at(name))) return false;
  }
  return true;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
  EXPECT_EQ(exit_code_for(DataError("x")), kExitData);
  EXPECT_EQ(exit_code_for(EmptyInputError("x")), kExitData);
  EXPECT_EQ(exit_code_for(IoError("x")), kExitData);
  EXPECT_EQ(exit_code_for(NumericError("x")), kExitNumeric);
  EXPECT_EQ(exit_code_for(ContractError("x")), kExitOther);
}

TEST(Cli, DatagenIsByteIdenticalAndCountsMatchManifest) {
  const Config c = cli_config();
  test::TempDir a("datagen_a"), b("datagen_b");
  const DatagenSummary s = cmd_datagen(c, a.str());
  cmd_datagen(c, b.str());
  for (const char* f : {"image.mmds", "image.manifest", "video.mmds", "video.manifest"}) {
    EXPECT_EQ(bytes_of(a / f), bytes_of(b / f)) << f;
  }
  // Recount from the manifests alone.
  auto count = [](const std::string& path, bool kept) {
    std::size_t n = 0;
    for (const std::string& line : split(read_text_file(path), '\n')) {
      if (line.empty() || line[0] == '#') continue;
      if ((line.find(" kept=true") != std::string::npos) == kept) ++n;
    }
    return n;
  };
  EXPECT_EQ(count(a / "image.manifest", true), s.image_kept);
  EXPECT_EQ(count(a / "image.manifest", false), s.image_dropped);
  EXPECT_EQ(count(a / "video.manifest", true), s.video_kept);
  EXPECT_EQ(count(a / "video.manifest", false), s.video_dropped);
}

class CliRunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new test::TempDir("cli_data");
    cmd_datagen(cli_config(), data_->str());
  }
  static void TearDownTestSuite() { delete data_; }
  static test::TempDir* data_;
};

test::TempDir* CliRunTest::data_ = nullptr;

TEST_F(CliRunTest, ZeroStepsLeavesInitialization) {
  Config c = cli_config();
  c.steps_base = c.steps_image = c.steps_video = 0;
  test::TempDir out("zero");
  cmd_train(c, data_->str(), out.str());
  const Checkpoint init = load_checkpoint(out / "init.mmck", c);
  const Checkpoint model = load_checkpoint(out / "model.mmck", c);
  EXPECT_TRUE(same_params(init.params, model.params));
  EXPECT_TRUE(same_params(initial_params(c), model.params));
}

TEST_F(CliRunTest, TrainWritesStageCheckpointsCurveAndManifest) {
  const Config c = cli_config();
  test::TempDir out("train");
  const TrainOutputs r = cmd_train(c, data_->str(), out.str());
  for (const char* f : {"init.mmck", "base_pretrain.mmck", "image_pretrain.mmck", "video_finetune.mmck", "model.mmck",
                        "curve.txt", "manifest.txt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const std::vector<CurveRow> rows = parse_curve(read_text_file(out / "curve.txt"));
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows.front().step, 0);
  // Base pretraining carries no identity term.
  for (const CurveRow& row : rows) {
    const double lambda = row.step < c.steps_base ? 0.0 : c.lambda_id;
    EXPECT_NEAR(row.total, row.l_noise + lambda * row.l_id, 1e-5) << row.step;
  }
  EXPECT_EQ(read_text_file(out / "manifest.txt"), r.manifest);
  const Checkpoint image = load_checkpoint(out / "image_pretrain.mmck", c);
  EXPECT_EQ(image.stage, CheckpointStage::ImagePretrain);
  EXPECT_EQ(image.step, 6u);
  EXPECT_TRUE(same_params(load_checkpoint(out / "model.mmck", c).params, r.params));
}

TEST_F(CliRunTest, TrainIsByteIdenticalAcrossRuns) {
  const Config c = cli_config();
  test::TempDir a("train_a"), b("train_b");
  cmd_train(c, data_->str(), a.str());
  cmd_train(c, data_->str(), b.str());
  for (const char* f : {"model.mmck", "curve.txt", "manifest.txt"}) EXPECT_EQ(bytes_of(a / f), bytes_of(b / f)) << f;
}

// train -> save -> load -> train 0 steps -> save reproduces the bytes.
TEST_F(CliRunTest, CheckpointSurvivesZeroStepRetraining) {
  Config c = cli_config();
  test::TempDir out("cycle");
  cmd_train(c, data_->str(), out.str());
  Checkpoint ck = load_checkpoint(out / "model.mmck", c);
  c.steps_base = c.steps_image = c.steps_video = 0;
  run_training(ck.params, load_train_data(c, data_->str(), ck.params), c);
  save_checkpoint(out / "again.mmck", ck);
  EXPECT_EQ(bytes_of(out / "model.mmck"), bytes_of(out / "again.mmck"));
}

TEST_F(CliRunTest, SkipPretrainDropsStageFromManifestAndCurvesAlign) {
  Config c = cli_config();
  test::TempDir full("full"), skip("skip"), nocan("nocan");
  cmd_train(c, data_->str(), full.str());
  Config s = c;
  s.skip_pretrain = true;
  const TrainOutputs rs = cmd_train(s, data_->str(), skip.str());
  EXPECT_NE(rs.manifest.find("stages=base_pretrain,video_finetune\n"), std::string::npos);
  EXPECT_FALSE(fs::exists(skip / "image_pretrain.mmck"));

  Config n = c;
  n.disable_can = true;
  cmd_train(n, data_->str(), nocan.str());
  const auto a = parse_curve(read_text_file(full / "curve.txt"));
  const auto b = parse_curve(read_text_file(nocan / "curve.txt"));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].step, b[i].step);
}

TEST_F(CliRunTest, StageDataMismatchIsRefused) {
  Config c = cli_config();
  c.frames = 3;
  test::TempDir out("mismatch");
  EXPECT_THROW(cmd_train(c, data_->str(), out.str()), DataError);
}

class CliSampleTest : public CliRunTest {
 protected:
  static void SetUpTestSuite() {
    CliRunTest::SetUpTestSuite();
    run_ = new test::TempDir("cli_run");
    cmd_train(cli_config(), data_->str(), run_->str());
  }
  static void TearDownTestSuite() {
    delete run_;
    CliRunTest::TearDownTestSuite();
  }
  static test::TempDir* run_;
};

test::TempDir* CliSampleTest::run_ = nullptr;

TEST_F(CliSampleTest, SampleIsByteIdenticalWithConfiguredShape) {
  const Config c = cli_config();
  test::TempDir a("sample_a"), b("sample_b");
  SampleRequest req;
  req.identity_seed = 11;
  req.n = 2;
  cmd_sample(c, *run_ / "model.mmck", req, a.str());
  cmd_sample(c, *run_ / "model.mmck", req, b.str());
  for (const char* f : {"samples.mmds", "samples.sidecar", "samples.eval", "references.eval"}) {
    EXPECT_EQ(bytes_of(a / f), bytes_of(b / f)) << f;
  }
  const BlobHeader h = read_blob_header(a / "samples.mmds");
  EXPECT_EQ(h.frames, static_cast<std::uint32_t>(c.frames));
  EXPECT_EQ(h.height, static_cast<std::uint32_t>(c.frame_h));
  EXPECT_EQ(h.width, static_cast<std::uint32_t>(c.frame_w));
  EXPECT_EQ(fs::file_size(a / "samples.mmds"), 20u + 2u * c.frames * c.pixels() * 4u);
}

TEST_F(CliSampleTest, ZeroSamplesWritesEmptySidecarOnly) {
  test::TempDir out("sample_zero");
  SampleRequest req;
  req.identity_seed = 1;
  req.n = 0;
  cmd_sample(cli_config(), *run_ / "model.mmck", req, out.str());
  EXPECT_FALSE(fs::exists(out / "samples.mmds"));
  EXPECT_EQ(read_text_file(out / "samples.sidecar"), "");
}

TEST_F(CliSampleTest, SampleFromReferenceFile) {
  const Config c = cli_config();
  test::TempDir out("sample_ref");
  SampleRequest req;
  req.reference_path = *data_ / "image.mmds";
  req.n = 1;
  cmd_sample(c, *run_ / "model.mmck", req, out.str());
  EXPECT_NE(read_text_file(out / "samples.sidecar").find("source=file"), std::string::npos);
  req.identity_seed = 3;
  EXPECT_THROW(cmd_sample(c, *run_ / "model.mmck", req, out.str()), ConfigError);
}

TEST_F(CliSampleTest, CorruptCheckpointIsRefused) {
  const Config c = cli_config();
  test::TempDir out("corrupt");
  std::vector<char> bytes = bytes_of(*run_ / "model.mmck");
  bytes[2] = 'X';
  write_binary_file(out / "bad.mmck", bytes);
  SampleRequest req;
  req.identity_seed = 1;
  EXPECT_THROW(cmd_sample(c, out / "bad.mmck", req, out.str()), DataError);
  Config other = c;
  other.d = 8;
  EXPECT_THROW(cmd_sample(other, *run_ / "model.mmck", req, out.str()), DataError);
}

// Every number in the eval report is reproduced by direct library calls on
// the sample files.
TEST_F(CliSampleTest, EvalAgreesWithLibrary) {
  const Config c = cli_config();
  test::TempDir out("eval");
  SampleRequest req;
  req.identity_seed = 5;
  req.n = 2;
  cmd_sample(c, *run_ / "model.mmck", req, out.str());
  const EvalReport cli = cmd_eval(c, out / "samples.eval", out / "references.eval");

  const Checkpoint ck = load_checkpoint(*run_ / "model.mmck", c);
  const RecognitionEmbedder rec(ck.params, c);
  const std::vector<char> blob = bytes_of(out / "samples.mmds");
  RngState id_rng = RngState{5, 0}.substream("identity");
  const Identity id = make_identity(id_rng);
  const RenderedFrame ref = render_frame(id, Pose{}, WorldGeometry::from_config(c));
  std::vector<VideoEval> evals;
  for (int i = 0; i < 2; ++i) {
    VideoEval e;
    e.clip = "sample" + std::to_string(i);
    for (int f = 0; f < c.frames; ++f) {
      const std::uint64_t offset = 20 + 4ull * c.pixels() * static_cast<std::uint64_t>(i * c.frames + f);
      e.frame_embeddings.push_back(rec(read_blob_frame(blob, offset, c.frame_h, c.frame_w)));
      e.frame_landmarks.push_back(std::nullopt);
    }
    e.reference_embeddings = {rec(ref.pixels)};
    LandmarkSet l;
    l.points = ref.landmarks;
    l.frame_w = c.frame_w;
    l.frame_h = c.frame_h;
    e.reference_landmarks = l;
    evals.push_back(std::move(e));
  }
  const EvalReport lib = evaluate(evals, SuccessThresholds{c.theta_id, c.theta_motion});
  EXPECT_EQ(report_kv(cli), report_kv(lib));
  EXPECT_EQ(report_text(cli), report_text(lib));
}

TEST_F(CliSampleTest, ReferencesAgainstThemselves) {
  const Config c = cli_config();
  test::TempDir out("self");
  SampleRequest req;
  req.identity_seed = 9;
  req.n = 2;
  cmd_sample(c, *run_ / "model.mmck", req, out.str());
  const EvalReport r = cmd_eval(c, out / "references.eval", out / "references.eval");
  for (const ClipMetrics& m : r.clips) {
    EXPECT_NEAR(m.id_similarity, 1.0, 1e-6);
    ASSERT_TRUE(m.fm_ref.has_value());
    EXPECT_EQ(*m.fm_ref, 0.0);
  }
}

TEST(Cli, EvalOnEmptySamplesIsAnError) {
  test::TempDir out("empty");
  write_text_file(out / "s.eval", "");
  write_text_file(out / "r.eval", "");
  EXPECT_THROW(cmd_eval(Config{}, out / "s.eval", out / "r.eval"), EmptyInputError);
}

TEST(Cli, CurveParserRejectsGapsAndBadLines) {
  EXPECT_EQ(parse_curve("# stage=x first=0\n0 1 2 3\n1 1 2 3\n").size(), 2u);
  EXPECT_THROW(parse_curve("0 1 2 3\n2 1 2 3\n"), DataError);
  EXPECT_THROW(parse_curve("0 1 2\n"), DataError);
}

TEST(Cli, AblationVariantsSetOneFlagEach) {
  Config base;
  base.disable_can = true;  // cleared for every variant
  const auto v = ablation_variants(base);
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v[0].name, "full");
  EXPECT_FALSE(v[0].config.disable_can);
  EXPECT_TRUE(v[1].config.disable_can);
  EXPECT_TRUE(v[2].config.skip_pretrain);
  EXPECT_TRUE(v[3].config.disable_id_branch);
  EXPECT_TRUE(v[4].config.disable_face_branch);
  EXPECT_TRUE(v[5].config.direct_can_prediction);
  for (const auto& x : v) EXPECT_EQ(x.config.seed, base.seed);
}

TEST_F(CliRunTest, AblateRunsEveryVariantWithDesignatedChanges) {
  const Config c = cli_config();
  test::TempDir out("ablate");
  const AblationResult r = cmd_ablate(c, data_->str(), out.str());
  ASSERT_EQ(r.runs.size(), 6u);
  for (const AblationRun& run : r.runs) {
    EXPECT_TRUE(run.designated_ok) << run.name;
    EXPECT_FALSE(parse_curve(read_text_file(out / (run.name + ".curve"))).empty());
  }
  EXPECT_TRUE(fs::exists(out / "curves.txt"));
  EXPECT_TRUE(fs::exists(out / "metrics.txt"));
}

}  // namespace
}  // namespace facecond
