// Prints statistics of the synthetic world under the recognition map:
// same-identity cross-pose cosines, the identity triple test and the kept
// fraction at the filter threshold across seeds.
#include <algorithm>
#include <cstdio>

#include "facecond/dataforge.hpp"
#include "facecond/embedder.hpp"
#include "facecond/numerics/kernels.hpp"
#include "facecond/params.hpp"

using namespace facecond;

int main() {
  Config c;
  const Params params = init_params(c, RngState{c.seed, 0}.substream("init"));
  const RecognitionEmbedder rec(params, c);
  const WorldGeometry geo = WorldGeometry::from_config(c);

  RngState rng{7, 0};
  std::vector<double> same, diff;
  int wins = 0;
  const int triples = 200;
  for (int i = 0; i < triples; ++i) {
    const Identity a = make_identity(rng), b = make_identity(rng);
    const Pose p1 = sample_pose(rng, geo), p2 = sample_pose(rng, geo);
    const Tensor ea = rec(render_frame(a, p1, geo).pixels);
    const double s = cosine_similarity(ea, rec(render_frame(a, p2, geo).pixels));
    const double o = cosine_similarity(ea, rec(render_frame(b, p2, geo).pixels));
    same.push_back(s);
    diff.push_back(o);
    wins += s > o ? 1 : 0;
  }
  auto q = [](std::vector<double> v, double f) {
    std::sort(v.begin(), v.end());
    return v[static_cast<std::size_t>(f * (v.size() - 1))];
  };
  std::printf("same-id cross-pose cos: q10 %.3f q50 %.3f q90 %.3f\n", q(same, 0.1), q(same, 0.5), q(same, 0.9));
  std::printf("diff-id cos:            q10 %.3f q50 %.3f q90 %.3f\n", q(diff, 0.1), q(diff, 0.5), q(diff, 0.9));
  std::printf("triple test: %d / %d\n", wins, triples);

  // Frontal reference vs posed frames, as used at evaluation time.
  std::vector<double> fs, fd;
  for (int i = 0; i < 200; ++i) {
    const Identity a = make_identity(rng), b = make_identity(rng);
    const Pose p = sample_pose(rng, geo);
    const Tensor ea = rec(render_frame(a, Pose{}, geo).pixels);
    fs.push_back(cosine_similarity(ea, rec(render_frame(a, p, geo).pixels)));
    fd.push_back(cosine_similarity(ea, rec(render_frame(b, p, geo).pixels)));
  }
  std::printf("frontal ref same q10 %.3f q50 %.3f | diff q50 %.3f q90 %.3f\n", q(fs, 0.1), q(fs, 0.5), q(fd, 0.5),
              q(fd, 0.9));

  auto embed = [&](const Tensor& f) { return rec(f); };
  for (DataStage st : {DataStage::Image, DataStage::Video}) {
    std::printf("%s kept fraction:", to_string(st).c_str());
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const Dataset ds = make_dataset(50, 4, st, RngState{seed, 0}, c, embed);
      std::printf(" %.3f", static_cast<double>(ds.kept_count()) / ds.records.size());
    }
    std::printf("\n");
  }

  // Identity isotropy: mean pairwise cosine of latents.
  double m = 0.0;
  int n = 0;
  std::vector<Identity> ids;
  for (int i = 0; i < 100; ++i) ids.push_back(make_identity(rng));
  for (int i = 0; i < 100; ++i)
    for (int j = i + 1; j < 100; ++j, ++n) m += cosine_similarity(ids[i].z, ids[j].z);
  std::printf("identity mean pairwise cos %.4f\n", m / n);
  return 0;
}
