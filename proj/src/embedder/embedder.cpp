#include "facecond/embedder.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "facecond/dataforge.hpp"

#include "facecond/numerics/kernels.hpp"

namespace facecond {

TokenMask TokenMask::single(std::size_t n, std::size_t index) {
  if (index >= n) throw DimensionError("TokenMask: index " + std::to_string(index) + " outside length " + std::to_string(n));
  TokenMask m = none(n);
  m.bits[index] = 1;
  return m;
}

bool TokenMask::any() const {
  for (auto b : bits) {
    if (b) return true;
  }
  return false;
}

namespace {

constexpr int kRecognitionIds = 400;
constexpr int kRecognitionPoses = 12;
constexpr int kRecognitionDims = 8;
constexpr double kRecognitionRidge = 0.01;

}  // namespace

Tensor make_recognition_projection(const Config& c, RngState rng) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const WorldGeometry geo = WorldGeometry::from_config(c);
  const Eigen::Index n = static_cast<Eigen::Index>(c.pixels());
  const std::size_t out = 2 * static_cast<std::size_t>(c.d);
  const Eigen::Index k = std::min<Eigen::Index>(kRecognitionDims, static_cast<Eigen::Index>(out));

  // Per-image mean removal.
  const MatrixXd center = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));

  // Renders of sampled identities; pose 0 of each identity is frontal.
  RngState ids = rng.substream("identities");
  RngState poses = rng.substream("poses");
  MatrixXd x(static_cast<Eigen::Index>(kRecognitionIds) * kRecognitionPoses, n);
  for (int i = 0; i < kRecognitionIds; ++i) {
    const Identity id = make_identity(ids);
    for (int j = 0; j < kRecognitionPoses; ++j) {
      const Pose pose = j == 0 ? Pose{} : sample_pose(poses, geo);
      const Tensor px = render_frame(id, pose, geo).pixels;
      for (Eigen::Index q = 0; q < n; ++q) x(i * kRecognitionPoses + j, q) = px[static_cast<std::size_t>(q)];
    }
  }
  x = x * center;

  // Remove the mean-face direction, shared by every identity.
  const VectorXd mean = x.colwise().mean().transpose();
  const VectorXd u = mean / mean.norm();
  const MatrixXd deflate = MatrixXd::Identity(n, n) - u * u.transpose();
  x = x * deflate;

  MatrixXd id_means(kRecognitionIds, n);
  MatrixXd within = MatrixXd::Zero(n, n);
  for (int i = 0; i < kRecognitionIds; ++i) {
    const auto block = x.middleRows(i * kRecognitionPoses, kRecognitionPoses);
    id_means.row(i) = block.colwise().mean();
    const MatrixXd r = block.rowwise() - id_means.row(i);
    within += r.transpose() * r;
  }
  within /= static_cast<double>(x.rows());
  const MatrixXd cm = id_means.rowwise() - id_means.colwise().mean();
  const MatrixXd between = cm.transpose() * cm / static_cast<double>(kRecognitionIds - 1);
  within += (kRecognitionRidge * within.trace() / static_cast<double>(n)) * MatrixXd::Identity(n, n);

  // Discriminant directions, largest between/within ratio first.
  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> solver(between, within);
  if (solver.info() != Eigen::Success) throw NumericError("recognition projection: eigen solve failed");
  const MatrixXd v = solver.eigenvectors().rightCols(k).rowwise().reverse();

  // Orthonormal rows embed the k coordinates isometrically into 2d dims.
  MatrixXd g(k, static_cast<Eigen::Index>(out));
  RngState erng = rng.substream("embedding");
  for (Eigen::Index r = 0; r < k; ++r)
    for (Eigen::Index q = 0; q < g.cols(); ++q) g(r, q) = next_normal(erng);
  const Eigen::HouseholderQR<MatrixXd> qr(g.transpose());
  const MatrixXd basis = (qr.householderQ() * MatrixXd::Identity(g.cols(), k)).transpose();

  MatrixXd proj = center * deflate * v * basis;
  // Scale so a typical embedding has unit RMS per coordinate.
  const double rms = std::sqrt((x * (v * basis)).squaredNorm() / static_cast<double>(x.rows() * out));
  proj /= rms;

  Tensor t({static_cast<std::size_t>(n), out});
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(out); ++q)
      t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(q)) = static_cast<float>(proj(r, q));
  return t;
}

template <class T>
BasicTensor<T> patchify(const BasicTensor<T>& image, int patch) {
  if (image.rank() != 2) throw DimensionError("patchify: expected an image, got " + shape_str(image.shape()));
  const std::size_t h = image.rows(), w = image.cols(), p = static_cast<std::size_t>(patch);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("patchify: image " + shape_str(image.shape()) + " not divisible by patch " +
                         std::to_string(patch));
  }
  const std::size_t ph = h / p, pw = w / p;
  BasicTensor<T> out(Shape{ph * pw, p * p});
  for (std::size_t by = 0; by < ph; ++by)
    for (std::size_t bx = 0; bx < pw; ++bx)
      for (std::size_t iy = 0; iy < p; ++iy)
        for (std::size_t ix = 0; ix < p; ++ix)
          out.at(by * pw + bx, iy * p + ix) = image.at(by * p + iy, bx * p + ix);
  return out;
}

template <class T>
BasicTensor<T> embed_text(const std::vector<int>& tokens, const ParamMap<T>& params) {
  const BasicTensor<T>& table = params.at("fixed.text_table");
  if (tokens.empty()) throw DimensionError("embed_text: empty prompt");
  BasicTensor<T> out(Shape{tokens.size(), table.cols()});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= table.rows()) {
      throw DataError("embed_text: token id " + std::to_string(tokens[i]) + " outside vocabulary");
    }
    for (std::size_t j = 0; j < table.cols(); ++j) out.at(i, j) = table.at(tokens[i], j);
  }
  return out;
}

template <class T>
Var extract_features(ParamBinder<T>& p, const BasicTensor<T>& image, const Config& c) {
  Graph<T>& g = p.graph();
  Var patches = g.constant(patchify(image, c.patch));
  return g.matmul(patches, p("fixed.feat_proj"));
}

template <class T>
Var encode_id(ParamBinder<T>& p, const BasicTensor<T>& image, const Config& c) {
  Graph<T>& g = p.graph();
  const BasicTensor<T>& proj = p.tensor("fixed.id_proj");
  if (image.size() != proj.rows()) {
    throw DimensionError("encode_id: image " + shape_str(image.shape()) + " does not match projection input " +
                         std::to_string(proj.rows()));
  }
  Var flat = g.constant(image.reshaped(Shape{1, image.size()}));
  Var e = g.matmul(flat, p("fixed.id_proj"));
  return g.reshape(e, kIdTokens, static_cast<std::size_t>(c.d));
}

template <class T>
Var perceiver_forward(ParamBinder<T>& p, const std::string& prefix, Var queries, Var context, int depth) {
  Graph<T>& g = p.graph();
  const std::size_t d = g.value(queries).cols();
  if (g.value(context).cols() != d) {
    throw DimensionError("perceiver: query width " + std::to_string(d) + " vs context width " +
                         std::to_string(g.value(context).cols()));
  }
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  const T eps = static_cast<T>(1e-6);
  Var q = queries;
  Var ctx = g.layer_norm(context, eps);
  for (int j = 0; j < depth; ++j) {
    const std::string b = prefix + ".perceiver." + std::to_string(j) + ".";
    Var qn = g.layer_norm(q, eps);
    Var qq = g.matmul(qn, p(b + "wq"));
    Var kk = g.matmul(ctx, p(b + "wk"));
    Var vv = g.matmul(ctx, p(b + "wv"));
    Var attn = g.softmax_rows(g.scale(g.matmul_nt(qq, kk), inv_sqrt_d));
    q = g.add(q, g.matmul(g.matmul(attn, vv), p(b + "wo")));
    Var hn = g.layer_norm(q, eps);
    Var hid = g.gelu(g.add_row(g.matmul(hn, p(b + "ffn.w1")), p(b + "ffn.b1")));
    q = g.add(q, g.add_row(g.matmul(hid, p(b + "ffn.w2")), p(b + "ffn.b2")));
  }
  return q;
}

template <class T>
Var fuse_id_text(ParamBinder<T>& p, Var x_id, Var x_txt, const TokenMask& mask) {
  Graph<T>& g = p.graph();
  const std::size_t n = g.value(x_txt).rows();
  if (mask.size() != n) {
    throw DimensionError("fuse_id_text: mask length " + std::to_string(mask.size()) + " vs " + std::to_string(n) +
                         " text tokens");
  }
  if (!mask.any()) return x_txt;
  Var pooled = g.mean_rows(x_id);
  std::vector<Var> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Var tok = g.slice_rows(x_txt, i, 1);
    if (!mask.bits[i]) {
      rows.push_back(tok);
      continue;
    }
    const Var parts[] = {pooled, tok};
    Var in = g.concat_cols(parts);
    Var hid = g.gelu(g.add_row(g.matmul(in, p("adapter.id.fuse.w1")), p("adapter.id.fuse.b1")));
    rows.push_back(g.add_row(g.matmul(hid, p("adapter.id.fuse.w2")), p("adapter.id.fuse.b2")));
  }
  return g.concat_rows(rows);
}

template <class T>
ConditionVars embed_condition(ParamBinder<T>& p, const BasicTensor<T>& image, Var x_txt, const TokenMask& mask,
                              const Config& c) {
  Graph<T>& g = p.graph();
  ConditionVars out;
  out.x_txt_hat = x_txt;
  if (c.disable_face_branch && c.disable_id_branch) return out;
  Var f = extract_features(p, image, c);
  if (!c.disable_face_branch) {
    Var xf = perceiver_forward(p, "adapter.face", p("adapter.face.query"), f, c.perceiver_depth);
    out.x_face = g.add_row(g.matmul(xf, p("adapter.face.proj.w")), p("adapter.face.proj.b"));
  }
  if (!c.disable_id_branch) {
    Var q_id = encode_id(p, image, c);
    out.x_id = perceiver_forward(p, "adapter.id", q_id, f, c.perceiver_depth);
    out.x_txt_hat = fuse_id_text(p, out.x_id, x_txt, mask);
  }
  return out;
}

Tensor extract_features(const Tensor& image, const Params& params, const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  return g.value(extract_features(p, image, c));
}

Tensor encode_id(const Tensor& image, const Params& params, const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  return g.value(encode_id(p, image, c));
}

Tensor perceiver_forward(const Tensor& queries, const Tensor& context, const Params& params,
                         const std::string& prefix, int depth) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  return g.value(perceiver_forward(p, prefix, g.constant(queries), g.constant(context), depth));
}

Tensor fuse_id_text(const Tensor& x_id, const Tensor& x_txt, const TokenMask& mask, const Params& params) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  return g.value(fuse_id_text(p, g.constant(x_id), g.constant(x_txt), mask));
}

FaceCondition embed_condition(const Tensor& image, const std::vector<int>& prompt, const TokenMask& mask,
                              const Params& params, const Config& c) {
  Graph<float> g;
  ParamBinder<float> p(g, params);
  const Tensor x_txt = embed_text(prompt, params);
  ConditionVars v = embed_condition(p, image, g.constant(x_txt), mask, c);
  FaceCondition out;
  if (v.x_face.valid()) out.x_face = g.value(v.x_face);
  if (v.x_id.valid()) out.x_id = g.value(v.x_id);
  out.x_txt_hat = g.value(v.x_txt_hat);
  out.mask = mask;
  return out;
}

RecognitionEmbedder::RecognitionEmbedder(const Params& params, const Config& config)
    : proj_(params.at("fixed.id_proj")), h_(config.frame_h), w_(config.frame_w) {}

Tensor RecognitionEmbedder::operator()(const Tensor& frame) const {
  if (frame.size() != proj_.rows()) {
    throw DimensionError("recognition: frame " + shape_str(frame.shape()) + " does not match projection");
  }
  Tensor out({proj_.cols()});
  gemm_nn(frame.data(), proj_.data(), out.data(), 1, proj_.rows(), proj_.cols(), false);
  return out;
}

#define FACECOND_INSTANTIATE(T)                                                                              \
  template BasicTensor<T> patchify<T>(const BasicTensor<T>&, int);                                          \
  template BasicTensor<T> embed_text<T>(const std::vector<int>&, const ParamMap<T>&);                      \
  template Var extract_features<T>(ParamBinder<T>&, const BasicTensor<T>&, const Config&);                  \
  template Var encode_id<T>(ParamBinder<T>&, const BasicTensor<T>&, const Config&);                         \
  template Var perceiver_forward<T>(ParamBinder<T>&, const std::string&, Var, Var, int);                    \
  template Var fuse_id_text<T>(ParamBinder<T>&, Var, Var, const TokenMask&);                                \
  template ConditionVars embed_condition<T>(ParamBinder<T>&, const BasicTensor<T>&, Var, const TokenMask&, \
                                            const Config&);

FACECOND_INSTANTIATE(float)
FACECOND_INSTANTIATE(double)

#undef FACECOND_INSTANTIATE

}  // namespace facecond
