#include "facecond/dataforge.hpp"

#include <algorithm>
#include <cmath>

#include "facecond/numerics/kernels.hpp"

namespace facecond {

namespace {

// Canonical landmark layout in face units (1 unit = width / 4 px): left eye,
// right eye, nose, left mouth corner, right mouth corner.
constexpr std::array<Point, kLandmarks> kCanonical = {
    Point{-0.75, -0.55}, Point{0.75, -0.55}, Point{0.0, 0.15}, Point{-0.6, 0.8}, Point{0.6, 0.8}};
constexpr double kBaseAmplitude[kLandmarks] = {0.8, 0.8, 0.6, 0.7, 0.7};

// Fixed world maps from identity latent to landmark offsets, amplitudes and
// blob widths. Seeded once; identical on every run.
struct WorldMaps {
  Tensor offset;     // [10 x 8]
  Tensor amplitude;  // [5 x 8]
  Tensor width;      // [5 x 8]
};

const WorldMaps& world_maps() {
  static const WorldMaps maps = [] {
    RngState rng{0x5EEDFACEull, 0};
    WorldMaps m;
    const float s = 1.0f / std::sqrt(static_cast<float>(kIdentityDim));
    m.offset = seeded_normal(rng, {2 * kLandmarks, kIdentityDim}, s);
    m.amplitude = seeded_normal(rng, {kLandmarks, kIdentityDim}, s);
    m.width = seeded_normal(rng, {kLandmarks, kIdentityDim}, s);
    return m;
  }();
  return maps;
}

double row_dot(const Tensor& m, std::size_t row, const Tensor& z) {
  double s = 0.0;
  for (std::size_t j = 0; j < kIdentityDim; ++j) s += static_cast<double>(m.at(row, j)) * z[j];
  return s;
}

double face_unit(const WorldGeometry& geo) { return geo.width / 4.0; }

struct BlobParams {
  std::array<double, kLandmarks> amplitude;
  std::array<double, kLandmarks> sigma;  // px at scale 1
};

BlobParams blob_params(const Identity& id) {
  const WorldMaps& m = world_maps();
  BlobParams p{};
  for (std::size_t k = 0; k < kLandmarks; ++k) {
    p.amplitude[k] = std::clamp(kBaseAmplitude[k] + 0.45 * row_dot(m.amplitude, k, id.z), 0.1, 1.0);
    p.sigma[k] = std::clamp(1.1 + 0.35 * row_dot(m.width, k, id.z), 0.6, 1.8);
  }
  return p;
}

}  // namespace

WorldGeometry WorldGeometry::from_config(const Config& c) {
  WorldGeometry g;
  g.height = c.frame_h;
  g.width = c.frame_w;
  g.max_angle = c.max_angle;
  g.max_shift_px = c.max_shift * c.frame_w;
  g.scale_min = c.scale_min;
  g.scale_max = c.scale_max;
  return g;
}

void WorldGeometry::check_pose(const Pose& p) const {
  const double shift_limit = 0.2 * width + 1e-9;
  if (std::abs(p.angle) > 0.5 + 1e-12 || std::abs(p.dx) > shift_limit || std::abs(p.dy) > shift_limit ||
      p.scale < 0.8 - 1e-12 || p.scale > 1.25 + 1e-12) {
    throw ContractError("render: pose out of range (angle " + std::to_string(p.angle) + ", dx " +
                        std::to_string(p.dx) + ", dy " + std::to_string(p.dy) + ", scale " +
                        std::to_string(p.scale) + ")");
  }
}

Identity make_identity(RngState& rng) {
  Identity id;
  for (;;) {
    id.z = seeded_normal(rng, {kIdentityDim}, 0.5f);
    double n2 = 0.0;
    for (float v : id.z.flat()) n2 += static_cast<double>(v) * v;
    const double n = std::sqrt(n2);
    if (n >= kIdentityNormMin && n <= kIdentityNormMax) break;
  }
  id.tag = static_cast<Demographic>(next_below(rng, 3));
  return id;
}

Landmarks canonical_landmarks(const Identity& id, const WorldGeometry& geo) {
  const WorldMaps& m = world_maps();
  const double unit = face_unit(geo);
  Landmarks out{};
  for (std::size_t k = 0; k < kLandmarks; ++k) {
    const double ox = 0.22 * row_dot(m.offset, 2 * k, id.z);
    const double oy = 0.22 * row_dot(m.offset, 2 * k + 1, id.z);
    out[k] = Point{(kCanonical[k].x + ox) * unit, (kCanonical[k].y + oy) * unit};
  }
  return out;
}

Landmarks posed_landmarks(const Identity& id, const Pose& pose, const WorldGeometry& geo) {
  const Landmarks canon = canonical_landmarks(id, geo);
  const double c = std::cos(pose.angle), s = std::sin(pose.angle);
  const double cx = geo.width / 2.0, cy = geo.height / 2.0;
  Landmarks out{};
  for (std::size_t k = 0; k < kLandmarks; ++k) {
    const double x = canon[k].x, y = canon[k].y;
    out[k] = Point{cx + pose.dx + pose.scale * (c * x - s * y), cy + pose.dy + pose.scale * (s * x + c * y)};
  }
  return out;
}

RenderedFrame render_frame(const Identity& id, const Pose& pose, const WorldGeometry& geo) {
  geo.check_pose(pose);
  const BlobParams bp = blob_params(id);
  RenderedFrame f;
  f.landmarks = posed_landmarks(id, pose, geo);
  for (const Point& p : f.landmarks) {
    if (p.x < 0.0 || p.y < 0.0 || p.x > geo.width || p.y > geo.height) {
      throw ContractError("render: pose moves a landmark out of the frame");
    }
  }
  f.pixels = Tensor({static_cast<std::size_t>(geo.height), static_cast<std::size_t>(geo.width)});
  for (int y = 0; y < geo.height; ++y) {
    for (int x = 0; x < geo.width; ++x) {
      // Pixel centers at integer + 0.5.
      const double px = x + 0.5, py = y + 0.5;
      double v = 0.0;
      for (std::size_t k = 0; k < kLandmarks; ++k) {
        const double sg = bp.sigma[k] * pose.scale;
        const double ddx = px - f.landmarks[k].x, ddy = py - f.landmarks[k].y;
        v += bp.amplitude[k] * std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * sg * sg));
      }
      f.pixels.at(y, x) = static_cast<float>(std::min(v, 1.0));
    }
  }
  double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
  for (const Point& p : f.landmarks) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  const double pad = 1.5 * pose.scale;
  f.face_region = Rect{std::max(0, static_cast<int>(std::floor(x0 - pad))),
                       std::max(0, static_cast<int>(std::floor(y0 - pad))),
                       std::min(geo.width, static_cast<int>(std::ceil(x1 + pad))),
                       std::min(geo.height, static_cast<int>(std::ceil(y1 + pad)))};
  return f;
}

std::vector<RenderedFrame> synth_clip(const Identity& id, const std::vector<Pose>& trajectory,
                                      const WorldGeometry& geo) {
  std::vector<RenderedFrame> out;
  out.reserve(trajectory.size());
  for (const Pose& p : trajectory) out.push_back(render_frame(id, p, geo));
  return out;
}

Pose sample_pose(RngState& rng, const WorldGeometry& geo) {
  Pose p;
  p.angle = (2.0 * next_uniform(rng) - 1.0) * geo.max_angle;
  p.dx = (2.0 * next_uniform(rng) - 1.0) * geo.max_shift_px;
  p.dy = (2.0 * next_uniform(rng) - 1.0) * geo.max_shift_px;
  p.scale = geo.scale_min + next_uniform(rng) * (geo.scale_max - geo.scale_min);
  return p;
}

std::vector<Pose> sample_trajectory(RngState& rng, const WorldGeometry& geo, int frames) {
  const Pose a = sample_pose(rng, geo);
  const Pose b = sample_pose(rng, geo);
  std::vector<Pose> out;
  for (int i = 0; i < frames; ++i) {
    const double t = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.0;
    out.push_back(Pose{a.angle + t * (b.angle - a.angle), a.dx + t * (b.dx - a.dx), a.dy + t * (b.dy - a.dy),
                       a.scale + t * (b.scale - a.scale)});
  }
  return out;
}

}  // namespace facecond
