#include "bsrkit/burst.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "bsrkit/error.hpp"

namespace bsrkit {

void Burst::validate() const {
  if (frames.empty()) throw DimensionError("burst has no frames");
  if (scale < 1) throw DimensionError("burst scale must be >= 1");
  const auto& f0 = frames.front();
  for (const auto& f : frames)
    if (f.channels() != f0.channels() || f.height() != f0.height() || f.width() != f0.width())
      throw DimensionError("burst frames differ in size or channel count");
  if (true_transforms && true_transforms->size() != frames.size())
    throw DimensionError("true_transforms count does not match frame count");
}

ShiftDistribution ShiftDistribution::zero() {
  ShiftDistribution d;
  d.zero_shift = true;
  d.rotation_jitter_deg = 0.0;
  return d;
}

void ShiftDistribution::validate() const {
  double total = 0.0;
  for (double p : bucket_probs) {
    if (p < 0.0) throw ConfigError("shift bucket probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("shift bucket probabilities must sum to 1");
  if (max_shift < 2.0) throw ConfigError("max_shift must be at least 2 HR px");
  if (rotation_jitter_deg < 0.0) throw ConfigError("rotation jitter must be non-negative");
}

double ShiftDistribution::sample_magnitude(std::mt19937_64& rng) const {
  if (zero_shift) return 0.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pick = u(rng);
  const double lo[3] = {0.0, 1.0, 2.0};
  const double hi[3] = {1.0, 2.0, max_shift};
  int bucket = 2;
  double acc = 0.0;
  for (int b = 0; b < 3; ++b) {
    acc += bucket_probs[b];
    if (pick < acc) {
      bucket = b;
      break;
    }
  }
  return lo[bucket] + (hi[bucket] - lo[bucket]) * u(rng);
}

int shift_bucket(double magnitude_hr) {
  if (magnitude_hr < 1.0) return 0;
  if (magnitude_hr < 2.0) return 1;
  return 2;
}

GeneratedBurst generate_burst(const Image& hr, int n, int s, const ShiftDistribution& dist, double noise_sigma,
                              std::uint64_t seed) {
  if (n < 1) throw DimensionError("burst needs at least one frame");
  if (s < 1 || hr.height() % s != 0 || hr.width() % s != 0)
    throw DimensionError("HR size " + std::to_string(hr.height()) + "x" + std::to_string(hr.width()) +
                         " is not divisible by scale " + std::to_string(s));
  if (noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  dist.validate();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double cx = (hr.width() - 1) / 2.0, cy = (hr.height() - 1) / 2.0;

  GeneratedBurst out;
  out.ground_truth = hr;
  out.burst.scale = s;
  out.burst.noise_sigma = noise_sigma;
  std::vector<Homography> transforms;
  out.burst.frames.push_back(downsample(hr, s));
  transforms.push_back(Homography::identity());
  for (int i = 1; i < n; ++i) {
    const double mag = dist.sample_magnitude(rng);
    const double theta = 2.0 * std::numbers::pi * u(rng);
    const double rot = dist.rotation_jitter_deg * (2.0 * u(rng) - 1.0);
    const auto t_hr = Homography::rigid(rot, mag * std::cos(theta), mag * std::sin(theta), cx, cy);
    Image frame = (mag == 0.0 && rot == 0.0) ? out.burst.frames.front()
                                             : downsample(warp(hr, t_hr, Interpolation::bicubic), s);
    if (noise_sigma > 0.0) {
      for (int c = 0; c < frame.channels(); ++c)
        for (int y = 0; y < frame.height(); ++y)
          for (int x = 0; x < frame.width(); ++x) frame.set(c, y, x, frame.at(c, y, x) + noise_sigma * noise(rng));
    }
    out.burst.frames.push_back(std::move(frame));
    transforms.push_back(t_hr.to_lr(s));
  }
  out.burst.true_transforms = std::move(transforms);
  return out;
}

namespace {

Homography shift_origin(const Homography& h, double ox, double oy) {
  // Coordinates relative to a crop at (ox, oy): C^-1 H C with C = translate(o).
  return Homography::translation(-ox, -oy) * h * Homography::translation(ox, oy);
}

}  // namespace

std::vector<GeneratedBurst> crop_patch_pairs(const Burst& burst, const Image& hr, int patch, int stride) {
  burst.validate();
  const int s = burst.scale;
  const Image& f0 = burst.base();
  if (patch <= 0 || stride <= 0) throw DimensionError("patch and stride must be positive");
  if (patch > f0.height() || patch > f0.width())
    throw DimensionError("patch " + std::to_string(patch) + " exceeds frame size");
  if (hr.height() != f0.height() * s || hr.width() != f0.width() * s)
    throw DimensionError("ground truth size does not match frames times scale");
  std::vector<GeneratedBurst> pairs;
  for (int y = 0; y + patch <= f0.height(); y += stride)
    for (int x = 0; x + patch <= f0.width(); x += stride) {
      GeneratedBurst p;
      p.burst.scale = s;
      p.burst.noise_sigma = burst.noise_sigma;
      for (const auto& f : burst.frames) p.burst.frames.push_back(crop(f, y, x, patch, patch));
      if (burst.true_transforms) {
        std::vector<Homography> ts;
        for (const auto& t : *burst.true_transforms) ts.push_back(shift_origin(t, x, y));
        p.burst.true_transforms = std::move(ts);
      }
      p.ground_truth = crop(hr, y * s, x * s, patch * s, patch * s);
      pairs.push_back(std::move(p));
    }
  return pairs;
}

Burst take_frames(const Burst& burst, int n) {
  if (n < 1 || static_cast<std::size_t>(n) > burst.size()) throw DimensionError("cannot take " + std::to_string(n) + " frames");
  Burst out = burst;
  out.frames.resize(static_cast<std::size_t>(n));
  if (out.true_transforms) out.true_transforms->resize(static_cast<std::size_t>(n));
  return out;
}

namespace {

struct Shape2 {
  int kind;  // 0 rect, 1 ellipse
  double cx, cy, a, b, angle;
  std::array<double, 3> color;
  bool striped;
  double period, stripe_angle;
  std::array<double, 3> color2;
};

std::array<double, 3> random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  return {u(rng), u(rng), u(rng)};
}

double grating(double x, double y, double period, double angle) {
  const double t = x * std::cos(angle) + y * std::sin(angle);
  return std::sin(2.0 * std::numbers::pi * t / period) >= 0.0 ? 1.0 : 0.0;
}

}  // namespace

Image synthesize_scene(int height, int width, std::uint64_t seed, SceneKind kind, int channels) {
  if (channels != 1 && channels != 3) throw DimensionError("scene must have 1 or 3 channels");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Plane> planes(3, Plane::Zero(height, width));

  if (kind == SceneKind::blurred_noise) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& p : planes) {
      Plane raw(height, width);
      for (int i = 0; i < raw.size(); ++i) raw.data()[i] = g(rng);
      p = 0.5 + 0.6 * gaussian_blur(raw, 2.0);
    }
  } else {
    const auto c0 = random_color(rng), c1 = random_color(rng);
    const double grad_angle = 2.0 * std::numbers::pi * u(rng);
    const double fx = 0.02 + 0.05 * u(rng), fy = 0.02 + 0.05 * u(rng), phase = 2.0 * std::numbers::pi * u(rng);
    const double period = 2.0 + 6.0 * u(rng), grating_angle = std::numbers::pi * u(rng);
    const double cell = static_cast<double>(2 + static_cast<int>(7 * u(rng)));
    const auto cc = random_color(rng), cd = random_color(rng);

    std::vector<Shape2> shapes;
    if (kind == SceneKind::mixed || kind == SceneKind::shapes) {
      const int count = 8 + static_cast<int>(10 * u(rng));
      for (int i = 0; i < count; ++i) {
        Shape2 sh;
        sh.kind = u(rng) < 0.5 ? 0 : 1;
        sh.cx = width * u(rng);
        sh.cy = height * u(rng);
        const double extent = 0.04 + 0.22 * u(rng);
        sh.a = extent * width;
        sh.b = extent * height * (0.4 + 0.6 * u(rng));
        sh.angle = std::numbers::pi * u(rng);
        sh.color = random_color(rng);
        sh.striped = kind == SceneKind::mixed && u(rng) < 0.4;
        sh.period = 2.0 + 8.0 * u(rng);
        sh.stripe_angle = std::numbers::pi * u(rng);
        sh.color2 = random_color(rng);
        shapes.push_back(sh);
      }
    }

    auto shade = [&](double x, double y) -> std::array<double, 3> {
      std::array<double, 3> col{};
      switch (kind) {
        case SceneKind::stripes: {
          const double g = grating(x, y, period, grating_angle);
          for (int c = 0; c < 3; ++c) col[c] = g * cc[c] + (1 - g) * cd[c];
          return col;
        }
        case SceneKind::checker: {
          const bool on = (static_cast<int>(std::floor(x / cell)) + static_cast<int>(std::floor(y / cell))) % 2 == 0;
          for (int c = 0; c < 3; ++c) col[c] = on ? cc[c] : cd[c];
          return col;
        }
        default: break;
      }
      const double t = ((x / width - 0.5) * std::cos(grad_angle) + (y / height - 0.5) * std::sin(grad_angle)) + 0.5;
      const double wave = 0.08 * std::sin(fx * x + phase) * std::cos(fy * y);
      for (int c = 0; c < 3; ++c) col[c] = std::clamp(t, 0.0, 1.0) * c1[c] + (1 - std::clamp(t, 0.0, 1.0)) * c0[c] + wave;
      if (kind == SceneKind::smooth) return col;
      for (const auto& sh : shapes) {
        const double dx = x - sh.cx, dy = y - sh.cy;
        const double lx = dx * std::cos(sh.angle) + dy * std::sin(sh.angle);
        const double ly = -dx * std::sin(sh.angle) + dy * std::cos(sh.angle);
        const bool inside = sh.kind == 0 ? (std::abs(lx) <= sh.a && std::abs(ly) <= sh.b)
                                         : (lx * lx / (sh.a * sh.a) + ly * ly / (sh.b * sh.b) <= 1.0);
        if (!inside) continue;
        if (sh.striped) {
          const double g = grating(x, y, sh.period, sh.stripe_angle);
          for (int c = 0; c < 3; ++c) col[c] = g * sh.color[c] + (1 - g) * sh.color2[c];
        } else {
          col = sh.color;
        }
      }
      return col;
    };

    constexpr int ss = 4;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        std::array<double, 3> acc{};
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const auto col = shade(x + (sx + 0.5) / ss - 0.5, y + (sy + 0.5) / ss - 0.5);
            for (int c = 0; c < 3; ++c) acc[c] += col[c];
          }
        for (int c = 0; c < 3; ++c) planes[c](y, x) = acc[c] / (ss * ss);
      }
  }
  if (channels == 1) return Image::from_planes({0.299 * planes[0] + 0.587 * planes[1] + 0.114 * planes[2]});
  return Image::from_planes(planes);
}

nlohmann::json to_json(const Homography& h) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({h(r, 0), h(r, 1), h(r, 2)});
  return rows;
}

Homography homography_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("homography must be a 3x3 array");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3) throw FormatError("homography must be a 3x3 array");
    for (int c = 0; c < 3; ++c) m(r, c) = j[r][c].get<double>();
  }
  return Homography(m);
}

nlohmann::json to_json(const ShiftDistribution& d) {
  return {{"bucket_probs", d.bucket_probs},
          {"max_shift", d.max_shift},
          {"rotation_jitter_deg", d.rotation_jitter_deg},
          {"zero_shift", d.zero_shift}};
}

ShiftDistribution shift_distribution_from_json(const nlohmann::json& j) {
  ShiftDistribution d;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "bucket_probs") d.bucket_probs = it->get<std::array<double, 3>>();
    else if (k == "max_shift") d.max_shift = it->get<double>();
    else if (k == "rotation_jitter_deg") d.rotation_jitter_deg = it->get<double>();
    else if (k == "zero_shift") d.zero_shift = it->get<bool>();
    else throw ConfigError("unknown shift distribution key: " + k);
  }
  d.validate();
  return d;
}

namespace {

std::string frame_name(std::size_t i) {
  std::ostringstream os;
  os << "frame_" << std::setw(3) << std::setfill('0') << i << ".png";
  return os.str();
}

}  // namespace

void write_burst(const std::filesystem::path& dir, const Burst& burst, const Image* ground_truth,
                 const nlohmann::json& extra) {
  burst.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json side = extra.is_object() ? extra : nlohmann::json::object();
  side["scale"] = burst.scale;
  side["noise_sigma"] = burst.noise_sigma;
  side["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < burst.size(); ++i) {
    write_png(burst.frames[i], dir / frame_name(i));
    side["frames"].push_back(frame_name(i));
  }
  if (burst.true_transforms) {
    side["true_transforms"] = nlohmann::json::array();
    for (const auto& t : *burst.true_transforms) side["true_transforms"].push_back(to_json(t));
  }
  if (ground_truth) {
    write_png(*ground_truth, dir / "gt.png");
    side["ground_truth"] = "gt.png";
  }
  std::ofstream f(dir / "burst.json");
  if (!f) throw IoError("cannot write " + (dir / "burst.json").string());
  f << side.dump(2) << '\n';
}

LoadedBurst read_burst(const std::filesystem::path& dir) {
  std::ifstream f(dir / "burst.json");
  if (!f) throw IoError("missing burst.json in " + dir.string());
  LoadedBurst out;
  try {
    out.sidecar = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("burst.json: " + std::string(e.what()));
  }
  const auto& side = out.sidecar;
  if (!side.contains("frames") || !side["frames"].is_array()) throw FormatError("burst.json lacks a frames list");
  out.burst.scale = side.value("scale", 1);
  out.burst.noise_sigma = side.value("noise_sigma", 0.0);
  for (const auto& name : side["frames"]) out.burst.frames.push_back(read_png(dir / name.get<std::string>()));
  if (side.contains("true_transforms")) {
    std::vector<Homography> ts;
    for (const auto& t : side["true_transforms"]) ts.push_back(homography_from_json(t));
    out.burst.true_transforms = std::move(ts);
  }
  if (side.contains("ground_truth")) out.ground_truth = read_png(dir / side["ground_truth"].get<std::string>());
  out.burst.validate();
  return out;
}

}  // namespace bsrkit
