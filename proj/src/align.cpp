#include "bsrkit/align.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "bsrkit/parallel.hpp"

namespace bsrkit {

void EccConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (pyramid_levels < 1) throw ConfigError("pyramid_levels must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (gaussian_blur_sigma < 0.0) throw ConfigError("gaussian_blur_sigma must be non-negative");
}

MotionModel motion_model_from_string(const std::string& s) {
  if (s == "translation") return MotionModel::translation;
  if (s == "euclidean") return MotionModel::euclidean;
  if (s == "affine") return MotionModel::affine;
  if (s == "homography") return MotionModel::homography;
  throw ConfigError("unknown motion model: " + s);
}

std::string to_string(MotionModel m) {
  switch (m) {
    case MotionModel::translation: return "translation";
    case MotionModel::euclidean: return "euclidean";
    case MotionModel::affine: return "affine";
    case MotionModel::homography: return "homography";
  }
  return "?";
}

double correlation_coefficient(const Plane& a, const Plane& b) {
  const Plane za = a - a.mean();
  const Plane zb = b - b.mean();
  const double na = std::sqrt((za * za).sum()), nb = std::sqrt((zb * zb).sum());
  if (na == 0.0 || nb == 0.0) return 0.0;
  return (za * zb).sum() / (na * nb);
}

namespace {

int param_count(MotionModel m) {
  switch (m) {
    case MotionModel::translation: return 2;
    case MotionModel::euclidean: return 3;
    case MotionModel::affine: return 6;
    case MotionModel::homography: return 8;
  }
  return 0;
}

Eigen::VectorXd params_of(const Eigen::Matrix3d& w, MotionModel m) {
  Eigen::VectorXd p(param_count(m));
  switch (m) {
    case MotionModel::translation: p << w(0, 2), w(1, 2); break;
    case MotionModel::euclidean: p << std::atan2(w(1, 0), w(0, 0)), w(0, 2), w(1, 2); break;
    case MotionModel::affine: p << w(0, 0), w(0, 1), w(0, 2), w(1, 0), w(1, 1), w(1, 2); break;
    case MotionModel::homography: p << w(0, 0), w(0, 1), w(0, 2), w(1, 0), w(1, 1), w(1, 2), w(2, 0), w(2, 1); break;
  }
  return p;
}

Eigen::Matrix3d matrix_of(const Eigen::VectorXd& p, MotionModel m) {
  Eigen::Matrix3d w = Eigen::Matrix3d::Identity();
  switch (m) {
    case MotionModel::translation:
      w(0, 2) = p(0);
      w(1, 2) = p(1);
      break;
    case MotionModel::euclidean:
      w(0, 0) = std::cos(p(0));
      w(0, 1) = -std::sin(p(0));
      w(1, 0) = std::sin(p(0));
      w(1, 1) = std::cos(p(0));
      w(0, 2) = p(1);
      w(1, 2) = p(2);
      break;
    case MotionModel::homography:
      w(2, 0) = p(6);
      w(2, 1) = p(7);
      [[fallthrough]];
    case MotionModel::affine:
      w(0, 0) = p(0);
      w(0, 1) = p(1);
      w(0, 2) = p(2);
      w(1, 0) = p(3);
      w(1, 1) = p(4);
      w(1, 2) = p(5);
      break;
  }
  return w;
}

// 2x area reduction; an odd trailing row/column is dropped so that coarse
// pixel centers sit at fine coordinate 2x + 0.5.
Plane reduce(const Plane& in) {
  const Eigen::Index h = in.rows() / 2, w = in.cols() / 2;
  Plane out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      out(y, x) = 0.25 * (in(2 * y, 2 * x) + in(2 * y + 1, 2 * x) + in(2 * y, 2 * x + 1) + in(2 * y + 1, 2 * x + 1));
  return out;
}

double bilinear(const Plane& p, double x, double y) {
  const auto w = static_cast<int>(p.cols()), h = static_cast<int>(p.rows());
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  return (p(y0, x0) * (1 - fx) + p(y0, x1) * fx) * (1 - fy) + (p(y1, x0) * (1 - fx) + p(y1, x1) * fx) * fy;
}

struct Level {
  Plane tmpl, input, gx, gy;
};

Level make_level(const Plane& base, const Plane& frame, double sigma) {
  Level l;
  l.tmpl = sigma > 0 ? gaussian_blur(base, sigma) : base;
  l.input = sigma > 0 ? gaussian_blur(frame, sigma) : frame;
  const auto h = l.input.rows(), w = l.input.cols();
  l.gx = Plane::Zero(h, w);
  l.gy = Plane::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      l.gx(y, x) = 0.5 * (l.input(y, std::min(x + 1, w - 1)) - l.input(y, std::max<Eigen::Index>(x - 1, 0)));
      l.gy(y, x) = 0.5 * (l.input(std::min(y + 1, h - 1), x) - l.input(std::max<Eigen::Index>(y - 1, 0), x));
    }
  return l;
}

// Samples of the template and the warped input over pixels whose warped
// position lands inside the input.
struct WarpedSamples {
  std::vector<Eigen::Index> xs, ys;
  Eigen::VectorXd tmpl, warped, gx, gy;
  Eigen::VectorXd u, v, den;
};

WarpedSamples sample(const Level& lv, const Eigen::Matrix3d& w, bool with_gradients) {
  WarpedSamples s;
  const auto h = lv.input.rows(), wd = lv.input.cols();
  std::vector<double> t, iw, gx, gy, us, vs, dens;
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < wd; ++x) {
      const double den = w(2, 0) * x + w(2, 1) * y + w(2, 2);
      const double u = (w(0, 0) * x + w(0, 1) * y + w(0, 2)) / den;
      const double v = (w(1, 0) * x + w(1, 1) * y + w(1, 2)) / den;
      if (!(u >= 0.0 && v >= 0.0 && u <= wd - 1 && v <= h - 1)) continue;
      s.xs.push_back(x);
      s.ys.push_back(y);
      t.push_back(lv.tmpl(y, x));
      iw.push_back(bilinear(lv.input, u, v));
      if (with_gradients) {
        gx.push_back(bilinear(lv.gx, u, v));
        gy.push_back(bilinear(lv.gy, u, v));
        us.push_back(u);
        vs.push_back(v);
        dens.push_back(den);
      }
    }
  auto to_vec = [](const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); };
  s.tmpl = to_vec(t);
  s.warped = to_vec(iw);
  if (with_gradients) {
    s.gx = to_vec(gx);
    s.gy = to_vec(gy);
    s.u = to_vec(us);
    s.v = to_vec(vs);
    s.den = to_vec(dens);
  }
  return s;
}

double ecc_of(const WarpedSamples& s) {
  if (s.tmpl.size() < 2) return -1.0;
  const Eigen::VectorXd t = s.tmpl.array() - s.tmpl.mean();
  const Eigen::VectorXd i = s.warped.array() - s.warped.mean();
  const double nt = t.norm(), ni = i.norm();
  if (nt == 0.0 || ni == 0.0) return 0.0;
  return t.dot(i) / (nt * ni);
}

Eigen::MatrixXd jacobian(const WarpedSamples& s, const Eigen::VectorXd& p, MotionModel m) {
  const Eigen::Index n = s.tmpl.size();
  Eigen::MatrixXd j(n, param_count(m));
  for (Eigen::Index k = 0; k < n; ++k) {
    const double x = static_cast<double>(s.xs[k]), y = static_cast<double>(s.ys[k]);
    const double gx = s.gx(k), gy = s.gy(k);
    switch (m) {
      case MotionModel::translation: j.row(k) << gx, gy; break;
      case MotionModel::euclidean: {
        const double c = std::cos(p(0)), sn = std::sin(p(0));
        j.row(k) << gx * (-sn * x - c * y) + gy * (c * x - sn * y), gx, gy;
        break;
      }
      case MotionModel::affine: j.row(k) << gx * x, gx * y, gx, gy * x, gy * y, gy; break;
      case MotionModel::homography: {
        const double id = 1.0 / s.den(k);
        const double gxd = gx * id, gyd = gy * id;
        const double proj = -(gxd * s.u(k) + gyd * s.v(k));
        j.row(k) << gxd * x, gxd * y, gxd, gyd * x, gyd * y, gyd, proj * x, proj * y;
        break;
      }
    }
  }
  return j;
}

Homography registered(const Eigen::Matrix3d& w) { return Homography(w).inverse(); }

}  // namespace

AlignmentResult estimate_transform(const Image& frame, const Image& base, const EccConfig& cfg) {
  cfg.validate();
  if (frame.height() != base.height() || frame.width() != base.width())
    throw DimensionError("frame and base differ in size");
  const Plane base_luma = luma_plane(base), frame_luma = luma_plane(frame);
  auto variance = [](const Plane& p) { return (p - p.mean()).square().mean(); };
  if (variance(base_luma) < 1e-12 || variance(frame_luma) < 1e-12)
    throw DegenerateInputError("ECC needs non-zero intensity variance in both images");

  std::vector<Plane> bases{base_luma}, frames{frame_luma};
  for (int l = 1; l < cfg.pyramid_levels; ++l) {
    if (bases.back().rows() < 16 || bases.back().cols() < 16) break;
    bases.push_back(reduce(bases.back()));
    frames.push_back(reduce(frames.back()));
  }
  const int levels = static_cast<int>(bases.size());
  const MotionModel model = cfg.motion_model;
  const int np = param_count(model);

  Eigen::Matrix3d scale_up = Eigen::Matrix3d::Identity();
  scale_up(0, 0) = scale_up(1, 1) = 2.0;
  scale_up(0, 2) = scale_up(1, 2) = 0.5;

  // Warp from template coordinates into input coordinates at the coarsest level.
  Eigen::Matrix3d w = Eigen::Matrix3d::Identity();
  for (int l = 1; l < levels; ++l) w = scale_up.inverse() * w * scale_up;

  AlignmentResult result;
  result.converged = false;
  for (int l = levels - 1; l >= 0; --l) {
    const Level lv = make_level(bases[l], frames[l], cfg.gaussian_blur_sigma);
    const bool finest = l == 0;
    Eigen::VectorXd p = params_of(w, model);
    WarpedSamples cur = sample(lv, w, true);
    double ecc = ecc_of(cur);
    if (finest) result.ecc_trace.push_back(ecc);
    bool level_converged = false;
    for (int it = 0; it < cfg.max_iterations; ++it) {
      ++result.iterations_used;
      if (cur.tmpl.size() <= np) throw ConvergenceError("warp moved the frame out of view", registered(w));
      const Eigen::VectorXd t = cur.tmpl.array() - cur.tmpl.mean();
      const Eigen::VectorXd iw = cur.warped.array() - cur.warped.mean();
      const Eigen::MatrixXd j = jacobian(cur, p, model);
      const Eigen::MatrixXd hess = j.transpose() * j;
      const Eigen::LDLT<Eigen::MatrixXd> solver(hess);
      const Eigen::VectorXd ip = j.transpose() * iw;
      const Eigen::VectorXd tp = j.transpose() * t;
      const Eigen::VectorXd hip = solver.solve(ip);
      const double corr = t.dot(iw);
      const double lambda_n = iw.squaredNorm() - ip.dot(hip);
      const double lambda_d = corr - tp.dot(hip);
      if (!(lambda_d > 0.0))
        throw ConvergenceError("ECC update has no ascent solution (correlation would be minimized)", registered(w));
      const double lambda = lambda_n / lambda_d;
      const Eigen::VectorXd err = lambda * t - iw;
      const Eigen::VectorXd delta = solver.solve(j.transpose() * err);
      if (!delta.allFinite()) throw ConvergenceError("non-finite ECC parameter update", registered(w));

      // Backtrack until the objective does not decrease.
      double step = 1.0;
      bool accepted = false;
      for (int k = 0; k < 12; ++k, step *= 0.5) {
        const Eigen::VectorXd cand = p + step * delta;
        const Eigen::Matrix3d wc = matrix_of(cand, model);
        if (!wc.allFinite() || std::abs(wc.determinant()) < 1e-12) continue;
        WarpedSamples next = sample(lv, wc, true);
        const double e = ecc_of(next);
        if (e >= ecc) {
          p = cand;
          w = wc;
          cur = std::move(next);
          ecc = e;
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        level_converged = true;
        break;
      }
      if (finest) result.ecc_trace.push_back(ecc);
      if ((step * delta).norm() < cfg.epsilon) {
        level_converged = true;
        break;
      }
    }
    if (finest) result.converged = level_converged;
    if (l > 0) w = scale_up * w * scale_up.inverse();
  }

  result.homography = registered(w);
  {
    Level raw{base_luma, frame_luma, Plane(), Plane()};
    result.final_ecc = ecc_of(sample(raw, w, false));
  }
  return result;
}

AlignedBurst align_burst(const Burst& burst, const EccConfig& cfg) {
  burst.validate();
  cfg.validate();
  AlignedBurst out;
  out.burst = burst;
  out.results.resize(burst.size());
  out.results[0].ecc_trace = {1.0};
  parallel_for(burst.size() - 1, [&](std::size_t k) {
    const std::size_t i = k + 1;
    AlignmentResult r;
    try {
      r = estimate_transform(burst.frames[i], burst.base(), cfg);
    } catch (const Error& e) {
      r = AlignmentResult{};
      r.converged = false;
      r.final_ecc = correlation_coefficient(luma_plane(burst.base()), luma_plane(burst.frames[i]));
      r.error = "frame " + std::to_string(i) + ": " + e.what();
    }
    out.burst.frames[i] = warp(burst.frames[i], r.homography, cfg.warp_interpolation);
    out.results[i] = std::move(r);
  });
  // Registered frames no longer carry their original motion.
  if (out.burst.true_transforms) out.burst.true_transforms.reset();
  return out;
}

std::vector<Eigen::Vector2d> measure_shifts(const Burst& burst, const EccConfig& cfg) {
  burst.validate();
  if (burst.size() < 2) throw DimensionError("shift measurement needs at least two frames");
  const Eigen::Vector2d center((burst.base().width() - 1) / 2.0, (burst.base().height() - 1) / 2.0);
  std::vector<Eigen::Vector2d> shifts(burst.size() - 1);
  parallel_for(burst.size() - 1, [&](std::size_t k) {
    const auto r = estimate_transform(burst.frames[k + 1], burst.base(), cfg);
    shifts[k] = r.motion().displacement_at(center);
  });
  return shifts;
}

ShiftHistogram shift_histogram(const std::vector<Eigen::Vector2d>& shifts_lr, int scale, double fine_bin_hr,
                               double fine_max_hr) {
  ShiftHistogram h;
  const auto bins = static_cast<std::size_t>(std::ceil(fine_max_hr / fine_bin_hr));
  for (std::size_t b = 0; b <= bins; ++b) h.fine_edges_hr.push_back(b * fine_bin_hr);
  h.fine_counts.assign(bins + 1, 0);  // last bin collects overflow
  for (const auto& s : shifts_lr) {
    const double m = s.norm();
    h.magnitudes_lr.push_back(m);
    const double hr = m * scale;
    h.bucket_fractions[shift_bucket(hr)] += 1.0;
    h.fine_counts[std::min(bins, static_cast<std::size_t>(hr / fine_bin_hr))] += 1;
  }
  if (!shifts_lr.empty())
    for (auto& f : h.bucket_fractions) f /= static_cast<double>(shifts_lr.size());
  return h;
}

nlohmann::json to_json(const AlignmentResult& r) {
  nlohmann::json j = {{"homography", to_json(r.homography)},
                      {"final_ecc", r.final_ecc},
                      {"iterations_used", r.iterations_used},
                      {"converged", r.converged}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

nlohmann::json to_json(const ShiftHistogram& h) {
  return {{"magnitudes_lr", h.magnitudes_lr},
          {"bucket_edges_hr", {0.0, 1.0, 2.0}},
          {"bucket_fractions", h.bucket_fractions},
          {"fine_edges_hr", h.fine_edges_hr},
          {"fine_counts", h.fine_counts}};
}

}  // namespace bsrkit
