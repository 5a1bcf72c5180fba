#include "bsrkit/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "bsrkit/error.hpp"

namespace bsrkit {

namespace {

void require_same(const Image& a, const Image& b) {
  if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
    throw DimensionError("images differ in shape");
}

Plane gaussian_window() {
  Plane g(11, 11);
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) g(y, x) = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * 1.5 * 1.5));
  return g / g.sum();
}

// Valid-region correlation with the 11x11 window.
Plane filter_valid(const Plane& p, const Plane& g) {
  const Eigen::Index h = p.rows() - 10, w = p.cols() - 10;
  Plane out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) out(y, x) = (p.block(y, x, 11, 11) * g).sum();
  return out;
}

}  // namespace

double psnr(const Image& sr, const Image& gt) {
  require_same(sr, gt);
  double se = 0.0;
  const auto& a = sr.pixels();
  const auto& b = gt.pixels();
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& sr, const Image& gt) {
  require_same(sr, gt);
  if (sr.height() < 11 || sr.width() < 11) throw DimensionError("SSIM needs images of at least 11x11");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const Plane g = gaussian_window();
  double total = 0.0;
  for (int c = 0; c < sr.channels(); ++c) {
    const Plane x = sr.plane(c), y = gt.plane(c);
    const Plane mx = filter_valid(x, g), my = filter_valid(y, g);
    const Plane sxx = filter_valid(x * x, g) - mx * mx;
    const Plane syy = filter_valid(y * y, g) - my * my;
    const Plane sxy = filter_valid(x * y, g) - mx * my;
    const Plane map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    total += map.mean();
  }
  return total / sr.channels();
}

MetricReport evaluate(const std::vector<std::pair<std::string, Image>>& pred,
                      const std::vector<std::pair<std::string, Image>>& gt) {
  if (pred.size() != gt.size()) throw DimensionError("prediction and ground-truth counts differ");
  if (pred.empty()) throw DimensionError("nothing to evaluate");
  MetricReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    MetricEntry e{pred[i].first, psnr(pred[i].second, gt[i].second), ssim(pred[i].second, gt[i].second)};
    r.psnr_db += e.psnr_db;
    r.ssim += e.ssim;
    r.per_image.push_back(std::move(e));
  }
  r.psnr_db /= static_cast<double>(pred.size());
  r.ssim /= static_cast<double>(pred.size());
  return r;
}

MetricReport evaluate_dirs(const std::filesystem::path& pred, const std::filesystem::path& gt) {
  if (!std::filesystem::is_directory(pred)) throw IoError("not a directory: " + pred.string());
  if (!std::filesystem::is_directory(gt)) throw IoError("not a directory: " + gt.string());
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(pred))
    if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<std::pair<std::string, Image>> p, g;
  for (const auto& n : names) {
    if (!std::filesystem::exists(gt / n)) throw IoError("no ground truth for " + n);
    p.emplace_back(n, read_png(pred / n));
    g.emplace_back(n, read_png(gt / n));
  }
  return evaluate(p, g);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : r.per_image) per.push_back({{"name", e.name}, {"psnr_db", e.psnr_db}, {"ssim", e.ssim}});
  return {{"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"per_image", per}};
}

std::vector<double> glcm_matrix(const Image& img, int levels, int di, int dj) {
  if (levels < 2) throw ConfigError("GLCM needs at least 2 levels");
  const Plane l = luma_plane(img);
  const int h = static_cast<int>(l.rows()), w = static_cast<int>(l.cols());
  auto q = [&](int y, int x) { return std::min(levels - 1, static_cast<int>(std::floor(l(y, x) * levels))); };
  std::vector<double> p(static_cast<std::size_t>(levels * levels), 0.0);
  double total = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int y2 = y + di, x2 = x + dj;
      if (y2 < 0 || y2 >= h || x2 < 0 || x2 >= w) continue;
      const int a = q(y, x), b = q(y2, x2);
      p[a * levels + b] += 1.0;
      p[b * levels + a] += 1.0;
      total += 2.0;
    }
  if (total == 0.0) throw DimensionError("GLCM offset leaves no pixel pairs");
  for (auto& v : p) v /= total;
  return p;
}

GlcmFeatures glcm_features(const Image& img, int levels, int di, int dj) {
  const auto p = glcm_matrix(img, levels, di, dj);
  GlcmFeatures f;
  f.levels = levels;
  f.di = di;
  f.dj = dj;
  double asm_ = 0.0, mu = 0.0;
  for (int i = 0; i < levels; ++i)
    for (int j = 0; j < levels; ++j) {
      const double v = p[i * levels + j];
      f.contrast += v * (i - j) * (i - j);
      f.dissimilarity += v * std::abs(i - j);
      asm_ += v * v;
      if (v > 0.0) f.entropy -= v * std::log2(v);
      mu += i * v;
    }
  f.energy = std::sqrt(asm_);
  double var = 0.0, cov = 0.0;
  for (int i = 0; i < levels; ++i)
    for (int j = 0; j < levels; ++j) {
      const double v = p[i * levels + j];
      var += v * (i - mu) * (i - mu);
      cov += v * (i - mu) * (j - mu);
    }
  // Symmetric matrix: both marginals share mean and variance.
  if (var > 1e-15) {
    f.correlation = cov / var;
    f.correlation_valid = true;
  } else {
    f.correlation = std::numeric_limits<double>::quiet_NaN();
  }
  return f;
}

nlohmann::json to_json(const GlcmFeatures& f) {
  return {{"contrast", f.contrast},
          {"entropy", f.entropy},
          {"dissimilarity", f.dissimilarity},
          {"correlation", f.correlation_valid ? nlohmann::json(f.correlation) : nlohmann::json(nullptr)},
          {"correlation_valid", f.correlation_valid},
          {"energy", f.energy},
          {"levels", f.levels},
          {"offset", {f.di, f.dj}}};
}

namespace {

FeatureHistogram histogram_of(std::vector<double> values, std::size_t bins) {
  FeatureHistogram h;
  h.values = std::move(values);
  if (h.values.empty()) return h;
  double s = 0.0;
  for (double v : h.values) s += v;
  h.mean = s / static_cast<double>(h.values.size());
  const auto [lo_it, hi_it] = std::minmax_element(h.values.begin(), h.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    h.edges = {lo, hi};
    h.counts = {h.values.size()};
    return h;
  }
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / bins);
  h.counts.assign(bins, 0);
  for (double v : h.values)
    h.counts[std::min(bins - 1, static_cast<std::size_t>((v - lo) / (hi - lo) * bins))]++;
  return h;
}

nlohmann::json to_json(const FeatureHistogram& h) {
  return {{"values", h.values}, {"mean", h.mean}, {"edges", h.edges}, {"counts", h.counts}};
}

}  // namespace

DiversitySummary diversity_summary(const std::vector<Image>& images, int levels, std::size_t bins) {
  if (images.empty()) throw DimensionError("diversity summary needs at least one image");
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  std::vector<double> con, ent, dis, cor, ene;
  for (const auto& img : images) {
    const auto f = glcm_features(img, levels);
    con.push_back(f.contrast);
    ent.push_back(f.entropy);
    dis.push_back(f.dissimilarity);
    if (f.correlation_valid) cor.push_back(f.correlation);
    ene.push_back(f.energy);
  }
  DiversitySummary d;
  d.images = images.size();
  d.contrast = histogram_of(con, bins);
  d.entropy = histogram_of(ent, bins);
  d.dissimilarity = histogram_of(dis, bins);
  d.correlation = histogram_of(cor, bins);
  d.energy = histogram_of(ene, bins);
  return d;
}

nlohmann::json to_json(const DiversitySummary& d) {
  return {{"images", d.images},
          {"contrast", to_json(d.contrast)},
          {"entropy", to_json(d.entropy)},
          {"dissimilarity", to_json(d.dissimilarity)},
          {"correlation", to_json(d.correlation)},
          {"energy", to_json(d.energy)}};
}

}  // namespace bsrkit
