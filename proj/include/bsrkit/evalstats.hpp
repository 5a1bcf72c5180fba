#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsrkit/image.hpp"

namespace bsrkit {

inline constexpr double kPsnrCapDb = 100.0;

// 10 log10(1/MSE) over all channels, range 1.0, capped at 100 dB.
double psnr(const Image& sr, const Image& gt);
// Mean local SSIM (11x11 Gaussian, sigma 1.5, valid region), channels averaged.
double ssim(const Image& sr, const Image& gt);

struct MetricEntry {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::vector<MetricEntry> per_image;
};

MetricReport evaluate(const std::vector<std::pair<std::string, Image>>& pred,
                      const std::vector<std::pair<std::string, Image>>& gt);
// Pairs PNGs by file name.
MetricReport evaluate_dirs(const std::filesystem::path& pred, const std::filesystem::path& gt);
nlohmann::json to_json(const MetricReport& r);

struct GlcmFeatures {
  double contrast = 0.0;
  double entropy = 0.0;
  double dissimilarity = 0.0;
  double correlation = 0.0;  // NaN when correlation_valid is false
  bool correlation_valid = false;
  double energy = 0.0;       // sqrt of the angular second moment
  int levels = 16;
  int di = 0, dj = 1;
};

// Symmetric normalized co-occurrence matrix (levels x levels, row-major).
std::vector<double> glcm_matrix(const Image& img, int levels = 16, int di = 0, int dj = 1);
GlcmFeatures glcm_features(const Image& img, int levels = 16, int di = 0, int dj = 1);
nlohmann::json to_json(const GlcmFeatures& f);

struct FeatureHistogram {
  std::vector<double> values;
  double mean = 0.0;
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

struct DiversitySummary {
  FeatureHistogram contrast, entropy, dissimilarity, correlation, energy;
  std::size_t images = 0;
};

DiversitySummary diversity_summary(const std::vector<Image>& images, int levels = 16, std::size_t bins = 10);
nlohmann::json to_json(const DiversitySummary& d);

}  // namespace bsrkit
