#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsrkit/align.hpp"
#include "bsrkit/burst.hpp"
#include "bsrkit/decode.hpp"
#include "bsrkit/fuse.hpp"
#include "bsrkit/train.hpp"

namespace bsrkit {

inline constexpr int kSchemaVersion = 1;

struct BurstgenConfig {
  int hr_size = 128;
  int scale = 4;
  int frames = 8;
  double noise_sigma = 0.02;
  ShiftDistribution distribution;
  SceneKind scene = SceneKind::mixed;
};

struct DatasetConfig {
  int train_images = 24;
  int val_images = 6;
  int patch = 32;    // LR patch size
  int stride = 32;
  bool align = true;  // ECC-register frames before training
};

struct EvalConfig {
  int glcm_levels = 16;
  std::size_t histogram_bins = 10;
};

struct PipelineConfig {
  int schema_version = kSchemaVersion;
  BurstgenConfig burstgen;
  DatasetConfig dataset;
  EccConfig align;
  FusionMode fusion_mode = FusionMode::faf;
  bool normalize_weights = false;
  DecoderConfig decode;
  TrainConfig train;
  EvalConfig eval;
};

// Unknown keys at any level and schema mismatches are ConfigErrors.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

SceneKind scene_kind_from_string(const std::string& s);
std::string to_string(SceneKind k);
Interpolation interpolation_from_string(const std::string& s);
std::string to_string(Interpolation i);

// LR-pixel displacement of the frame center for each true transform.
std::vector<Eigen::Vector2d> true_center_shifts(const Burst& burst);

struct Dataset {
  std::vector<GeneratedBurst> train, val;
};

// Synthetic scenes -> bursts -> (optionally aligned) LR patch pairs.
Dataset build_dataset(const PipelineConfig& cfg, std::uint64_t seed);
// Every burst directory under `root` (including root itself) with a gt.png.
Dataset load_dataset(const std::filesystem::path& root, const PipelineConfig& cfg);

// Burst variants used by the trend studies.
GeneratedBurst with_frames(const GeneratedBurst& g, int n);
// N copies of the base frame (the "(base frame) x N" condition).
GeneratedBurst as_copies(const GeneratedBurst& g, int n);

struct ExperimentVariant {
  std::string label;
  int frames = 8;
  bool copies = false;
  FusionMode fusion = FusionMode::faf;
};

struct ExperimentRow {
  ExperimentVariant variant;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
  std::vector<double> epoch_psnr;
  double final_loss = 0.0;
};

std::vector<std::string> experiment_presets();
std::vector<ExperimentVariant> preset_variants(const std::string& preset);

// Trains each variant from the same initialization seed and budget.
// `progress` (optional) is called after each variant.
std::vector<ExperimentRow> run_experiment(const std::vector<ExperimentVariant>& variants, const Dataset& data,
                                          const PipelineConfig& cfg, std::uint64_t seed,
                                          const std::function<void(const ExperimentRow&)>& progress = {});
nlohmann::json to_json(const ExperimentRow& r);

}  // namespace bsrkit
