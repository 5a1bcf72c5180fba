#include "bsrkit/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include "bsrkit/error.hpp"

namespace bsrkit {

SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "mixed") return SceneKind::mixed;
  if (s == "shapes") return SceneKind::shapes;
  if (s == "stripes") return SceneKind::stripes;
  if (s == "checker") return SceneKind::checker;
  if (s == "blurred_noise") return SceneKind::blurred_noise;
  if (s == "smooth") return SceneKind::smooth;
  throw ConfigError("unknown scene kind: " + s);
}

std::string to_string(SceneKind k) {
  switch (k) {
    case SceneKind::mixed: return "mixed";
    case SceneKind::shapes: return "shapes";
    case SceneKind::stripes: return "stripes";
    case SceneKind::checker: return "checker";
    case SceneKind::blurred_noise: return "blurred_noise";
    case SceneKind::smooth: return "smooth";
  }
  return "?";
}

Interpolation interpolation_from_string(const std::string& s) {
  if (s == "bilinear") return Interpolation::bilinear;
  if (s == "bicubic") return Interpolation::bicubic;
  throw ConfigError("unknown interpolation: " + s);
}

std::string to_string(Interpolation i) { return i == Interpolation::bilinear ? "bilinear" : "bicubic"; }

namespace {

using Json = nlohmann::json;

template <class F>
void for_keys(const Json& j, const std::string& section, F&& handle) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!handle(k, v)) throw ConfigError("unknown key in " + section + ": " + k);
}

BurstgenConfig burstgen_from_json(const Json& j) {
  BurstgenConfig c;
  for_keys(j, "burstgen", [&](const std::string& k, const Json& v) {
    if (k == "hr_size") c.hr_size = v.get<int>();
    else if (k == "scale") c.scale = v.get<int>();
    else if (k == "frames") c.frames = v.get<int>();
    else if (k == "noise_sigma") c.noise_sigma = v.get<double>();
    else if (k == "distribution") c.distribution = shift_distribution_from_json(v);
    else if (k == "scene") c.scene = scene_kind_from_string(v.get<std::string>());
    else return false;
    return true;
  });
  if (c.hr_size < 1 || c.scale < 1 || c.frames < 1 || c.hr_size % c.scale != 0)
    throw ConfigError("burstgen sizes must be positive with hr_size divisible by scale");
  if (c.noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
  return c;
}

DatasetConfig dataset_from_json(const Json& j) {
  DatasetConfig c;
  for_keys(j, "dataset", [&](const std::string& k, const Json& v) {
    if (k == "train_images") c.train_images = v.get<int>();
    else if (k == "val_images") c.val_images = v.get<int>();
    else if (k == "patch") c.patch = v.get<int>();
    else if (k == "stride") c.stride = v.get<int>();
    else if (k == "align") c.align = v.get<bool>();
    else return false;
    return true;
  });
  if (c.train_images < 0 || c.val_images < 0 || c.patch < 1 || c.stride < 1)
    throw ConfigError("dataset counts must be non-negative and patch/stride positive");
  return c;
}

EccConfig ecc_from_json(const Json& j) {
  EccConfig c;
  for_keys(j, "align", [&](const std::string& k, const Json& v) {
    if (k == "motion_model") c.motion_model = motion_model_from_string(v.get<std::string>());
    else if (k == "max_iterations") c.max_iterations = v.get<int>();
    else if (k == "epsilon") c.epsilon = v.get<double>();
    else if (k == "pyramid_levels") c.pyramid_levels = v.get<int>();
    else if (k == "gaussian_blur_sigma") c.gaussian_blur_sigma = v.get<double>();
    else if (k == "warp_interpolation") c.warp_interpolation = interpolation_from_string(v.get<std::string>());
    else return false;
    return true;
  });
  c.validate();
  return c;
}

Json to_json(const EccConfig& c) {
  return {{"motion_model", to_string(c.motion_model)},
          {"max_iterations", c.max_iterations},
          {"epsilon", c.epsilon},
          {"pyramid_levels", c.pyramid_levels},
          {"gaussian_blur_sigma", c.gaussian_blur_sigma},
          {"warp_interpolation", to_string(c.warp_interpolation)}};
}

}  // namespace

PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (!j.contains("schema_version")) throw ConfigError("config lacks schema_version");
    for_keys(j, "config", [&](const std::string& k, const Json& v) {
      if (k == "schema_version") {
        c.schema_version = v.get<int>();
        if (c.schema_version != kSchemaVersion)
          throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version) + " (expected " +
                            std::to_string(kSchemaVersion) + ")");
      } else if (k == "burstgen") c.burstgen = burstgen_from_json(v);
      else if (k == "dataset") c.dataset = dataset_from_json(v);
      else if (k == "align") c.align = ecc_from_json(v);
      else if (k == "fuse") {
        for_keys(v, "fuse", [&](const std::string& fk, const Json& fv) {
          if (fk == "mode") c.fusion_mode = fusion_mode_from_string(fv.get<std::string>());
          else if (fk == "normalize") c.normalize_weights = fv.get<bool>();
          else return false;
          return true;
        });
      } else if (k == "decode") c.decode = decoder_config_from_json(v);
      else if (k == "train") c.train = train_config_from_json(v);
      else if (k == "eval") {
        for_keys(v, "eval", [&](const std::string& ek, const Json& ev) {
          if (ek == "glcm_levels") c.eval.glcm_levels = ev.get<int>();
          else if (ek == "histogram_bins") c.eval.histogram_bins = ev.get<std::size_t>();
          else return false;
          return true;
        });
      } else return false;
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.decode.scale != static_cast<std::size_t>(c.burstgen.scale))
    throw ConfigError("decode.scale must equal burstgen.scale");
  return c;
}

Json to_json(const PipelineConfig& c) {
  return {{"schema_version", c.schema_version},
          {"burstgen",
           {{"hr_size", c.burstgen.hr_size},
            {"scale", c.burstgen.scale},
            {"frames", c.burstgen.frames},
            {"noise_sigma", c.burstgen.noise_sigma},
            {"distribution", to_json(c.burstgen.distribution)},
            {"scene", to_string(c.burstgen.scene)}}},
          {"dataset",
           {{"train_images", c.dataset.train_images},
            {"val_images", c.dataset.val_images},
            {"patch", c.dataset.patch},
            {"stride", c.dataset.stride},
            {"align", c.dataset.align}}},
          {"align", to_json(c.align)},
          {"fuse", {{"mode", to_string(c.fusion_mode)}, {"normalize", c.normalize_weights}}},
          {"decode", to_json(c.decode)},
          {"train", to_json(c.train)},
          {"eval", {{"glcm_levels", c.eval.glcm_levels}, {"histogram_bins", c.eval.histogram_bins}}}};
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

std::vector<Eigen::Vector2d> true_center_shifts(const Burst& burst) {
  if (!burst.true_transforms) throw ContractError("burst has no true transforms");
  const Eigen::Vector2d c((burst.base().width() - 1) / 2.0, (burst.base().height() - 1) / 2.0);
  std::vector<Eigen::Vector2d> out;
  for (std::size_t i = 1; i < burst.size(); ++i) out.push_back((*burst.true_transforms)[i].displacement_at(c));
  return out;
}

namespace {

std::vector<GeneratedBurst> make_pairs(const PipelineConfig& cfg, int count, std::uint64_t seed) {
  const auto& g = cfg.burstgen;
  std::vector<GeneratedBurst> out;
  for (int k = 0; k < count; ++k) {
    const std::uint64_t s = seed + 7919ull * static_cast<std::uint64_t>(k);
    const Image hr = synthesize_scene(g.hr_size, g.hr_size, s, g.scene);
    GeneratedBurst burst = generate_burst(hr, g.frames, g.scale, g.distribution, g.noise_sigma, s + 1);
    if (cfg.dataset.align && burst.burst.size() > 1) {
      auto aligned = align_burst(burst.burst, cfg.align);
      aligned.burst.true_transforms = burst.burst.true_transforms;
      burst.burst = std::move(aligned.burst);
    }
    for (auto& p : crop_patch_pairs(burst.burst, burst.ground_truth, cfg.dataset.patch, cfg.dataset.stride))
      out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

Dataset build_dataset(const PipelineConfig& cfg, std::uint64_t seed) {
  Dataset d;
  d.train = make_pairs(cfg, cfg.dataset.train_images, seed);
  d.val = make_pairs(cfg, cfg.dataset.val_images, seed + 1000003ull);
  return d;
}

Dataset load_dataset(const std::filesystem::path& root, const PipelineConfig& cfg) {
  if (!std::filesystem::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(root / "burst.json")) dirs.push_back(root);
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "burst.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<GeneratedBurst> all;
  for (const auto& dir : dirs) {
    auto loaded = read_burst(dir);
    if (!loaded.ground_truth) continue;
    Burst b = loaded.burst;
    if (cfg.dataset.align && b.size() > 1) b = align_burst(b, cfg.align).burst;
    for (auto& p : crop_patch_pairs(b, *loaded.ground_truth, cfg.dataset.patch, cfg.dataset.stride))
      all.push_back(std::move(p));
  }
  if (all.empty()) throw IoError("no bursts with ground truth under " + root.string());
  Dataset d;
  // Last ceil(20%) of pairs (at least one when possible) validate.
  const std::size_t nval = all.size() > 1 ? std::max<std::size_t>(1, all.size() / 5) : 0;
  d.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(nval));
  d.val.assign(all.end() - static_cast<std::ptrdiff_t>(nval), all.end());
  return d;
}

GeneratedBurst with_frames(const GeneratedBurst& g, int n) {
  GeneratedBurst out = g;
  out.burst = take_frames(g.burst, n);
  return out;
}

GeneratedBurst as_copies(const GeneratedBurst& g, int n) {
  GeneratedBurst out = g;
  out.burst.frames.assign(static_cast<std::size_t>(n), g.burst.base());
  out.burst.true_transforms = std::vector<Homography>(static_cast<std::size_t>(n), Homography::identity());
  return out;
}

std::vector<std::string> experiment_presets() { return {"burst_count_sweep", "copies_vs_shifted", "fusion_ablation"}; }

std::vector<ExperimentVariant> preset_variants(const std::string& preset) {
  if (preset == "burst_count_sweep") {
    std::vector<ExperimentVariant> v;
    for (int n : {1, 2, 4, 8, 14}) v.push_back({"N=" + std::to_string(n), n, false, FusionMode::faf});
    return v;
  }
  if (preset == "copies_vs_shifted")
    return {{"(base frame) x 8", 8, true, FusionMode::faf}, {"burst x 8", 8, false, FusionMode::faf}};
  if (preset == "fusion_ablation")
    return {{"VAF", 8, false, FusionMode::vaf}, {"FAF", 8, false, FusionMode::faf}, {"FAF*", 8, false, FusionMode::faf_star}};
  throw ConfigError("unknown experiment preset: " + preset);
}

std::vector<ExperimentRow> run_experiment(const std::vector<ExperimentVariant>& variants, const Dataset& data,
                                          const PipelineConfig& cfg, std::uint64_t seed,
                                          const std::function<void(const ExperimentRow&)>& progress) {
  std::vector<ExperimentRow> rows;
  for (const auto& v : variants) {
    auto convert = [&](const std::vector<GeneratedBurst>& in) {
      std::vector<TrainSample> out;
      for (const auto& g : in) {
        if (static_cast<std::size_t>(v.frames) > g.burst.size())
          throw ConfigError("variant " + v.label + " needs " + std::to_string(v.frames) + " frames but bursts have " +
                            std::to_string(g.burst.size()));
        out.push_back(to_sample(v.copies ? as_copies(g, v.frames) : with_frames(g, v.frames)));
      }
      return out;
    };
    const auto train_set = convert(data.train), val_set = convert(data.val);
    Model model = Model::init(cfg.decode, v.fusion, seed);
    model.normalize_weights = cfg.normalize_weights;
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.checkpoint_dir.reset();
    const auto report = train(model, train_set, val_set, tc);
    ExperimentRow row;
    row.variant = v;
    row.val_psnr = report.final_val_psnr;
    row.val_ssim = report.final_val_ssim;
    for (const auto& e : report.epochs) row.epoch_psnr.push_back(e.val_psnr);
    row.final_loss = report.loss_trace.empty() ? 0.0 : report.loss_trace.back();
    rows.push_back(row);
    if (progress) progress(row);
  }
  return rows;
}

nlohmann::json to_json(const ExperimentRow& r) {
  return {{"label", r.variant.label},
          {"frames", r.variant.frames},
          {"input", r.variant.copies ? "copies" : "burst"},
          {"fusion", to_string(r.variant.fusion)},
          {"val_psnr", r.val_psnr},
          {"val_ssim", r.val_ssim},
          {"epoch_val_psnr", r.epoch_psnr},
          {"final_loss", r.final_loss}};
}

}  // namespace bsrkit
