#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "bsrkit/bft.hpp"
#include "bsrkit/error.hpp"
#include "bsrkit/evalstats.hpp"
#include "bsrkit/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bsrkit;

namespace {

constexpr int kUsageExit = 2;
constexpr int kInternalExit = 1;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Pipeline config JSON");
  cmd->add_option("--seed", c.seed, "Seed for all randomness");
  cmd->add_option("--out", c.out, "Output directory")->required();
}

PipelineConfig config_of(const Common& c) {
  return c.config.empty() ? PipelineConfig{} : load_pipeline_config(c.config);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out);
  return fs::path(out);
}

// Everything but "timestamp" is a pure function of inputs, config and seed.
void emit(const fs::path& out, const std::string& command, json result, double wall_s) {
  json doc = {{"command", command},
              {"result", std::move(result)},
              {"timestamp", {{"utc", utc_now()}, {"wall_time_s", wall_s}}}};
  const auto text = doc.dump(2);
  std::ofstream f(out / "result.json");
  if (!f) throw IoError("cannot write " + (out / "result.json").string());
  f << text << '\n';
  std::cout << text << '\n';
}

json shifts_json(const std::vector<Eigen::Vector2d>& s) {
  json a = json::array();
  for (const auto& v : s) a.push_back({v.x(), v.y()});
  return a;
}

json plane_stats(const Tensor& t) {
  const auto& v = t.values();
  double lo = v[0], hi = v[0], sum = 0.0;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    sum += x;
  }
  return {{"min", lo}, {"max", hi}, {"mean", sum / double(v.size())}};
}

// Per-map min-max scaling; display only.
Image heatmap(const Tensor& map) {
  const auto st = plane_stats(map);
  const double lo = st["min"], hi = st["max"];
  Image img(1, static_cast<int>(map.dim(0)), static_cast<int>(map.dim(1)));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      img.set(0, y, x, hi > lo ? (map.at({std::size_t(y), std::size_t(x)}) - lo) / (hi - lo) : 0.0);
  return img;
}

Model model_for(const std::string& checkpoint, const PipelineConfig& cfg, std::uint64_t seed) {
  if (!checkpoint.empty()) return load_checkpoint(checkpoint).model;
  Model m = Model::init(cfg.decode, cfg.fusion_mode, seed);
  m.normalize_weights = cfg.normalize_weights;
  return m;
}

std::vector<fs::path> burst_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  if (fs::exists(root / "burst.json")) dirs.push_back(root);
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "burst.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no burst directories under " + root.string());
  return dirs;
}

std::string rel(const fs::path& p, const fs::path& base) { return fs::relative(p, base).generic_string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Burst super-resolution toolkit"};
  app.require_subcommand(1);

  Common gen_c, align_c, fuse_c, sr_c, train_c, eval_c, an_c, exp_c;

  auto* gen = app.add_subcommand("generate", "Synthesize LR bursts with known shifts");
  add_common(gen, gen_c);
  std::string gen_input;
  int gen_count = 1;
  int gen_frames = 0;
  bool gen_copies = false;
  gen->add_option("--input", gen_input, "HR PNG (default: procedural scene)");
  gen->add_option("--count", gen_count, "Number of bursts")->check(CLI::PositiveNumber);
  gen->add_option("--frames", gen_frames, "Frames per burst (default: config)");
  gen->add_flag("--copies", gen_copies, "Zero-shift copies condition");

  auto* al = app.add_subcommand("align", "Register burst frames onto the base frame");
  add_common(al, align_c);
  std::string al_burst;
  al->add_option("--burst", al_burst, "Burst directory")->required();

  auto* fu = app.add_subcommand("fuse", "Extract features and fuse a burst");
  add_common(fu, fuse_c);
  std::string fu_burst, fu_ckpt, fu_mode;
  bool fu_align = false;
  fu->add_option("--burst", fu_burst, "Burst directory")->required();
  fu->add_option("--checkpoint", fu_ckpt, "Checkpoint directory (extractor weights)");
  fu->add_option("--mode", fu_mode, "vaf | faf | faf_star");
  fu->add_flag("--align", fu_align, "Register frames first");

  auto* sr = app.add_subcommand("superresolve", "Produce an HR estimate from a burst");
  add_common(sr, sr_c);
  std::string sr_burst, sr_ckpt;
  bool sr_align = false;
  sr->add_option("--burst", sr_burst, "Burst directory")->required();
  sr->add_option("--checkpoint", sr_ckpt, "Checkpoint directory (default: zero-initialized model)");
  sr->add_flag("--align", sr_align, "Register frames first");

  auto* tr = app.add_subcommand("train", "Fit extractor and decoder");
  add_common(tr, train_c);
  std::string tr_data;
  long tr_steps = -1;
  tr->add_option("--data", tr_data, "Directory of burst directories with gt.png (default: synthetic)");
  tr->add_option("--steps", tr_steps, "Override train.steps");

  auto* ev = app.add_subcommand("evaluate", "PSNR/SSIM of predictions against ground truth");
  add_common(ev, eval_c);
  std::string ev_pred, ev_gt;
  ev->add_option("--pred", ev_pred, "Prediction PNG directory")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth PNG directory")->required();

  auto* an = app.add_subcommand("analyze", "Dataset statistics");
  add_common(an, an_c);
  std::string an_shifts, an_glcm;
  auto* o_shifts = an->add_option("--shifts", an_shifts, "Burst directory tree: shift histogram");
  auto* o_glcm = an->add_option("--glcm", an_glcm, "PNG directory: GLCM diversity summary");
  o_shifts->excludes(o_glcm);

  auto* ex = app.add_subcommand("experiment", "Trend studies");
  add_common(ex, exp_c);
  std::string ex_preset, ex_data;
  ex->add_option("--preset", ex_preset, "burst_count_sweep | copies_vs_shifted | fusion_ablation")
      ->required()
      ->check(CLI::IsMember(experiment_presets()));
  ex->add_option("--data", ex_data, "Directory of burst directories (default: synthetic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", {{"kind", "usage"}, {"code", kUsageExit}, {"message", e.what()}}}}.dump() << '\n';
    return kUsageExit;
  }

  if (an->parsed() && an_shifts.empty() && an_glcm.empty()) {
    std::cerr << json{{"error", {{"kind", "usage"}, {"code", kUsageExit}, {"message", "analyze needs --shifts or --glcm"}}}}.dump()
              << '\n';
    return kUsageExit;
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  try {
    if (gen->parsed()) {
      auto cfg = config_of(gen_c);
      const fs::path out = prepare_out(gen_c.out);
      auto dist = gen_copies ? ShiftDistribution::zero() : cfg.burstgen.distribution;
      const double sigma = gen_copies ? 0.0 : cfg.burstgen.noise_sigma;
      const int frames = gen_frames > 0 ? gen_frames : cfg.burstgen.frames;
      json bursts = json::array();
      for (int k = 0; k < gen_count; ++k) {
        const std::uint64_t s = gen_c.seed + 7919ull * static_cast<std::uint64_t>(k);
        const Image hr = gen_input.empty()
                             ? synthesize_scene(cfg.burstgen.hr_size, cfg.burstgen.hr_size, s, cfg.burstgen.scene)
                             : read_png(gen_input);
        const auto g = generate_burst(hr, frames, cfg.burstgen.scale, dist, sigma, s + 1);
        const fs::path dir = gen_count == 1 ? out : out / ("burst_" + std::to_string(k));
        const json shifts = frames > 1 ? shifts_json(true_center_shifts(g.burst)) : json::array();
        write_burst(dir, g.burst, &g.ground_truth,
                    {{"seed", s + 1}, {"distribution", to_json(dist)}, {"true_shifts_lr", shifts}});
        bursts.push_back({{"dir", gen_count == 1 ? "." : rel(dir, out)}, {"frames", frames}, {"true_shifts_lr", shifts}});
      }
      emit(out, "generate",
           {{"bursts", bursts}, {"scale", cfg.burstgen.scale}, {"noise_sigma", sigma}, {"distribution", to_json(dist)}},
           elapsed());
    } else if (al->parsed()) {
      auto cfg = config_of(align_c);
      const fs::path out = prepare_out(align_c.out);
      const auto loaded = read_burst(al_burst);
      const auto aligned = align_burst(loaded.burst, cfg.align);
      write_burst(out / "aligned", aligned.burst, loaded.ground_truth ? &*loaded.ground_truth : nullptr);
      json results = json::array();
      for (const auto& r : aligned.results) results.push_back(to_json(r));
      emit(out, "align", {{"results", results}, {"aligned_dir", "aligned"}, {"align", to_json(cfg).at("align")}},
           elapsed());
    } else if (fu->parsed()) {
      auto cfg = config_of(fuse_c);
      const fs::path out = prepare_out(fuse_c.out);
      Burst b = read_burst(fu_burst).burst;
      if (fu_align) b = align_burst(b, cfg.align).burst;
      const Model model = model_for(fu_ckpt, cfg, fuse_c.seed);
      const FusionMode mode = fu_mode.empty() ? model.fusion_mode : fusion_mode_from_string(fu_mode);
      const auto stack = extract_features(b, model.extractor);
      const auto maps = fusion_weight_maps(stack, mode, model.normalize_weights);
      const Tensor m = apply_weight_maps(stack, maps);
      write_bft(m, out / "fused.bft");
      json map_stats = json::array();
      for (std::size_t i = 0; i < maps.size(); ++i) {
        std::ostringstream name;
        name << "weight_" << std::setw(3) << std::setfill('0') << i;
        write_bft(maps[i], out / (name.str() + ".bft"));
        write_png(heatmap(maps[i]), out / (name.str() + ".png"));
        map_stats.push_back(plane_stats(maps[i]));
      }
      emit(out, "fuse",
           {{"mode", to_string(mode)}, {"shape", m.shape()}, {"fused", plane_stats(m)}, {"weight_maps", map_stats}},
           elapsed());
    } else if (sr->parsed()) {
      auto cfg = config_of(sr_c);
      const fs::path out = prepare_out(sr_c.out);
      const auto loaded = read_burst(sr_burst);
      Burst b = loaded.burst;
      if (sr_align) b = align_burst(b, cfg.align).burst;
      const Model model = model_for(sr_ckpt, cfg, sr_c.seed);
      const Image est = model.superresolve(b);
      write_png(est, out / "sr.png");
      write_bft(est.to_tensor(), out / "sr.bft");
      json res = {{"shape", {est.channels(), est.height(), est.width()}}, {"fusion_mode", to_string(model.fusion_mode)}};
      if (loaded.ground_truth) {
        res["psnr_db"] = psnr(est, *loaded.ground_truth);
        res["ssim"] = ssim(est, *loaded.ground_truth);
      }
      emit(out, "superresolve", res, elapsed());
    } else if (tr->parsed()) {
      auto cfg = config_of(train_c);
      if (tr_steps >= 0) cfg.train.steps = static_cast<std::size_t>(tr_steps);
      const fs::path out = prepare_out(train_c.out);
      const Dataset data = tr_data.empty() ? build_dataset(cfg, train_c.seed) : load_dataset(tr_data, cfg);
      std::vector<TrainSample> train_set, val_set;
      for (const auto& g : data.train) train_set.push_back(to_sample(g));
      for (const auto& g : data.val) val_set.push_back(to_sample(g));
      Model model = Model::init(cfg.decode, cfg.fusion_mode, train_c.seed);
      model.normalize_weights = cfg.normalize_weights;
      TrainConfig tc = cfg.train;
      tc.seed = train_c.seed;
      tc.checkpoint_dir = out / "checkpoint";
      const auto report = train(model, train_set, val_set, tc);
      emit(out, "train",
           {{"report", to_json(report)},
            {"train_pairs", train_set.size()},
            {"val_pairs", val_set.size()},
            {"checkpoint", "checkpoint"},
            {"config", to_json(cfg)}},
           elapsed());
    } else if (ev->parsed()) {
      const fs::path out = prepare_out(eval_c.out);
      emit(out, "evaluate", to_json(evaluate_dirs(ev_pred, ev_gt)), elapsed());
    } else if (an->parsed()) {
      auto cfg = config_of(an_c);
      const fs::path out = prepare_out(an_c.out);
      if (!an_shifts.empty()) {
        json per = json::array();
        std::vector<Eigen::Vector2d> measured_all, true_all;
        double worst = 0.0;
        bool have_truth = false;
        for (const auto& dir : burst_dirs(an_shifts)) {
          const auto loaded = read_burst(dir);
          if (loaded.burst.size() < 2) continue;
          const auto measured = measure_shifts(loaded.burst, cfg.align);
          measured_all.insert(measured_all.end(), measured.begin(), measured.end());
          json entry = {{"dir", rel(dir, an_shifts)}, {"measured_lr", shifts_json(measured)}};
          if (loaded.burst.true_transforms) {
            have_truth = true;
            const auto truth = true_center_shifts(loaded.burst);
            true_all.insert(true_all.end(), truth.begin(), truth.end());
            double w = 0.0;
            for (std::size_t i = 0; i < truth.size(); ++i) w = std::max(w, (truth[i] - measured[i]).cwiseAbs().maxCoeff());
            entry["true_lr"] = shifts_json(truth);
            entry["max_abs_error_lr"] = w;
            worst = std::max(worst, w);
          }
          per.push_back(entry);
        }
        const int scale = read_burst(burst_dirs(an_shifts).front()).burst.scale;
        json res = {{"bursts", per}, {"scale", scale}, {"histogram", to_json(shift_histogram(measured_all, scale))}};
        if (have_truth) {
          res["true_histogram"] = to_json(shift_histogram(true_all, scale));
          res["max_abs_error_lr"] = worst;
        }
        emit(out, "analyze", {{"shifts", res}}, elapsed());
      } else {
        std::vector<fs::path> files;
        if (!fs::is_directory(an_glcm)) throw IoError("not a directory: " + an_glcm);
        for (const auto& e : fs::recursive_directory_iterator(an_glcm))
          if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        std::vector<Image> images;
        json names = json::array();
        for (const auto& f : files) {
          images.push_back(read_png(f));
          names.push_back(rel(f, an_glcm));
        }
        auto summary = to_json(diversity_summary(images, cfg.eval.glcm_levels, cfg.eval.histogram_bins));
        summary["files"] = names;
        emit(out, "analyze", {{"glcm", summary}}, elapsed());
      }
    } else if (ex->parsed()) {
      auto cfg = config_of(exp_c);
      const fs::path out = prepare_out(exp_c.out);
      const auto variants = preset_variants(ex_preset);
      int need = 1;
      for (const auto& v : variants) need = std::max(need, v.frames);
      if (ex_data.empty()) cfg.burstgen.frames = std::max(cfg.burstgen.frames, need);
      const Dataset data = ex_data.empty() ? build_dataset(cfg, exp_c.seed) : load_dataset(ex_data, cfg);
      json rows = json::array();
      for (const auto& r : run_experiment(variants, data, cfg, exp_c.seed, [](const ExperimentRow& r) {
             std::cerr << r.variant.label << ": " << r.val_psnr << " dB\n";
           }))
        rows.push_back(to_json(r));
      emit(out, "experiment",
           {{"preset", ex_preset}, {"rows", rows}, {"train_pairs", data.train.size()}, {"val_pairs", data.val.size()},
            {"config", to_json(cfg)}},
           elapsed());
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"kind", e.kind()}, {"code", e.code()}, {"message", e.what()}}}}.dump() << '\n';
    return e.code();
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"code", kInternalExit}, {"message", e.what()}}}}.dump() << '\n';
    return kInternalExit;
  }
  return 0;
}
