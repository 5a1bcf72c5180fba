#include "bsrkit/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "bsrkit/error.hpp"
#include "bsrkit/evalstats.hpp"
#include "bsrkit/ops.hpp"

namespace bsrkit {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (eta_min < 0.0 || eta_min > lr0) throw ConfigError("eta_min must lie in [0, lr0]");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (gw_alpha < 0.0 || gw_weight < 0.0) throw ConfigError("GW loss settings must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"lr0", c.lr0},
                      {"eta_min", c.eta_min},
                      {"steps", c.steps},
                      {"batch", c.batch},
                      {"weight_decay", c.weight_decay},
                      {"betas", {c.beta1, c.beta2}},
                      {"adam_eps", c.adam_eps},
                      {"loss", c.loss == LossKind::mae ? "mae" : "mae+gw"},
                      {"gw_alpha", c.gw_alpha},
                      {"gw_weight", c.gw_weight},
                      {"seed", c.seed},
                      {"checkpoint_every", c.checkpoint_every}};
  if (c.checkpoint_dir) j["checkpoint_dir"] = c.checkpoint_dir->string();
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  TrainConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "lr0") c.lr0 = v.get<double>();
      else if (k == "eta_min") c.eta_min = v.get<double>();
      else if (k == "steps") c.steps = v.get<std::size_t>();
      else if (k == "batch") c.batch = v.get<std::size_t>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "betas") {
        c.beta1 = v.at(0).get<double>();
        c.beta2 = v.at(1).get<double>();
      } else if (k == "adam_eps") c.adam_eps = v.get<double>();
      else if (k == "loss") {
        const auto s = v.get<std::string>();
        if (s == "mae") c.loss = LossKind::mae;
        else if (s == "mae+gw") c.loss = LossKind::mae_gw;
        else throw ConfigError("unknown loss: " + s);
      } else if (k == "gw_alpha") c.gw_alpha = v.get<double>();
      else if (k == "gw_weight") c.gw_weight = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
      else if (k == "checkpoint_dir") c.checkpoint_dir = v.get<std::string>();
      else throw ConfigError("unknown train key: " + k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

void require_same(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 3)
    throw DimensionError("loss inputs must share a [C,H,W] shape: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Forward difference along an axis (1 = rows, 2 = columns), zero at the end.
Tensor forward_diff(const Tensor& t, std::size_t axis) {
  const std::size_t n = t.dim(axis);
  Shape pad = t.shape();
  pad[axis] = 1;
  if (n < 2) return Tensor::zeros(t.shape());
  return concat({sub(slice(t, axis, 1, n), slice(t, axis, 0, n - 1)), Tensor::zeros(pad)}, axis);
}

}  // namespace

Tensor mae_loss(const Tensor& sr, const Tensor& gt) {
  require_same(sr, gt);
  return mean(abs(sub(sr, gt)));
}

Tensor gw_loss(const Tensor& sr, const Tensor& gt, double alpha) {
  require_same(sr, gt);
  const Tensor gx = abs(sub(abs(forward_diff(gt, 2)), abs(forward_diff(sr, 2))));
  const Tensor gy = abs(sub(abs(forward_diff(gt, 1)), abs(forward_diff(sr, 1))));
  const Tensor w = mul(add_scalar(scale(gx, alpha), 1.0), add_scalar(scale(gy, alpha), 1.0));
  return mean(mul(w, abs(sub(sr, gt))));
}

Tensor training_loss(const Tensor& sr, const Tensor& gt, const TrainConfig& cfg) {
  const Tensor l = mae_loss(sr, gt);
  if (cfg.loss == LossKind::mae) return l;
  return add(l, scale(gw_loss(sr, gt, cfg.gw_alpha), cfg.gw_weight));
}

double cosine_lr(std::size_t step, const TrainConfig& cfg) {
  if (cfg.steps == 0) return cfg.lr0;
  if (step > cfg.steps) throw ContractError("lr requested past the schedule end");
  return cfg.eta_min +
         (cfg.lr0 - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * double(step) / double(cfg.steps))) / 2.0;
}

void adamw_step(const NamedTensors& params, AdamState& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.size(), 0.0);
      state.v.emplace_back(t.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match parameter list");
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad())
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + name);
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].second;
    const std::vector<double> g = t.grad();
    auto p = t.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - lr * cfg.weight_decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
    }
  }
}

TrainSample to_sample(const GeneratedBurst& g) {
  TrainSample s;
  for (const auto& f : g.burst.frames) s.frames.push_back(f.to_tensor());
  s.gt = g.ground_truth.to_tensor();
  return s;
}

std::pair<double, double> validate_model(const Model& model, const std::vector<TrainSample>& val) {
  if (val.empty()) return {0.0, 0.0};
  double p = 0.0, s = 0.0;
  for (const auto& v : val) {
    const Image sr = Image::from_tensor(model.forward(v.frames).detach());
    const Image gt = Image::from_tensor(v.gt);
    p += psnr(sr, gt);
    s += (gt.height() >= 11 && gt.width() >= 11) ? ssim(sr, gt) : 0.0;
  }
  return {p / double(val.size()), s / double(val.size())};
}

TrainReport train(Model& model, const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  if (cfg.steps > 0 && train_set.empty()) throw ConfigError("training set is empty");
  const NamedTensors params = model.named();
  AdamState state;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle on the first draw
  const std::size_t steps_per_epoch = train_set.empty() ? 1 : (train_set.size() + cfg.batch - 1) / cfg.batch;
  std::vector<std::vector<double>> last_good;
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;

  auto snapshot = [&] {
    last_good.clear();
    for (const auto& [n, t] : params) last_good.push_back(t.values());
  };
  auto restore = [&] {
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor t = params[k].second;
      std::copy(last_good[k].begin(), last_good[k].end(), t.mutable_data().begin());
    }
  };
  auto maybe_checkpoint = [&](std::size_t step, bool force) {
    if (!cfg.checkpoint_dir) return;
    if (force || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0))
      save_checkpoint(*cfg.checkpoint_dir, model, step);
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    snapshot();
    const double lr = cosine_lr(step, cfg);
    for (const auto& [n, t] : params) {
      Tensor handle = t;
      handle.zero_grad();
    }
    double loss = 0.0;
    try {
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        if (cursor >= order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const auto& s = train_set[order[cursor++]];
        const Tensor l = training_loss(model.forward(s.frames), s.gt, cfg);
        if (!std::isfinite(l.item())) throw TrainingError("non-finite loss");
        loss += l.item() / double(cfg.batch);
        backward(scale(l, 1.0 / double(cfg.batch)));
      }
      adamw_step(params, state, lr, cfg);
    } catch (const Error& e) {
      if (!dynamic_cast<const NumericError*>(&e) && !dynamic_cast<const TrainingError*>(&e)) throw;
      restore();
      maybe_checkpoint(step, true);
      throw TrainingError("training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    report.loss_trace.push_back(loss);
    report.lr_trace.push_back(lr);
    epoch_loss += loss;
    ++epoch_steps;
    const bool epoch_end = (step + 1) % steps_per_epoch == 0 || step + 1 == cfg.steps;
    if (epoch_end) {
      const auto [vp, vs] = validate_model(model, val_set);
      report.epochs.push_back({report.epochs.size(), step + 1, epoch_loss / double(epoch_steps), vp, vs});
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
    maybe_checkpoint(step + 1, step + 1 == cfg.steps);
  }
  if (cfg.steps == 0) maybe_checkpoint(0, true);
  const auto [vp, vs] = validate_model(model, val_set);
  report.final_val_psnr = vp;
  report.final_val_ssim = vs;
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"step", e.step},
                      {"train_loss", e.train_loss},
                      {"val_psnr", e.val_psnr},
                      {"val_ssim", e.val_ssim}});
  return {{"loss_trace", r.loss_trace},
          {"lr_trace", r.lr_trace},
          {"epochs", epochs},
          {"final_val_psnr", r.final_val_psnr},
          {"final_val_ssim", r.final_val_ssim}};
}

}  // namespace bsrkit
