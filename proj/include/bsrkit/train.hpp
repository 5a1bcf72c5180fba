#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsrkit/burst.hpp"
#include "bsrkit/model.hpp"
#include "bsrkit/params.hpp"

namespace bsrkit {

enum class LossKind { mae, mae_gw };

struct TrainConfig {
  double lr0 = 1e-4;
  double eta_min = 0.0;
  std::size_t steps = 1000;
  std::size_t batch = 1;
  double weight_decay = 1e-2;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  LossKind loss = LossKind::mae_gw;
  double gw_alpha = 4.0;
  double gw_weight = 1.0;
  std::uint64_t seed = 0;
  // 0 disables; otherwise every N steps (and at the end) when a dir is set.
  std::size_t checkpoint_every = 0;
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

// sr, gt: [C,H,W].
Tensor mae_loss(const Tensor& sr, const Tensor& gt);
// mean((1 + a*gx)(1 + a*gy)|sr - gt|), gx/gy = | |dx gt| - |dx sr| | with
// forward differences (zero at the last row/column).
Tensor gw_loss(const Tensor& sr, const Tensor& gt, double alpha);
Tensor training_loss(const Tensor& sr, const Tensor& gt, const TrainConfig& cfg);

double cosine_lr(std::size_t step, const TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
};

// Decoupled weight decay, bias-corrected moments. Reads each leaf's grad.
void adamw_step(const NamedTensors& params, AdamState& state, double lr, const TrainConfig& cfg);

struct TrainSample {
  std::vector<Tensor> frames;  // base first, [3,h,w]
  Tensor gt;                   // [3,sh,sw]
};

TrainSample to_sample(const GeneratedBurst& g);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
};

struct TrainReport {
  std::vector<double> loss_trace;
  std::vector<double> lr_trace;
  std::vector<EpochRecord> epochs;
  double final_val_psnr = 0.0;
  double final_val_ssim = 0.0;
  double wall_time_s = 0.0;
};

// Mean PSNR/SSIM of model predictions on a sample set.
std::pair<double, double> validate_model(const Model& model, const std::vector<TrainSample>& val);

// Fits model in place. An epoch is ceil(|train| / batch) steps; validation
// runs at every epoch end. A non-finite loss or gradient restores the last
// good parameters, checkpoints them if a dir is set, and throws TrainingError.
TrainReport train(Model& model, const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& val_set,
                  const TrainConfig& cfg);

// Deterministic JSON (wall time excluded).
nlohmann::json to_json(const TrainReport& r);

}  // namespace bsrkit
