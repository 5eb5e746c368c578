#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "geodist/autodiff.hpp"
#include "geodist/denoiser.hpp"
#include "geodist/geometry.hpp"
#include "geodist/random.hpp"

namespace geodist {

struct TrainConfig {
  int epochs = 200;
  int iters_per_epoch = 64;
  int batch_size = 4096;
  long points_per_epoch = 1L << 18;
  /// log σ ~ N(p_mean, p_std²).
  double p_mean = -1.2;
  double p_std = 1.2;
  double lr = 1e-3;
  /// Inverse-square-root decay lr / sqrt(max(iter / lr_ref_iters, 1)); 0 keeps lr constant.
  long lr_ref_iters = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Epoch period for latest-model checkpoints (0: only after the last epoch).
  int checkpoint_every = 0;
  /// Epoch period for Chamfer tracking (0: never).
  int chamfer_every = 0;
  long chamfer_points = 20000;
  int chamfer_steps = 32;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  /// NaN when not evaluated this epoch.
  double chamfer = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
};

void write_report_csv(const std::filesystem::path& path, const TrainReport& report,
                      const std::vector<std::string>& comments = {});

/// σ_i = exp(p_mean + p_std·z_i), z ~ N(0,1).
Eigen::VectorXd sample_sigma(long batch, double p_mean, double p_std, Rng& rng);

/// EDM loss weight (σ² + σ_d²) / (σ·σ_d)².
inline double loss_weight(double sigma, double sigma_data) {
  return (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma * sigma_data * sigma_data);
}

/// mean_i λ(σ_i)·‖D(x_i + σ_i n_i, σ_i) - x_i‖² with explicit σ and n, evaluated
/// at `params` (layout of `model`). When `grads` is non-null it receives
/// ∂loss/∂params.
template <typename Scalar>
double denoising_loss(const DenoiserModel& model, const ad::Vector<Scalar>& params, const ad::Matrix<Scalar>& x_clean,
                      const Eigen::VectorXd& sigma, const ad::Matrix<Scalar>& noise, ad::Vector<Scalar>* grads);

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXf grads;
};

/// Draws σ and n from `rng`, then evaluates denoising_loss and its gradient in float32.
LossResult training_loss(const DenoiserModel& model, const PointSet& x_clean, double p_mean, double p_std, Rng& rng);

struct TrainHooks {
  /// After every epoch.
  std::function<void(const EpochRecord&, const DenoiserModel&)> on_epoch;
  /// When a checkpoint is due; `best` marks a new best Chamfer.
  std::function<void(const DenoiserModel&, const EpochRecord&, bool best)> on_checkpoint;
};

struct TrainResult {
  DenoiserModel model;
  TrainReport report;
};

/// Trains on `mesh` (already normalized), resampling points_per_epoch fresh
/// surface points before every epoch.
TrainResult train(const Mesh& mesh, const DenoiserConfig& denoiser_config, const TrainConfig& config,
                  const TrainHooks& hooks = {});

}  // namespace geodist
