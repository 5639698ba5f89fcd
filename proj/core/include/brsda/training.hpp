#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brsda/config.hpp"
#include "brsda/core.hpp"
#include "brsda/data.hpp"
#include "brsda/metrics.hpp"
#include "brsda/nets.hpp"
#include "brsda/optim.hpp"

namespace brsda {

// Dynamic alpha: linear ramp from 0 to alpha_final over the first
// alpha_ramp_fraction of total epochs, constant afterwards.
double alpha_at(int epoch, const AugmentationConfig& config,
                const TrainSchedule& schedule);

// Per-step learning rate: linear warmup from 0 to base_lr across the
// warmup epochs, then cosine decay to 0 at the final step.
double lr_at(std::int64_t step, std::int64_t steps_per_epoch,
             const TrainSchedule& schedule);

// Deterministic epoch shuffle; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     int epoch);

// Pre-sampled (mask, noise) pairs for the U augmentation draws of one step.
struct StepDraws {
  std::vector<Tensor> masks;   // include the zero-feature indicator
  std::vector<Tensor> noises;  // standard normal
};

StepDraws sample_step_draws(const Tensor& features, double lambda, int u,
                            RngStream& rng);

struct ComposedLoss {
  ag::Var total;
  BrsdaLossBreakdown breakdown;
  ag::Var features;  // backbone output node (for inspection/tests)
};

// Builds the full differentiable loss of one step. With alpha == 0 or
// u == 0 the BRSDA branch is skipped entirely and the result is the plain
// task loss. Deterministic given the draws, so finite-difference harnesses
// can re-evaluate it under perturbed parameters.
ComposedLoss compose_step_loss(Model& model, const Tensor& inputs,
                               const std::vector<int>& labels, double alpha,
                               const StepDraws& draws,
                               const std::string& recon_input, bool training);

// One optimizer update of theta, phi_m, phi_a jointly. Throws NumericError
// carrying the component breakdown if the loss is non-finite.
BrsdaLossBreakdown train_step(Model& model, AdamW& optimizer,
                              const Tensor& inputs,
                              const std::vector<int>& labels,
                              const AugmentationConfig& augmentation,
                              double alpha, double lr, double clip_norm,
                              RngStream& aug_rng);

struct EvalMetrics {
  double auc = 0.0;
  double acc = 0.0;
  std::vector<double> per_class_auc;
};

// Evaluation never samples masks or magnitudes; metrics are invariant to
// (lambda, U) by construction.
EvalMetrics evaluate(Model& model, const LabeledDataset& dataset,
                     int batch_size);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;       // last step of the epoch
  double alpha = 0.0;
  double train_loss = 0.0;  // mean total over steps
  double kl = 0.0, recon = 0.0, task_orig = 0.0, task_aug = 0.0;
  double val_auc = 0.0, val_acc = 0.0;
  double wall_seconds = 0.0;  // time spent in this epoch
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<BrsdaLossBreakdown> step_breakdowns;
  int best_epoch = -1;
  double best_val_auc = 0.0;
  EvalMetrics final_val, final_test;
  EvalMetrics best_val, best_test, best_train;
  std::string metrics_csv_path;      // when persisted
  std::string checkpoint_best_path;  // when persisted
  std::string checkpoint_final_path;
};

// Algorithm of the method end to end: T epochs of train_step, per-epoch
// validation with augmentation disabled, best-by-validation-AUC snapshot.
// When config.output_dir is nonempty, persists metrics.csv,
// checkpoint_best.npz, checkpoint_final.npz and config.json there. The
// model is left in its best-validation state.
TrainResult train_run(const DatasetBundle& data, const ExperimentConfig& config,
                      Model& model);

// Convenience: builds dataset and model from the config, then trains.
TrainResult train_run(const ExperimentConfig& config);

void write_metrics_csv(const std::vector<EpochMetrics>& epochs,
                       const std::string& digest, const std::string& path);

}  // namespace brsda
