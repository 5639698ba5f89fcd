#pragma once

#include <functional>
#include <string>
#include <vector>

#include "brsda/config.hpp"
#include "brsda/data.hpp"
#include "brsda/nets.hpp"
#include "brsda/tensor.hpp"

namespace brsda {

// Class-probability rows (each summing to 1) with integer labels.
struct ScoredPredictions {
  Tensor scores;  // {N, c}
  std::vector<int> labels;

  void validate() const;  // row sums within 1e-5 of 1, labels in range
};

// Mann-Whitney AUC: fraction of (positive, negative) pairs where the
// positive scores higher, ties counted 1/2. Computed via tie-averaged
// ranks; exactly equal to exhaustive pair counting.
double auc_binary(const std::vector<double>& scores,
                  const std::vector<int>& labels);

// Unweighted one-vs-rest mean over classes that have both positives and
// negatives present.
double auc_macro(const ScoredPredictions& preds);

// Fraction of rows whose argmax matches the label; argmax ties break to
// the lowest class index.
double accuracy(const ScoredPredictions& preds);

// ---------------------------------------------------------------------------
// Ablation grid over (lambda, U)
// ---------------------------------------------------------------------------

struct CellMetrics {
  double auc = 0.0;
  double acc = 0.0;
};

struct AblationCell {
  double lambda = 0.0;
  int u = 0;
  int seeds = 0;
  double mean_auc = 0.0, mean_acc = 0.0;
  double baseline_auc = 0.0, baseline_acc = 0.0;
  double delta_auc = 0.0, delta_acc = 0.0;
  bool failed = false;
  std::string error;
};

struct AblationGrid {
  std::vector<double> lambda_values;
  std::vector<int> u_values;
  std::vector<AblationCell> cells;  // row-major over (lambda, u)
};

// Trains one configuration and reports its test metrics at the best
// validation epoch; injectable so grids can be driven by stubs in tests.
using CellTrainFn = std::function<CellMetrics(const ExperimentConfig&)>;

// One run per (lambda, u, seed) plus one baseline run (augmentation
// disabled) per seed, shared across cells. Per-cell failures are recorded
// and the grid continues. Seeds are base_config.seed + 0..n-1.
AblationGrid run_ablation(const ExperimentConfig& base_config,
                          const std::vector<double>& lambda_values,
                          const std::vector<int>& u_values, int seeds,
                          const CellTrainFn& train_fn);

// Default CellTrainFn backed by train_run.
CellTrainFn default_cell_train_fn();

// Columns: lambda,U,seeds,mean_auc,mean_acc,baseline_auc,baseline_acc,
// delta_auc,delta_acc. A leading '#'-comment line carries the config
// digest; CSV consumers skip '#' lines.
void write_ablation_csv(const AblationGrid& grid, const std::string& digest,
                        const std::string& path);

// ---------------------------------------------------------------------------
// Feature export for external embedding projection
// ---------------------------------------------------------------------------

// Emits one original and one augmented row per sample:
//   sample_id,label,kind,f0..f{k-1}      kind in {original, augmented}
// Original rows hold a = f1(x) in eval mode; augmented rows apply one
// (mask, magnitude) draw under the given lambda.
void export_features(Model& model, const LabeledDataset& dataset, double lambda,
                     int batch_size, RngStream& rng, const std::string& digest,
                     const std::string& path);

}  // namespace brsda
