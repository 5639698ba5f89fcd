#include "brsda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "brsda/core.hpp"
#include "brsda/errors.hpp"
#include "brsda/training.hpp"

namespace brsda {

namespace {

std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ScoredPredictions::validate() const {
  if (scores.rank() != 2 || scores.rows() != labels.size() || labels.empty()) {
    throw ConfigError("ScoredPredictions: scores/labels shape mismatch");
  }
  const std::size_t c = scores.cols();
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) row_sum += scores.at(i, j);
    if (std::abs(row_sum - 1.0) > 1e-5) {
      throw ConfigError("ScoredPredictions: row " + std::to_string(i) +
                        " sums to " + std::to_string(row_sum));
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ConfigError("ScoredPredictions: label out of range at row " +
                        std::to_string(i));
    }
  }
}

double auc_binary(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ConfigError("auc_binary: scores/labels size mismatch");
  }
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError("auc_binary: labels must be 0/1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n = scores.size();
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("auc_binary: undefined, only one class present");
  }

  // Tie-averaged ranks; the rank-sum form equals exhaustive pair counting
  // with ties worth 1/2. Average ranks are multiples of 1/2, so the sums
  // below are exact in double precision at any realistic N.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u_stat =
      rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                         static_cast<double>(n_pos + 1);
  return u_stat / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_macro(const ScoredPredictions& preds) {
  preds.validate();
  const std::size_t c = preds.scores.cols();
  if (c < 2) throw ConfigError("auc_macro: needs >= 2 classes");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::vector<double> scores(preds.labels.size());
    std::vector<int> labels(preds.labels.size());
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < preds.labels.size(); ++i) {
      scores[i] = preds.scores.at(i, cls);
      labels[i] = preds.labels[i] == static_cast<int>(cls) ? 1 : 0;
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    total += auc_binary(scores, labels);
    ++counted;
  }
  if (counted == 0) {
    throw MetricError("auc_macro: no class admits a one-vs-rest split");
  }
  return total / static_cast<double>(counted);
}

double accuracy(const ScoredPredictions& preds) {
  preds.validate();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < preds.scores.cols(); ++j) {
      if (preds.scores.at(i, j) > preds.scores.at(i, best)) best = j;
    }
    if (static_cast<int>(best) == preds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.labels.size());
}

// ---------------------------------------------------------------------------
// Ablation runner
// ---------------------------------------------------------------------------

CellTrainFn default_cell_train_fn() {
  return [](const ExperimentConfig& config) -> CellMetrics {
    ExperimentConfig c = config;
    c.output_dir.clear();  // grid cells run in memory
    const TrainResult r = train_run(c);
    return {r.best_test.auc, r.best_test.acc};
  };
}

AblationGrid run_ablation(const ExperimentConfig& base_config,
                          const std::vector<double>& lambda_values,
                          const std::vector<int>& u_values, int seeds,
                          const CellTrainFn& train_fn) {
  if (lambda_values.empty() || u_values.empty()) {
    throw ConfigError("run_ablation: lambda and U grids must be nonempty");
  }
  if (seeds < 1) throw ConfigError("run_ablation: seeds must be >= 1");

  AblationGrid grid;
  grid.lambda_values = lambda_values;
  grid.u_values = u_values;

  // One baseline run per seed, shared across all cells.
  double baseline_auc = 0.0, baseline_acc = 0.0;
  for (int s = 0; s < seeds; ++s) {
    ExperimentConfig c = base_config;
    c.seed = base_config.seed + static_cast<std::uint64_t>(s);
    c.augmentation.u = 0;
    c.augmentation.alpha_final = 0.0;
    const CellMetrics m = train_fn(c);
    baseline_auc += m.auc;
    baseline_acc += m.acc;
  }
  baseline_auc /= seeds;
  baseline_acc /= seeds;

  for (double lambda : lambda_values) {
    for (int u : u_values) {
      AblationCell cell;
      cell.lambda = lambda;
      cell.u = u;
      cell.seeds = seeds;
      cell.baseline_auc = baseline_auc;
      cell.baseline_acc = baseline_acc;
      try {
        double auc = 0.0, acc = 0.0;
        for (int s = 0; s < seeds; ++s) {
          ExperimentConfig c = base_config;
          c.seed = base_config.seed + static_cast<std::uint64_t>(s);
          c.augmentation.lambda = lambda;
          c.augmentation.u = u;
          const CellMetrics m = train_fn(c);
          auc += m.auc;
          acc += m.acc;
        }
        cell.mean_auc = auc / seeds;
        cell.mean_acc = acc / seeds;
        cell.delta_auc = cell.mean_auc - baseline_auc;
        cell.delta_acc = cell.mean_acc - baseline_acc;
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
        cell.mean_auc = cell.mean_acc = std::numeric_limits<double>::quiet_NaN();
        cell.delta_auc = cell.delta_acc = std::numeric_limits<double>::quiet_NaN();
      }
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

void write_ablation_csv(const AblationGrid& grid, const std::string& digest,
                        const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write ablation csv '" + path + "'");
  f << "# config_digest=" << digest << "\n";
  f << "lambda,U,seeds,mean_auc,mean_acc,baseline_auc,baseline_acc,delta_auc,"
       "delta_acc\n";
  for (const AblationCell& c : grid.cells) {
    f << format_full(c.lambda) << ',' << c.u << ',' << c.seeds << ','
      << format_full(c.mean_auc) << ',' << format_full(c.mean_acc) << ','
      << format_full(c.baseline_auc) << ',' << format_full(c.baseline_acc)
      << ',' << format_full(c.delta_auc) << ',' << format_full(c.delta_acc)
      << "\n";
    if (c.failed) f << "# cell lambda=" << c.lambda << " U=" << c.u
                    << " failed: " << c.error << "\n";
  }
}

// ---------------------------------------------------------------------------
// Feature export
// ---------------------------------------------------------------------------

void export_features(Model& model, const LabeledDataset& dataset, double lambda,
                     int batch_size, RngStream& rng, const std::string& digest,
                     const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write feature csv '" + path + "'");
  f << "# config_digest=" << digest << "\n";
  f << "sample_id,label,kind";
  for (int k = 0; k < model.feature_dim; ++k) f << ",f" << k;
  f << "\n";

  const std::size_t n = dataset.size();
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t stop = std::min(n, start + bs);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor inputs = model.backbone->prepare_batch(dataset.images, idx);

    // Eval-mode forward: frozen normalization statistics.
    auto features = model.backbone->forward(inputs, /*training=*/false);
    auto log_variance = model.estimate_log_variance(features, /*training=*/false);
    const MagnitudeDistribution dist{log_variance->value};
    const DirectionMask mask = sample_direction_mask(features->value, lambda, rng);
    const MagnitudeSample sample = sample_magnitudes(dist, rng);
    const FeatureBatch augmented = augment(features->value, mask, sample);

    for (std::size_t i = 0; i < idx.size(); ++i) {
      f << idx[i] << ',' << dataset.labels[idx[i]] << ",original";
      for (int k = 0; k < model.feature_dim; ++k) {
        f << ',' << format_full(features->value.at(i, static_cast<std::size_t>(k)));
      }
      f << "\n";
      f << idx[i] << ',' << dataset.labels[idx[i]] << ",augmented";
      for (int k = 0; k < model.feature_dim; ++k) {
        f << ',' << format_full(augmented.at(i, static_cast<std::size_t>(k)));
      }
      f << "\n";
    }
  }
}

}  // namespace brsda
