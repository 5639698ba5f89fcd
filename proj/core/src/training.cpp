#include "brsda/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace brsda {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double alpha_at(int epoch, const AugmentationConfig& config,
                const TrainSchedule& schedule) {
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    throw ConfigError("alpha_at: epoch " + std::to_string(epoch) +
                      " outside [0," + std::to_string(schedule.total_epochs) +
                      ")");
  }
  const int ramp_epochs = std::max(
      1, static_cast<int>(std::llround(config.alpha_ramp_fraction *
                                       schedule.total_epochs)));
  const double t = static_cast<double>(epoch) / static_cast<double>(ramp_epochs);
  return config.alpha_final * std::min(1.0, t);
}

double lr_at(std::int64_t step, std::int64_t steps_per_epoch,
             const TrainSchedule& schedule) {
  if (steps_per_epoch < 1) throw ConfigError("lr_at: steps_per_epoch must be >= 1");
  const std::int64_t total = schedule.total_epochs * steps_per_epoch;
  const std::int64_t warmup = schedule.warmup_epochs * steps_per_epoch;
  if (step < 0 || step > total) {
    throw ConfigError("lr_at: step outside the run");
  }
  if (step < warmup) {
    return schedule.base_lr * static_cast<double>(step) /
           static_cast<double>(warmup);
  }
  const double progress =
      total == warmup ? 1.0
                      : static_cast<double>(step - warmup) /
                            static_cast<double>(total - warmup);
  return 0.5 * schedule.base_lr * (1.0 + std::cos(kPi * progress));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     int epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Hand-rolled Fisher-Yates: the order must be a pure function of
  // (seed, epoch), independent of any stdlib shuffle implementation.
  std::mt19937_64 gen(derive_seed(seed, streams::kDataOrder,
                                  static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = gen() % i;
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

StepDraws sample_step_draws(const Tensor& features, double lambda, int u,
                            RngStream& rng) {
  StepDraws draws;
  draws.masks.reserve(static_cast<std::size_t>(u));
  draws.noises.reserve(static_cast<std::size_t>(u));
  for (int i = 0; i < u; ++i) {
    DirectionMask mask = sample_direction_mask(features, lambda, rng);
    Tensor noise(features.shape());
    for (std::size_t j = 0; j < noise.size(); ++j) noise[j] = rng.normal();
    draws.masks.push_back(std::move(mask.bits));
    draws.noises.push_back(std::move(noise));
  }
  return draws;
}

namespace {

ComposedLoss compose_from_features(Model& model, const ag::Var& features,
                                   const std::vector<int>& labels, double alpha,
                                   const StepDraws& draws,
                                   const std::string& recon_input,
                                   bool training) {
  ComposedLoss out;
  out.features = features;
  auto logits = model.classifier.forward(features);
  auto task_orig = ag::softmax_cross_entropy(logits, labels);

  const std::size_t u = draws.masks.size();
  if (alpha == 0.0 || u == 0) {
    out.total = task_orig;
    out.breakdown.alpha = alpha;
    out.breakdown.task_original = task_orig->value.item();
    out.breakdown.total = out.total->value.item();
    return out;
  }

  auto log_variance = model.estimate_log_variance(features, training);
  auto kl = kl_loss_node(log_variance);

  ag::Var recon_sum, task_aug_sum;
  for (std::size_t i = 0; i < u; ++i) {
    auto magnitudes = magnitudes_node(log_variance, draws.noises[i]);
    auto masked = ag::mul(ag::constant(draws.masks[i]), magnitudes);
    auto augmented = ag::add(features, masked);
    auto recon_in = recon_input == "raw" ? magnitudes : masked;
    auto reconstructed = model.reconstruct(recon_in, training);
    auto recon_u = recon_loss_node(reconstructed, features);
    auto task_u =
        ag::softmax_cross_entropy(model.classifier.forward(augmented), labels);
    recon_sum = i == 0 ? recon_u : ag::add(recon_sum, recon_u);
    task_aug_sum = i == 0 ? task_u : ag::add(task_aug_sum, task_u);
  }
  const double inv_u = 1.0 / static_cast<double>(u);
  auto recon = ag::scale(recon_sum, inv_u);
  auto task_aug = ag::scale(task_aug_sum, inv_u);

  auto brsda_terms = ag::add(ag::add(kl, recon), task_aug);
  out.total = ag::add(task_orig, ag::scale(brsda_terms, alpha));

  out.breakdown.kl_term = kl->value.item();
  out.breakdown.recon_term = recon->value.item();
  out.breakdown.task_original = task_orig->value.item();
  out.breakdown.task_augmented = task_aug->value.item();
  out.breakdown.alpha = alpha;
  out.breakdown.total = out.total->value.item();
  return out;
}

std::string breakdown_str(const BrsdaLossBreakdown& b) {
  std::ostringstream os;
  os << "total=" << b.total << " task_orig=" << b.task_original
     << " task_aug=" << b.task_augmented << " kl=" << b.kl_term
     << " recon=" << b.recon_term << " alpha=" << b.alpha;
  return os.str();
}

}  // namespace

ComposedLoss compose_step_loss(Model& model, const Tensor& inputs,
                               const std::vector<int>& labels, double alpha,
                               const StepDraws& draws,
                               const std::string& recon_input, bool training) {
  auto features = model.backbone->forward(inputs, training);
  return compose_from_features(model, features, labels, alpha, draws,
                               recon_input, training);
}

BrsdaLossBreakdown train_step(Model& model, AdamW& optimizer,
                              const Tensor& inputs,
                              const std::vector<int>& labels,
                              const AugmentationConfig& augmentation,
                              double alpha, double lr, double clip_norm,
                              RngStream& aug_rng) {
  if (labels.empty()) throw ConfigError("train_step: empty batch");
  auto features = model.backbone->forward(inputs, /*training=*/true);

  const bool use_brsda = alpha != 0.0 && augmentation.u > 0;
  StepDraws draws;
  if (use_brsda) {
    draws = sample_step_draws(features->value, augmentation.lambda,
                              augmentation.u, aug_rng);
  }
  ComposedLoss loss =
      compose_from_features(model, features, labels, alpha, draws,
                            augmentation.recon_input, /*training=*/true);
  if (!std::isfinite(loss.breakdown.total)) {
    throw NumericError("train_step: non-finite loss; " +
                       breakdown_str(loss.breakdown));
  }

  ag::backward(loss.total);
  // With the branch off, phi_m/phi_a are outside the graph: no gradients,
  // no update (keeps alpha=0 runs identical to a plain ERM loop).
  const std::vector<NamedParam> active =
      use_brsda ? model.all_params() : model.theta_params();
  clip_global_norm(active, clip_norm);
  optimizer.step(active, lr);
  return loss.breakdown;
}

EvalMetrics evaluate(Model& model, const LabeledDataset& dataset,
                     int batch_size) {
  if (dataset.size() == 0) throw DataError("evaluate: empty dataset");
  const std::size_t n = dataset.size();
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  Tensor scores({n, static_cast<std::size_t>(model.classes)});
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t stop = std::min(n, start + bs);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor inputs = model.backbone->prepare_batch(dataset.images, idx);
    auto features = model.backbone->forward(inputs, /*training=*/false);
    auto logits = model.classifier.forward(features);
    const Tensor probs = ag::softmax_rows(logits->value);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (int c = 0; c < model.classes; ++c) {
        scores.at(start + i, static_cast<std::size_t>(c)) =
            probs.at(i, static_cast<std::size_t>(c));
      }
    }
  }
  ScoredPredictions preds{std::move(scores), dataset.labels};
  preds.validate();
  EvalMetrics out;
  out.auc = auc_macro(preds);
  out.acc = accuracy(preds);
  out.per_class_auc.resize(static_cast<std::size_t>(model.classes),
                           std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < model.classes; ++c) {
    std::vector<double> class_scores(preds.labels.size());
    std::vector<int> class_labels(preds.labels.size());
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < preds.labels.size(); ++i) {
      class_scores[i] = preds.scores.at(i, static_cast<std::size_t>(c));
      class_labels[i] = preds.labels[i] == c ? 1 : 0;
      (class_labels[i] ? has_pos : has_neg) = true;
    }
    if (has_pos && has_neg) {
      out.per_class_auc[static_cast<std::size_t>(c)] =
          auc_binary(class_scores, class_labels);
    }
  }
  return out;
}

namespace {

struct ParamSnapshot {
  std::vector<Tensor> params;
  std::vector<Tensor> states;
};

ParamSnapshot take_snapshot(Model& model) {
  ParamSnapshot snap;
  for (const NamedParam& p : model.all_params()) snap.params.push_back(p.var->value);
  for (const NamedState& s : model.state_tensors()) snap.states.push_back(*s.tensor);
  return snap;
}

void restore_snapshot(Model& model, const ParamSnapshot& snap) {
  const auto params = model.all_params();
  const auto states = model.state_tensors();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].var->value = snap.params[i];
  for (std::size_t i = 0; i < states.size(); ++i) *states[i].tensor = snap.states[i];
}

}  // namespace

TrainResult train_run(const DatasetBundle& data, const ExperimentConfig& config,
                      Model& model) {
  config.validate();
  if (data.train.size() == 0 || data.val.size() == 0 || data.test.size() == 0) {
    throw DataError("train_run: all three splits must be nonempty");
  }

  const std::size_t n = data.train.size();
  const std::size_t bs = static_cast<std::size_t>(config.schedule.batch_size);
  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>((n + bs - 1) / bs);

  AdamW optimizer(AdamW::Options{
      .weight_decay = config.schedule.weight_decay,
  });
  RngStream aug_rng(derive_seed(config.seed, streams::kAugment));

  TrainResult result;
  ParamSnapshot best;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < config.schedule.total_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double alpha = alpha_at(epoch, config.augmentation, config.schedule);
    const auto order = epoch_order(n, config.seed, epoch);

    EpochMetrics em;
    em.epoch = epoch;
    em.alpha = alpha;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs, ++step, ++batches) {
      const std::size_t stop = std::min(n, start + bs);
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                   order.begin() + static_cast<long>(stop));
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        labels[i] = data.train.labels[idx[i]];
      }
      const Tensor inputs = model.backbone->prepare_batch(data.train.images, idx);
      const double lr = lr_at(step, steps_per_epoch, config.schedule);
      const BrsdaLossBreakdown b =
          train_step(model, optimizer, inputs, labels, config.augmentation,
                     alpha, lr, config.schedule.clip_norm, aug_rng);
      em.lr = lr;
      em.train_loss += b.total;
      em.kl += b.kl_term;
      em.recon += b.recon_term;
      em.task_orig += b.task_original;
      em.task_aug += b.task_augmented;
      result.step_breakdowns.push_back(b);
    }
    const double inv = 1.0 / static_cast<double>(batches);
    em.train_loss *= inv;
    em.kl *= inv;
    em.recon *= inv;
    em.task_orig *= inv;
    em.task_aug *= inv;

    const EvalMetrics val = evaluate(model, data.val, config.schedule.batch_size);
    em.val_auc = val.auc;
    em.val_acc = val.acc;
    if (result.best_epoch < 0 || val.auc > result.best_val_auc) {
      result.best_epoch = epoch;
      result.best_val_auc = val.auc;
      result.best_val = val;
      best = take_snapshot(model);
    }
    em.wall_seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - epoch_start)
                          .count();
    result.epochs.push_back(em);
  }

  result.final_val = evaluate(model, data.val, config.schedule.batch_size);
  result.final_test = evaluate(model, data.test, config.schedule.batch_size);

  const std::string digest = config_digest(config);
  namespace fs = std::filesystem;
  if (!config.output_dir.empty()) {
    fs::create_directories(config.output_dir);
    const fs::path out(config.output_dir);
    result.metrics_csv_path = (out / "metrics.csv").string();
    write_metrics_csv(result.epochs, digest, result.metrics_csv_path);
    std::ofstream cfg(out / "config.json");
    cfg << config_to_json_string(config) << "\n";
    CheckpointMeta meta;
    meta.config_digest = digest;
    meta.epoch = config.schedule.total_epochs - 1;
    meta.val_auc = result.final_val.auc;
    result.checkpoint_final_path = (out / "checkpoint_final.npz").string();
    save_checkpoint(model, meta, result.checkpoint_final_path);
  }

  restore_snapshot(model, best);
  result.best_test = evaluate(model, data.test, config.schedule.batch_size);
  result.best_train = evaluate(model, data.train, config.schedule.batch_size);
  if (!config.output_dir.empty()) {
    CheckpointMeta meta;
    meta.config_digest = digest;
    meta.epoch = result.best_epoch;
    meta.val_auc = result.best_val_auc;
    result.checkpoint_best_path =
        (std::filesystem::path(config.output_dir) / "checkpoint_best.npz")
            .string();
    save_checkpoint(model, meta, result.checkpoint_best_path);
  }
  return result;
}

TrainResult train_run(const ExperimentConfig& config) {
  config.validate();
  const DatasetBundle data = build_dataset(config.dataset);
  ModelSpec spec;
  spec.backbone_kind = config.backbone.kind;
  spec.feature_dim = config.backbone.feature_dim;
  spec.estimator_hidden = config.backbone.estimator_hidden;
  spec.backbone_hidden = config.backbone.backbone_hidden;
  std::vector<std::size_t> sample_shape(data.train.images.shape().begin() + 1,
                                        data.train.images.shape().end());
  Model model = build_model(spec, sample_shape, data.classes, config.seed);
  return train_run(data, config, model);
}

void write_metrics_csv(const std::vector<EpochMetrics>& epochs,
                       const std::string& digest, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write metrics csv '" + path + "'");
  f << "# config_digest=" << digest << "\n";
  f << "epoch,lr,alpha,train_loss,kl,recon,task_orig,task_aug,val_auc,"
       "val_acc,wall_seconds\n";
  for (const EpochMetrics& e : epochs) {
    f << e.epoch << ',' << format_full(e.lr) << ',' << format_full(e.alpha)
      << ',' << format_full(e.train_loss) << ',' << format_full(e.kl) << ','
      << format_full(e.recon) << ',' << format_full(e.task_orig) << ','
      << format_full(e.task_aug) << ',' << format_full(e.val_auc) << ','
      << format_full(e.val_acc) << ',' << format_full(e.wall_seconds) << "\n";
  }
}

}  // namespace brsda
