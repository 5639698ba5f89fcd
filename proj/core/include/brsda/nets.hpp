#pragma once

#include <memory>
#include <string>
#include <vector>

#include "brsda/autodiff.hpp"
#include "brsda/data.hpp"
#include "brsda/rng.hpp"
#include "brsda/tensor.hpp"

namespace brsda {

struct NamedParam {
  std::string name;
  ag::Var var;
};

struct NamedState {
  std::string name;
  Tensor* tensor;  // batch-norm running statistics
};

// Two affine layers with BatchNorm and GeLU after the first; the second
// layer's output is raw. Shared architecture family of the magnitude
// estimator (k -> h -> k log-variance) and the reconstructor (k -> h -> k
// reconstructed feature).
struct MlpBlock {
  int in = 0, hidden = 0, out = 0;
  ag::Var w1, b1, gamma, beta, w2, b2;
  ag::BatchNormStats bn;

  static MlpBlock make(int in, int hidden, int out, RngStream& rng);
  ag::Var forward(const ag::Var& x, bool training);
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) const;
  void collect_state(const std::string& prefix, std::vector<NamedState>& out);
};

// Feature extractor f1. Maps an assembled input batch to {B, k} features.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual ag::Var forward(const Tensor& batch, bool training) = 0;
  virtual Tensor prepare_batch(const Tensor& images_at_rest,
                               const std::vector<std::size_t>& indices) const = 0;
  virtual int feature_dim() const = 0;
  virtual std::string kind() const = 0;
  virtual void collect_params(std::vector<NamedParam>& out) const = 0;
  virtual void collect_state(std::vector<NamedState>& out) = 0;
};

// Compact 3-block CNN (conv3x3 -> BN -> GeLU -> pool) with global average
// pooling to k channels. Input {B,C,H,W}, H and W divisible by 4, k
// divisible by 4.
std::unique_ptr<Backbone> make_small_cnn(const std::vector<std::size_t>& sample_shape,
                                         int feature_dim, RngStream& rng);

// MLP over flattened inputs, for vector datasets (and as a fallback for any
// input rank).
std::unique_ptr<Backbone> make_mlp_backbone(const std::vector<std::size_t>& sample_shape,
                                            int feature_dim, int hidden,
                                            RngStream& rng);

// Classification head f2: linear  k -> c logits.
struct Classifier {
  int in = 0, classes = 0;
  ag::Var w, b;

  static Classifier make(int in, int classes, RngStream& rng);
  ag::Var forward(const ag::Var& features);
  void collect_params(std::vector<NamedParam>& out) const;
};

// The three learnable components: backbone+classifier (theta), magnitude
// estimator (phi_m) and reconstructor (phi_a). Single-owner during
// training; BatchNorm layers carry running statistics, so training-mode
// forwards are not reentrant.
struct Model {
  std::unique_ptr<Backbone> backbone;
  Classifier classifier;
  MlpBlock estimator;
  MlpBlock reconstructor;
  int feature_dim = 0;
  int classes = 0;
  int estimator_hidden = 0;
  int backbone_hidden = 0;
  std::vector<std::size_t> sample_shape;  // per-sample at-rest dims

  std::vector<NamedParam> theta_params() const;
  std::vector<NamedParam> estimator_params() const;
  std::vector<NamedParam> reconstructor_params() const;
  std::vector<NamedParam> all_params() const;
  std::vector<NamedState> state_tensors();

  // Log-variance head with the numerical clamp applied.
  ag::Var estimate_log_variance(const ag::Var& features, bool training);
  ag::Var reconstruct(const ag::Var& magnitudes, bool training);
};

struct ModelSpec {
  std::string backbone_kind = "cnn_small";  // "cnn_small" | "mlp"
  int feature_dim = 64;
  int estimator_hidden = 0;  // 0 -> feature_dim
  int backbone_hidden = 128;  // mlp backbone only
};

Model build_model(const ModelSpec& spec, const std::vector<std::size_t>& sample_shape,
                  int classes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints: a single archive of named parameter tensors for theta,
// phi_m and phi_a, the running statistics, and a meta.json with the
// experiment-config digest. Key names are stable and documented in the
// README.
// ---------------------------------------------------------------------------
struct CheckpointMeta {
  std::string config_digest;
  std::string backbone_kind;
  int feature_dim = 0;
  int classes = 0;
  int estimator_hidden = 0;
  int backbone_hidden = 0;
  std::vector<std::size_t> sample_shape;
  int epoch = -1;
  double val_auc = 0.0;
};

void save_checkpoint(Model& model, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace brsda
