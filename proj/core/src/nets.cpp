#include "brsda/nets.hpp"

#include <cmath>

#include <json.hpp>

#include "brsda/core.hpp"
#include "brsda/errors.hpp"
#include "brsda/npz.hpp"

namespace brsda {

namespace {

using json = nlohmann::json;

ag::Var he_normal(std::vector<std::size_t> shape, std::size_t fan_in,
                  RngStream& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
  return ag::leaf(std::move(t));
}

ag::Var zeros(std::vector<std::size_t> shape) {
  return ag::leaf(Tensor(std::move(shape)));
}

ag::Var ones(std::vector<std::size_t> shape) {
  return ag::leaf(Tensor(std::move(shape), 1.0));
}

}  // namespace

// ---------------------------------------------------------------------------
// MlpBlock
// ---------------------------------------------------------------------------

MlpBlock MlpBlock::make(int in, int hidden, int out, RngStream& rng) {
  if (in < 1 || hidden < 1 || out < 1) {
    throw ConfigError("MlpBlock: dimensions must be positive");
  }
  MlpBlock block;
  block.in = in;
  block.hidden = hidden;
  block.out = out;
  const auto szin = static_cast<std::size_t>(in);
  const auto szh = static_cast<std::size_t>(hidden);
  const auto szout = static_cast<std::size_t>(out);
  block.w1 = he_normal({szin, szh}, szin, rng);
  block.b1 = zeros({szh});
  block.gamma = ones({szh});
  block.beta = zeros({szh});
  block.w2 = he_normal({szh, szout}, szh, rng);
  block.b2 = zeros({szout});
  block.bn.running_mean = Tensor({szh});
  block.bn.running_var = Tensor({szh}, 1.0);
  return block;
}

ag::Var MlpBlock::forward(const ag::Var& x, bool training) {
  if (x->value.rank() != 2 || x->value.cols() != static_cast<std::size_t>(in)) {
    throw ConfigError("MlpBlock: input dim mismatch, expected {B," +
                      std::to_string(in) + "} got " + x->value.shape_str());
  }
  auto h = ag::add_rowvec(ag::matmul(x, w1), b1);
  h = ag::batch_norm(h, gamma, beta, &bn, training);
  h = ag::gelu(h);
  return ag::add_rowvec(ag::matmul(h, w2), b2);
}

void MlpBlock::collect_params(const std::string& prefix,
                              std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".fc1.weight", w1});
  out.push_back({prefix + ".fc1.bias", b1});
  out.push_back({prefix + ".bn.gamma", gamma});
  out.push_back({prefix + ".bn.beta", beta});
  out.push_back({prefix + ".fc2.weight", w2});
  out.push_back({prefix + ".fc2.bias", b2});
}

void MlpBlock::collect_state(const std::string& prefix,
                             std::vector<NamedState>& out) {
  out.push_back({prefix + ".bn.running_mean", &bn.running_mean});
  out.push_back({prefix + ".bn.running_var", &bn.running_var});
}

// ---------------------------------------------------------------------------
// SmallCnn
// ---------------------------------------------------------------------------

namespace {

class SmallCnn : public Backbone {
 public:
  SmallCnn(std::size_t channels, std::size_t height, std::size_t width,
           int feature_dim, RngStream& rng)
      : in_c_(channels), h_(height), w_(width), k_(feature_dim) {
    if (feature_dim % 4 != 0 || feature_dim < 4) {
      throw ConfigError("cnn_small: feature_dim must be a multiple of 4");
    }
    if (height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4) {
      throw ConfigError("cnn_small: image sides must be multiples of 4, got " +
                        std::to_string(height) + "x" + std::to_string(width));
    }
    const std::size_t c1 = static_cast<std::size_t>(feature_dim) / 4;
    const std::size_t c2 = static_cast<std::size_t>(feature_dim) / 2;
    const std::size_t c3 = static_cast<std::size_t>(feature_dim);
    conv1_w_ = he_normal({c1, in_c_, 3, 3}, in_c_ * 9, rng);
    conv1_b_ = zeros({c1});
    bn1_g_ = ones({c1});
    bn1_b_ = zeros({c1});
    conv2_w_ = he_normal({c2, c1, 3, 3}, c1 * 9, rng);
    conv2_b_ = zeros({c2});
    bn2_g_ = ones({c2});
    bn2_b_ = zeros({c2});
    conv3_w_ = he_normal({c3, c2, 3, 3}, c2 * 9, rng);
    conv3_b_ = zeros({c3});
    bn3_g_ = ones({c3});
    bn3_b_ = zeros({c3});
    bn1_.running_mean = Tensor({c1});
    bn1_.running_var = Tensor({c1}, 1.0);
    bn2_.running_mean = Tensor({c2});
    bn2_.running_var = Tensor({c2}, 1.0);
    bn3_.running_mean = Tensor({c3});
    bn3_.running_var = Tensor({c3}, 1.0);
  }

  ag::Var forward(const Tensor& batch, bool training) override {
    if (batch.rank() != 4 || batch.dim(1) != in_c_ || batch.dim(2) != h_ ||
        batch.dim(3) != w_) {
      throw ConfigError("cnn_small: input shape mismatch, expected {B," +
                        std::to_string(in_c_) + "," + std::to_string(h_) + "," +
                        std::to_string(w_) + "} got " + batch.shape_str());
    }
    auto x = ag::constant(batch);
    x = ag::gelu(ag::batch_norm(ag::conv2d_3x3(x, conv1_w_, conv1_b_), bn1_g_,
                                bn1_b_, &bn1_, training));
    x = ag::maxpool2(x);
    x = ag::gelu(ag::batch_norm(ag::conv2d_3x3(x, conv2_w_, conv2_b_), bn2_g_,
                                bn2_b_, &bn2_, training));
    x = ag::maxpool2(x);
    x = ag::gelu(ag::batch_norm(ag::conv2d_3x3(x, conv3_w_, conv3_b_), bn3_g_,
                                bn3_b_, &bn3_, training));
    return ag::global_avg_pool(x);
  }

  Tensor prepare_batch(const Tensor& images,
                       const std::vector<std::size_t>& indices) const override {
    if (images.rank() != 4) {
      throw ConfigError("cnn_small: dataset must be rank-4 {N,H,W,C}");
    }
    const std::size_t H = images.dim(1), W = images.dim(2), C = images.dim(3);
    Tensor out({indices.size(), C, H, W});
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const std::size_t n = indices[b];
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          for (std::size_t c = 0; c < C; ++c) {
            out[((b * C + c) * H + y) * W + x] =
                images[((n * H + y) * W + x) * C + c];
          }
        }
      }
    }
    return out;
  }

  int feature_dim() const override { return k_; }
  std::string kind() const override { return "cnn_small"; }

  void collect_params(std::vector<NamedParam>& out) const override {
    out.push_back({"backbone.conv1.weight", conv1_w_});
    out.push_back({"backbone.conv1.bias", conv1_b_});
    out.push_back({"backbone.bn1.gamma", bn1_g_});
    out.push_back({"backbone.bn1.beta", bn1_b_});
    out.push_back({"backbone.conv2.weight", conv2_w_});
    out.push_back({"backbone.conv2.bias", conv2_b_});
    out.push_back({"backbone.bn2.gamma", bn2_g_});
    out.push_back({"backbone.bn2.beta", bn2_b_});
    out.push_back({"backbone.conv3.weight", conv3_w_});
    out.push_back({"backbone.conv3.bias", conv3_b_});
    out.push_back({"backbone.bn3.gamma", bn3_g_});
    out.push_back({"backbone.bn3.beta", bn3_b_});
  }

  void collect_state(std::vector<NamedState>& out) override {
    out.push_back({"backbone.bn1.running_mean", &bn1_.running_mean});
    out.push_back({"backbone.bn1.running_var", &bn1_.running_var});
    out.push_back({"backbone.bn2.running_mean", &bn2_.running_mean});
    out.push_back({"backbone.bn2.running_var", &bn2_.running_var});
    out.push_back({"backbone.bn3.running_mean", &bn3_.running_mean});
    out.push_back({"backbone.bn3.running_var", &bn3_.running_var});
  }

 private:
  std::size_t in_c_, h_, w_;
  int k_;
  ag::Var conv1_w_, conv1_b_, bn1_g_, bn1_b_;
  ag::Var conv2_w_, conv2_b_, bn2_g_, bn2_b_;
  ag::Var conv3_w_, conv3_b_, bn3_g_, bn3_b_;
  ag::BatchNormStats bn1_, bn2_, bn3_;
};

class MlpBackbone : public Backbone {
 public:
  MlpBackbone(std::size_t input_dim, int feature_dim, int hidden, RngStream& rng)
      : d_(input_dim), k_(feature_dim) {
    block_ = MlpBlock::make(static_cast<int>(input_dim), hidden, feature_dim, rng);
  }

  ag::Var forward(const Tensor& batch, bool training) override {
    if (batch.rank() != 2 || batch.cols() != d_) {
      throw ConfigError("mlp backbone: input shape mismatch");
    }
    return ag::gelu(block_.forward(ag::constant(batch), training));
  }

  Tensor prepare_batch(const Tensor& images,
                       const std::vector<std::size_t>& indices) const override {
    std::size_t per_sample = 1;
    for (std::size_t r = 1; r < images.rank(); ++r) per_sample *= images.dim(r);
    if (per_sample != d_) {
      throw ConfigError("mlp backbone: dataset sample size mismatch");
    }
    Tensor out({indices.size(), per_sample});
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const double* src = images.data() + indices[b] * per_sample;
      for (std::size_t j = 0; j < per_sample; ++j) out[b * per_sample + j] = src[j];
    }
    return out;
  }

  int feature_dim() const override { return k_; }
  std::string kind() const override { return "mlp"; }

  void collect_params(std::vector<NamedParam>& out) const override {
    block_.collect_params("backbone", out);
  }

  void collect_state(std::vector<NamedState>& out) override {
    block_.collect_state("backbone", out);
  }

 private:
  std::size_t d_;
  int k_;
  MlpBlock block_;
};

}  // namespace

std::unique_ptr<Backbone> make_small_cnn(const std::vector<std::size_t>& sample_shape,
                                         int feature_dim, RngStream& rng) {
  if (sample_shape.size() != 3) {
    throw ConfigError("cnn_small: expects {H,W,C} samples, got rank " +
                      std::to_string(sample_shape.size()));
  }
  return std::make_unique<SmallCnn>(sample_shape[2], sample_shape[0],
                                    sample_shape[1], feature_dim, rng);
}

std::unique_ptr<Backbone> make_mlp_backbone(const std::vector<std::size_t>& sample_shape,
                                            int feature_dim, int hidden,
                                            RngStream& rng) {
  std::size_t d = 1;
  for (std::size_t v : sample_shape) d *= v;
  if (d < 1) throw ConfigError("mlp backbone: empty sample shape");
  return std::make_unique<MlpBackbone>(d, feature_dim, hidden, rng);
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

Classifier Classifier::make(int in, int classes, RngStream& rng) {
  if (classes < 2) throw ConfigError("classifier: needs >= 2 classes");
  Classifier c;
  c.in = in;
  c.classes = classes;
  c.w = he_normal({static_cast<std::size_t>(in), static_cast<std::size_t>(classes)},
                  static_cast<std::size_t>(in), rng);
  c.b = zeros({static_cast<std::size_t>(classes)});
  return c;
}

ag::Var Classifier::forward(const ag::Var& features) {
  return ag::add_rowvec(ag::matmul(features, w), b);
}

void Classifier::collect_params(std::vector<NamedParam>& out) const {
  out.push_back({"classifier.weight", w});
  out.push_back({"classifier.bias", b});
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

std::vector<NamedParam> Model::theta_params() const {
  std::vector<NamedParam> out;
  backbone->collect_params(out);
  classifier.collect_params(out);
  return out;
}

std::vector<NamedParam> Model::estimator_params() const {
  std::vector<NamedParam> out;
  estimator.collect_params("estimator", out);
  return out;
}

std::vector<NamedParam> Model::reconstructor_params() const {
  std::vector<NamedParam> out;
  reconstructor.collect_params("reconstructor", out);
  return out;
}

std::vector<NamedParam> Model::all_params() const {
  std::vector<NamedParam> out = theta_params();
  estimator.collect_params("estimator", out);
  reconstructor.collect_params("reconstructor", out);
  return out;
}

std::vector<NamedState> Model::state_tensors() {
  std::vector<NamedState> out;
  backbone->collect_state(out);
  estimator.collect_state("estimator", out);
  reconstructor.collect_state("reconstructor", out);
  return out;
}

ag::Var Model::estimate_log_variance(const ag::Var& features, bool training) {
  if (features->value.cols() != static_cast<std::size_t>(feature_dim)) {
    throw ConfigError("estimate_log_variance: feature_dim mismatch");
  }
  auto raw = estimator.forward(features, training);
  return ag::clamp_pass_through(raw, -kLogVarClamp, kLogVarClamp);
}

ag::Var Model::reconstruct(const ag::Var& magnitudes, bool training) {
  if (magnitudes->value.cols() != static_cast<std::size_t>(feature_dim)) {
    throw ConfigError("reconstruct: magnitude dim mismatch");
  }
  return reconstructor.forward(magnitudes, training);
}

Model build_model(const ModelSpec& spec, const std::vector<std::size_t>& sample_shape,
                  int classes, std::uint64_t seed) {
  RngStream rng(derive_seed(seed, streams::kInit));
  Model m;
  m.feature_dim = spec.feature_dim;
  m.classes = classes;
  m.estimator_hidden = spec.estimator_hidden > 0 ? spec.estimator_hidden
                                                 : spec.feature_dim;
  m.backbone_hidden = spec.backbone_hidden;
  m.sample_shape = sample_shape;
  if (spec.backbone_kind == "cnn_small") {
    m.backbone = make_small_cnn(sample_shape, spec.feature_dim, rng);
  } else if (spec.backbone_kind == "mlp") {
    m.backbone = make_mlp_backbone(sample_shape, spec.feature_dim,
                                   spec.backbone_hidden, rng);
  } else {
    // ResNet-18 and friends are named extension points, not shipped.
    throw ConfigError("backbone.kind '" + spec.backbone_kind +
                      "' is not available; shipped backbones: cnn_small, mlp");
  }
  m.classifier = Classifier::make(spec.feature_dim, classes, rng);
  m.estimator = MlpBlock::make(spec.feature_dim, m.estimator_hidden,
                               spec.feature_dim, rng);
  m.reconstructor = MlpBlock::make(spec.feature_dim, m.estimator_hidden,
                                   spec.feature_dim, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(Model& model, const CheckpointMeta& meta,
                     const std::string& path) {
  std::vector<std::pair<std::string, npz::Array>> arrays;
  for (const NamedParam& p : model.all_params()) {
    arrays.emplace_back(p.name, npz::from_tensor(p.var->value));
  }
  for (const NamedState& s : model.state_tensors()) {
    arrays.emplace_back(s.name, npz::from_tensor(*s.tensor));
  }
  json j{{"format", "brsda-checkpoint"},
         {"version", 1},
         {"config_digest", meta.config_digest},
         {"backbone", model.backbone->kind()},
         {"feature_dim", model.feature_dim},
         {"classes", model.classes},
         {"estimator_hidden", model.estimator_hidden},
         {"backbone_hidden", model.backbone_hidden},
         {"sample_shape", model.sample_shape},
         {"epoch", meta.epoch},
         {"val_auc", meta.val_auc}};
  npz::save(path, arrays, {{"meta.json", j.dump(2)}});
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const npz::Contents contents = npz::load(path);
  const auto it = contents.extras.find("meta.json");
  if (it == contents.extras.end()) {
    throw DataError("checkpoint '" + path + "' missing meta.json");
  }
  json j = json::parse(it->second);
  if (j.value("format", "") != "brsda-checkpoint") {
    throw DataError("'" + path + "' is not a brsda checkpoint");
  }
  CheckpointMeta meta;
  meta.config_digest = j.value("config_digest", "");
  meta.backbone_kind = j.at("backbone").get<std::string>();
  meta.feature_dim = j.at("feature_dim").get<int>();
  meta.classes = j.at("classes").get<int>();
  meta.estimator_hidden = j.at("estimator_hidden").get<int>();
  meta.backbone_hidden = j.at("backbone_hidden").get<int>();
  meta.sample_shape = j.at("sample_shape").get<std::vector<std::size_t>>();
  meta.epoch = j.value("epoch", -1);
  meta.val_auc = j.value("val_auc", 0.0);

  ModelSpec spec;
  spec.backbone_kind = meta.backbone_kind;
  spec.feature_dim = meta.feature_dim;
  spec.estimator_hidden = meta.estimator_hidden;
  spec.backbone_hidden = meta.backbone_hidden;
  Model model = build_model(spec, meta.sample_shape, meta.classes, /*seed=*/0);

  for (const NamedParam& p : model.all_params()) {
    const auto ai = contents.arrays.find(p.name);
    if (ai == contents.arrays.end()) {
      throw DataError("checkpoint '" + path + "' missing tensor '" + p.name + "'");
    }
    Tensor t = npz::to_tensor(ai->second);
    require_same_shape(p.var->value, t, "load_checkpoint");
    p.var->value = std::move(t);
  }
  for (const NamedState& s : model.state_tensors()) {
    const auto ai = contents.arrays.find(s.name);
    if (ai == contents.arrays.end()) {
      throw DataError("checkpoint '" + path + "' missing tensor '" + s.name + "'");
    }
    Tensor t = npz::to_tensor(ai->second);
    require_same_shape(*s.tensor, t, "load_checkpoint");
    *s.tensor = std::move(t);
  }
  return {std::move(model), std::move(meta)};
}

}  // namespace brsda
