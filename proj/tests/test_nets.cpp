#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "brsda/core.hpp"
#include "brsda/nets.hpp"
#include "brsda/optim.hpp"
#include "test_util.hpp"

using namespace brsda;
using testutil::fd_rel_err;
using testutil::random_tensor;

namespace {

void zero_params(const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) p.var->value.fill(0.0);
}

Model toy_cnn_model(int classes = 3, std::uint64_t seed = 1) {
  ModelSpec spec;
  spec.backbone_kind = "cnn_small";
  spec.feature_dim = 16;
  return build_model(spec, {8, 8, 1}, classes, seed);
}

}  // namespace

TEST_CASE("estimator preserves shape and is zero at zero parameters") {
  RngStream rng(3);
  MlpBlock estimator = MlpBlock::make(64, 64, 64, rng);
  const Tensor features = random_tensor({8, 64}, rng);
  auto out = estimator.forward(ag::constant(features), true);
  CHECK(out->value.shape() == std::vector<std::size_t>{8, 64});

  std::vector<NamedParam> params;
  estimator.collect_params("estimator", params);
  zero_params(params);
  auto zeroed = estimator.forward(ag::constant(features), true);
  for (std::size_t i = 0; i < zeroed->value.size(); ++i) {
    CHECK(zeroed->value[i] == 0.0);  // log-variance 0 -> sigma^2 = 1
  }
}

TEST_CASE("estimator gradients against finite differences on a 4x8 toy") {
  RngStream rng(5);
  MlpBlock estimator = MlpBlock::make(8, 8, 8, rng);
  const Tensor features = random_tensor({4, 8}, rng);

  auto build = [&] {
    auto lv = ag::clamp_pass_through(
        estimator.forward(ag::constant(features), true), -kLogVarClamp,
        kLogVarClamp);
    return kl_loss_node(lv);
  };
  std::vector<NamedParam> params;
  estimator.collect_params("estimator", params);
  for (const NamedParam& p : params) {
    for (std::size_t i = 0; i < p.var->value.size(); i += 7) {
      CHECK(fd_rel_err(build, p.var, i, 1e-5) < 1e-3);
    }
  }
}

TEST_CASE("reconstructor: zero weights broadcast the output bias") {
  RngStream rng(7);
  MlpBlock recon = MlpBlock::make(6, 6, 6, rng);
  std::vector<NamedParam> params;
  recon.collect_params("reconstructor", params);
  zero_params(params);
  recon.b2->value = Tensor({6}, {1.0, -2.0, 3.0, 0.0, 0.5, -0.5});
  const Tensor m = random_tensor({3, 6}, rng);
  auto out = recon.forward(ag::constant(m), true);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(out->value.at(r, c) == recon.b2->value[c]);
    }
  }
}

TEST_CASE("reconstructor trains down on fixed pairs") {
  RngStream rng(9);
  MlpBlock recon = MlpBlock::make(8, 8, 8, rng);
  const Tensor magnitudes = random_tensor({16, 8}, rng);
  const Tensor targets = random_tensor({16, 8}, rng, 0.5);

  std::vector<NamedParam> params;
  recon.collect_params("reconstructor", params);
  AdamW opt(AdamW::Options{.weight_decay = 0.0});

  std::vector<double> losses;
  for (int step = 0; step <= 100; ++step) {
    auto out = recon.forward(ag::constant(magnitudes), true);
    auto loss = recon_loss_node(out, ag::constant(targets));
    losses.push_back(loss->value.item());
    ag::backward(loss);
    opt.step(params, 0.01);
  }
  // Overfit-one-batch oracle: the trend must go down hard.
  CHECK(losses[25] < losses[0]);
  CHECK(losses[50] < losses[25]);
  CHECK(losses[100] < losses[50]);
  CHECK(losses[100] < 0.2 * losses[0]);
}

TEST_CASE("cnn backbone shape contract") {
  ModelSpec spec;
  spec.backbone_kind = "cnn_small";
  spec.feature_dim = 64;
  Model model = build_model(spec, {16, 16, 1}, 3, 11);

  RngStream rng(13);
  Tensor batch = random_tensor({5, 1, 16, 16}, rng, 0.3);
  auto features = model.backbone->forward(batch, true);
  CHECK(features->value.shape() == std::vector<std::size_t>{5, 64});
  auto logits = model.classifier.forward(features);
  CHECK(logits->value.shape() == std::vector<std::size_t>{5, 3});
  CHECK(logits->value.all_finite());
}

TEST_CASE("eval mode maps duplicate inputs to duplicate outputs") {
  Model model = toy_cnn_model();
  RngStream rng(17);
  // Burn in running statistics.
  for (int i = 0; i < 10; ++i) {
    model.backbone->forward(random_tensor({4, 1, 8, 8}, rng, 0.3), true);
  }
  Tensor one = random_tensor({1, 1, 8, 8}, rng, 0.3);
  Tensor two({2, 1, 8, 8});
  for (std::size_t i = 0; i < 64; ++i) {
    two[i] = one[i];
    two[64 + i] = one[i];
  }
  auto f = model.backbone->forward(two, false);
  for (std::size_t j = 0; j < f->value.cols(); ++j) {
    CHECK(f->value.at(0, j) == f->value.at(1, j));
  }
}

TEST_CASE("overfit-one-batch drives cross-entropy below 0.01") {
  Model model = toy_cnn_model(3, 23);
  RngStream rng(29);
  const Tensor batch = random_tensor({8, 1, 8, 8}, rng, 0.4);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1};

  AdamW opt(AdamW::Options{.weight_decay = 0.0});
  const auto params = model.theta_params();
  double loss_value = 1e9;
  for (int step = 0; step < 200 && loss_value >= 0.01; ++step) {
    auto features = model.backbone->forward(batch, true);
    auto loss = ag::softmax_cross_entropy(model.classifier.forward(features), labels);
    loss_value = loss->value.item();
    ag::backward(loss);
    clip_global_norm(params, 5.0);
    opt.step(params, 3e-3);
  }
  CHECK(loss_value < 0.01);
}

TEST_CASE("backbone rejects mismatched input shapes") {
  Model model = toy_cnn_model();
  RngStream rng(31);
  CHECK_THROWS_AS(model.backbone->forward(random_tensor({2, 1, 8, 4}, rng), true),
                  ConfigError);
  CHECK_THROWS_AS(model.estimate_log_variance(
                      ag::constant(random_tensor({2, 9}, rng)), true),
                  ConfigError);
}

TEST_CASE("mlp backbone flattens any sample rank") {
  ModelSpec spec;
  spec.backbone_kind = "mlp";
  spec.feature_dim = 12;
  spec.backbone_hidden = 32;
  Model model = build_model(spec, {4, 4, 2}, 2, 37);
  RngStream rng(41);
  Tensor images = random_tensor({6, 4, 4, 2}, rng, 0.2);
  const Tensor batch = model.backbone->prepare_batch(images, {0, 3, 5});
  CHECK(batch.shape() == std::vector<std::size_t>{3, 32});
  auto f = model.backbone->forward(batch, true);
  CHECK(f->value.shape() == std::vector<std::size_t>{3, 12});
}

TEST_CASE("unknown backbone kind names the extension point") {
  ModelSpec spec;
  spec.backbone_kind = "resnet18";
  CHECK_THROWS_WITH_AS(build_model(spec, {16, 16, 1}, 2, 1),
                       doctest::Contains("resnet18"), ConfigError);
}

TEST_CASE("checkpoint round-trip preserves parameters and metadata") {
  Model model = toy_cnn_model(3, 43);
  RngStream rng(47);
  for (int i = 0; i < 5; ++i) {
    model.backbone->forward(random_tensor({4, 1, 8, 8}, rng, 0.3), true);
  }

  CheckpointMeta meta;
  meta.config_digest = "00ff00ff00ff00ff";
  meta.epoch = 7;
  meta.val_auc = 0.875;
  const auto path =
      (std::filesystem::temp_directory_path() / "brsda_tests" / "ckpt.npz").string();
  std::filesystem::create_directories(
      std::filesystem::temp_directory_path() / "brsda_tests");
  save_checkpoint(model, meta, path);

  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.meta.config_digest == meta.config_digest);
  CHECK(loaded.meta.epoch == 7);
  CHECK(loaded.meta.val_auc == doctest::Approx(0.875));
  CHECK(loaded.meta.backbone_kind == "cnn_small");

  const auto a = model.all_params();
  const auto b = loaded.model.all_params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].var->value == b[i].var->value);
  }

  // Identical eval outputs (running stats restored too).
  Tensor probe = random_tensor({3, 1, 8, 8}, rng, 0.3);
  auto fa = model.backbone->forward(probe, false);
  auto fb = loaded.model.backbone->forward(probe, false);
  CHECK(fa->value == fb->value);
}
