#include "brsda/core.hpp"

#include <algorithm>
#include <cmath>

namespace brsda {

namespace {

void require_valid_features(const FeatureBatch& features, const char* where) {
  if (features.rank() != 2 || features.rows() < 1 || features.cols() < 1) {
    throw ConfigError(std::string(where) +
                      ": features must be a nonempty {batch, k} matrix");
  }
  if (!features.all_finite()) {
    throw ConfigError(std::string(where) + ": features contain NaN/Inf");
  }
}

double clamped(double log_var) {
  return std::min(kLogVarClamp, std::max(-kLogVarClamp, log_var));
}

}  // namespace

DirectionMask sample_direction_mask(const FeatureBatch& features,
                                    double lambda, RngStream& rng) {
  require_valid_features(features, "sample_direction_mask");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("sample_direction_mask: lambda must be in [0,1], got " +
                      std::to_string(lambda));
  }
  Tensor bits(features.shape());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    // One uniform draw per coordinate; lambda=0 keeps all, lambda=1 drops
    // all (uniform() < 1 always holds on [0,1)).
    const double keep = rng.uniform() < lambda ? 0.0 : 1.0;
    bits[i] = features[i] == 0.0 ? 0.0 : keep;
  }
  return DirectionMask{std::move(bits)};
}

MagnitudeSample sample_magnitudes(const MagnitudeDistribution& dist,
                                  RngStream& rng) {
  if (dist.log_variance.rank() != 2 || !dist.log_variance.all_finite()) {
    throw ConfigError(
        "sample_magnitudes: log_variance must be a finite {batch, k} matrix");
  }
  Tensor noise(dist.log_variance.shape());
  Tensor magnitudes(dist.log_variance.shape());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    noise[i] = rng.normal();
    magnitudes[i] = std::exp(0.5 * clamped(dist.log_variance[i])) * noise[i];
  }
  return MagnitudeSample{std::move(magnitudes), std::move(noise)};
}

FeatureBatch augment(const FeatureBatch& features, const DirectionMask& mask,
                     const MagnitudeSample& sample) {
  require_same_shape(features, mask.bits, "augment");
  require_same_shape(features, sample.magnitudes, "augment");
  FeatureBatch out = features;
  for (std::size_t i = 0; i < out.size(); ++i) {
    // The indicator is re-applied here so zero coordinates survive even a
    // hand-built mask; kept coordinates with zero mask are untouched too.
    if (features[i] != 0.0 && mask.bits[i] != 0.0) {
      out[i] += mask.bits[i] * sample.magnitudes[i];
    }
  }
  return out;
}

double kl_loss(const MagnitudeDistribution& dist) {
  const Tensor& lv = dist.log_variance;
  if (lv.rank() != 2 || !lv.all_finite()) {
    throw ConfigError("kl_loss: log_variance must be a finite {batch, k} matrix");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const double t = clamped(lv[i]);
    acc += 0.5 * (std::exp(t) - t - 1.0);
  }
  return acc / static_cast<double>(lv.rows());
}

double recon_loss(const FeatureBatch& reconstructed,
                  const FeatureBatch& original) {
  require_same_shape(reconstructed, original, "recon_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double d = reconstructed[i] - original[i];
    acc += d * d;
  }
  return 0.5 * acc / static_cast<double>(original.rows());
}

std::pair<double, double> brsda_loss(const MagnitudeDistribution& dist,
                                     const FeatureBatch& reconstructed,
                                     const FeatureBatch& original) {
  return {kl_loss(dist), recon_loss(reconstructed, original)};
}

ag::Var magnitudes_node(const ag::Var& log_variance, const Tensor& noise) {
  require_same_shape(log_variance->value, noise, "magnitudes_node");
  auto t = ag::clamp_pass_through(log_variance, -kLogVarClamp, kLogVarClamp);
  auto sigma = ag::exp_(ag::scale(t, 0.5));
  return ag::mul(sigma, ag::constant(noise));
}

ag::Var augment_node(const ag::Var& features, const Tensor& mask_bits,
                     const ag::Var& magnitudes) {
  require_same_shape(features->value, mask_bits, "augment_node");
  return ag::add(features, ag::mul(ag::constant(mask_bits), magnitudes));
}

ag::Var kl_loss_node(const ag::Var& log_variance) {
  const double batch = static_cast<double>(log_variance->value.rows());
  auto t =
      ag::clamp_pass_through(log_variance, -kLogVarClamp, kLogVarClamp);
  // 0.5/B * sum(exp(t) - t - 1)
  auto per_coord = ag::add_scalar(ag::sub(ag::exp_(t), t), -1.0);
  return ag::scale(ag::sum(per_coord), 0.5 / batch);
}

ag::Var recon_loss_node(const ag::Var& reconstructed, const ag::Var& original) {
  require_same_shape(reconstructed->value, original->value, "recon_loss_node");
  const double batch = static_cast<double>(original->value.rows());
  auto sq = ag::square(ag::sub(reconstructed, original));
  return ag::scale(ag::sum(sq), 0.5 / batch);
}

}  // namespace brsda
