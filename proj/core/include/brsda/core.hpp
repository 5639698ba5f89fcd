#pragma once

#include <utility>

#include "brsda/autodiff.hpp"
#include "brsda/rng.hpp"
#include "brsda/tensor.hpp"

namespace brsda {

// Batch of k-dimensional feature vectors, shape {batch, k}.
using FeatureBatch = Tensor;

// Binary per-coordinate direction mask. bits[i][j] == 0 wherever the
// associated feature is exactly zero; all entries are exactly 0 or 1.
struct DirectionMask {
  Tensor bits;
};

// Zero-mean diagonal Gaussian over magnitudes, parameterized by
// per-coordinate log-variance. The mean is structurally zero: the
// distribution models offsets relative to the original feature.
struct MagnitudeDistribution {
  Tensor log_variance;
};

// Reparameterized draw: magnitudes = exp(0.5 * log_variance) * noise, with
// noise i.i.d. standard normal. Both are kept so gradients can flow through
// the standard deviation only.
struct MagnitudeSample {
  Tensor magnitudes;
  Tensor noise;
};

// Component values of one training step's composite loss:
//   total = task_original + alpha * (kl_term + recon_term + task_augmented)
struct BrsdaLossBreakdown {
  double kl_term = 0.0;
  double recon_term = 0.0;
  double task_original = 0.0;
  double task_augmented = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

// log_variance values are clamped to this range before exponentiation; the
// clamp has identity backward (it sits outside the gradient path).
constexpr double kLogVarClamp = 10.0;

// ---------------------------------------------------------------------------
// Pure operations (deterministic given the random stream)
// ---------------------------------------------------------------------------

// Draws a fresh mask per batch element and coordinate: each coordinate is
// kept with probability 1 - lambda, then zeroed wherever the feature value
// is exactly 0. Consumes exactly one uniform draw per coordinate.
DirectionMask sample_direction_mask(const FeatureBatch& features,
                                    double lambda, RngStream& rng);

// magnitudes = exp(0.5 * log_variance) * noise, noise ~ N(0, 1) elementwise.
MagnitudeSample sample_magnitudes(const MagnitudeDistribution& dist,
                                  RngStream& rng);

// Eq. of the augmented feature: a~ = a + indicator(a != 0) * mask * m.
// Coordinates with zero feature value or zero mask are returned unchanged,
// bit for bit.
FeatureBatch augment(const FeatureBatch& features, const DirectionMask& mask,
                     const MagnitudeSample& sample);

// Mean over batch elements of the per-element sum over coordinates of
// 0.5 * (sigma^2 - log sigma^2 - 1); the closed-form KL from N(0, sigma^2)
// to N(0, 1) summed over independent coordinates. Always >= 0.
double kl_loss(const MagnitudeDistribution& dist);

// 0.5 * mean over batch of the summed squared reconstruction error.
double recon_loss(const FeatureBatch& reconstructed,
                  const FeatureBatch& original);

// (kl_loss, recon_loss) pair; the caller composes the total loss.
std::pair<double, double> brsda_loss(const MagnitudeDistribution& dist,
                                     const FeatureBatch& reconstructed,
                                     const FeatureBatch& original);

// ---------------------------------------------------------------------------
// Graph builders (same math, differentiable)
// ---------------------------------------------------------------------------

// magnitudes from a log-variance node and a fixed noise tensor.
ag::Var magnitudes_node(const ag::Var& log_variance, const Tensor& noise);

// features + mask_bits * magnitudes. mask_bits must already include the
// zero-feature indicator (sample_direction_mask produces such masks).
ag::Var augment_node(const ag::Var& features, const Tensor& mask_bits,
                     const ag::Var& magnitudes);

ag::Var kl_loss_node(const ag::Var& log_variance);

ag::Var recon_loss_node(const ag::Var& reconstructed, const ag::Var& original);

}  // namespace brsda
