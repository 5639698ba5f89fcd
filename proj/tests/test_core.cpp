#include <doctest.h>

#include <cmath>

#include "brsda/core.hpp"
#include "test_util.hpp"

using namespace brsda;
using testutil::fd_rel_err;
using testutil::random_tensor;

TEST_CASE("direction mask: lambda=0 keeps all but zero coordinates") {
  FeatureBatch features({1, 3}, {1.0, 0.0, 2.0});
  RngStream rng(1);
  const DirectionMask mask = sample_direction_mask(features, 0.0, rng);
  CHECK(mask.bits == Tensor({1, 3}, {1.0, 0.0, 1.0}));
}

TEST_CASE("direction mask: lambda=1 drops everything") {
  RngStream data_rng(2), rng(3);
  const FeatureBatch features = random_tensor({4, 8}, data_rng);
  const DirectionMask mask = sample_direction_mask(features, 1.0, rng);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) CHECK(mask.bits[i] == 0.0);
}

TEST_CASE("direction mask: empirical drop rate approaches lambda") {
  // Monte-Carlo estimate of the Bernoulli rate over 1e5 coordinate draws.
  FeatureBatch features({100, 1000}, 1.0);  // no zeros
  RngStream rng(4);
  const DirectionMask mask = sample_direction_mask(features, 0.6, rng);
  double zero_fraction = 0.0;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    zero_fraction += mask.bits[i] == 0.0 ? 1.0 : 0.0;
  }
  zero_fraction /= static_cast<double>(mask.bits.size());
  CHECK(zero_fraction > 0.58);
  CHECK(zero_fraction < 0.62);
}

TEST_CASE("direction mask: entries are exactly 0 or 1, zeros always masked") {
  RngStream rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor features = random_tensor({3, 7}, rng);
    features[rep % features.size()] = 0.0;
    RngStream mask_rng(100 + static_cast<std::uint64_t>(rep));
    const DirectionMask mask = sample_direction_mask(features, 0.4, mask_rng);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
      CHECK((mask.bits[i] == 0.0 || mask.bits[i] == 1.0));
      if (features[i] == 0.0) CHECK(mask.bits[i] == 0.0);
    }
  }
}

TEST_CASE("direction mask: lambda outside [0,1] is a domain error") {
  FeatureBatch features({1, 2}, 1.0);
  RngStream rng(6);
  CHECK_THROWS_AS(sample_direction_mask(features, -0.1, rng), ConfigError);
  CHECK_THROWS_AS(sample_direction_mask(features, 1.5, rng), ConfigError);
}

TEST_CASE("magnitudes: sigma=1 reproduces the noise") {
  MagnitudeDistribution dist{Tensor({1, 2})};  // log-variance zero
  RngStream rng(7);
  const MagnitudeSample s = sample_magnitudes(dist, rng);
  CHECK(s.magnitudes == s.noise);
}

TEST_CASE("magnitudes: reparameterization identity") {
  // log_variance = ln 4 forces sigma = 2.
  MagnitudeDistribution dist{Tensor({1, 1}, {std::log(4.0)})};
  RngStream rng(8);
  const MagnitudeSample s = sample_magnitudes(dist, rng);
  CHECK(s.magnitudes[0] == doctest::Approx(2.0 * s.noise[0]).epsilon(1e-15));

  RngStream rng2(9);
  MagnitudeDistribution wide{random_tensor({3, 5}, rng2)};
  RngStream draw(10);
  const MagnitudeSample w = sample_magnitudes(wide, draw);
  for (std::size_t i = 0; i < w.magnitudes.size(); ++i) {
    const double sigma = std::exp(0.5 * wide.log_variance[i]);
    CHECK(w.magnitudes[i] == doctest::Approx(sigma * w.noise[i]).epsilon(1e-12));
  }
}

TEST_CASE("magnitudes: identical seeds give identical draws") {
  RngStream rng_a(42), rng_b(42);
  MagnitudeDistribution dist{Tensor({4, 6}, {0.3})};
  const MagnitudeSample a = sample_magnitudes(dist, rng_a);
  const MagnitudeSample b = sample_magnitudes(dist, rng_b);
  CHECK(a.magnitudes == b.magnitudes);
  CHECK(a.noise == b.noise);
}

TEST_CASE("magnitudes: non-finite log-variance rejected") {
  Tensor lv({1, 2}, {0.0, std::numeric_limits<double>::infinity()});
  RngStream rng(11);
  CHECK_THROWS_AS(sample_magnitudes(MagnitudeDistribution{lv}, rng), ConfigError);
}

TEST_CASE("augment: forced elementwise examples") {
  {
    FeatureBatch a({1, 3}, {1.0, 0.0, 2.0});
    DirectionMask mask{Tensor({1, 3}, {1.0, 0.0, 0.0})};
    MagnitudeSample m{Tensor({1, 3}, {0.5, 0.3, -0.2}), Tensor({1, 3})};
    CHECK(augment(a, mask, m) == Tensor({1, 3}, {1.5, 0.0, 2.0}));
  }
  {
    RngStream rng(12);
    const FeatureBatch a = random_tensor({2, 4}, rng);
    DirectionMask zero_mask{Tensor({2, 4})};
    MagnitudeSample m{random_tensor({2, 4}, rng), Tensor({2, 4})};
    CHECK(augment(a, zero_mask, m) == a);  // all-zero mask is the identity
  }
  {
    FeatureBatch a({1, 2}, {-1.0, 3.0});
    DirectionMask mask{Tensor({1, 2}, {1.0, 1.0})};
    MagnitudeSample m{Tensor({1, 2}, {0.25, -0.5}), Tensor({1, 2})};
    CHECK(augment(a, mask, m) == Tensor({1, 2}, {-0.75, 2.5}));
  }
}

TEST_CASE("augment: shape mismatch is a contract error") {
  FeatureBatch a({1, 3}, 1.0);
  DirectionMask mask{Tensor({1, 2}, 1.0)};
  MagnitudeSample m{Tensor({1, 3}), Tensor({1, 3})};
  CHECK_THROWS_AS(augment(a, mask, m), ConfigError);
}

TEST_CASE("property: zero coordinates preserved bit-exactly") {
  RngStream rng(13);
  for (int rep = 0; rep < 200; ++rep) {
    Tensor features = random_tensor({4, 9}, rng);
    for (std::size_t i = 0; i < features.size(); i += 4) features[i] = 0.0;
    RngStream draw(1000 + static_cast<std::uint64_t>(rep));
    const double lambda = 0.3;
    const DirectionMask mask = sample_direction_mask(features, lambda, draw);
    MagnitudeDistribution dist{random_tensor({4, 9}, rng)};
    const MagnitudeSample m = sample_magnitudes(dist, draw);
    const FeatureBatch augmented = augment(features, mask, m);
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i] == 0.0) CHECK(augmented[i] == 0.0);
    }
  }
}

TEST_CASE("property: lambda=1 makes augmentation the identity") {
  RngStream rng(14);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor features = random_tensor({3, 6}, rng);
    RngStream draw(2000 + static_cast<std::uint64_t>(rep));
    const DirectionMask mask = sample_direction_mask(features, 1.0, draw);
    MagnitudeDistribution dist{random_tensor({3, 6}, rng)};
    const MagnitudeSample m = sample_magnitudes(dist, draw);
    CHECK(augment(features, mask, m) == features);
  }
}

TEST_CASE("kl_loss: zero at unit variance, exact closed form at sigma^2=e") {
  CHECK(kl_loss(MagnitudeDistribution{Tensor({3, 4})}) == 0.0);

  // Single coordinate with log-variance 1: 0.5*(e - 1 - 1).
  const double expected = 0.5 * (std::exp(1.0) - 2.0);
  const double got = kl_loss(MagnitudeDistribution{Tensor({1, 1}, {1.0})});
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.35914).epsilon(1e-4));

  // Additivity over independent coordinates: sigma^2 = 1 contributes zero.
  const double two = kl_loss(MagnitudeDistribution{Tensor({1, 2}, {0.0, 1.0})});
  CHECK(two == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("kl_loss: Monte-Carlo cross-check of the closed form") {
  // KL(N(0,e) || N(0,1)) estimated as E_q[log q - log p] over 2e6 draws.
  const double sigma2 = std::exp(1.0);
  RngStream rng(15);
  const std::size_t n = 2'000'000;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = std::sqrt(sigma2) * rng.normal();
    const double log_q = -0.5 * std::log(2.0 * M_PI * sigma2) - z * z / (2.0 * sigma2);
    const double log_p = -0.5 * std::log(2.0 * M_PI) - z * z / 2.0;
    acc += log_q - log_p;
  }
  const double mc = acc / static_cast<double>(n);
  const double closed = 0.5 * (std::exp(1.0) - 2.0);
  CHECK(std::abs(mc - closed) < 0.005);
}

TEST_CASE("kl_loss: nonnegative, zero only at log_variance zero") {
  RngStream rng(16);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor lv = random_tensor({2, 5}, rng);
    const double v = kl_loss(MagnitudeDistribution{lv});
    CHECK(v >= 0.0);
    bool all_zero = true;
    for (std::size_t i = 0; i < lv.size(); ++i) all_zero &= lv[i] == 0.0;
    if (!all_zero) CHECK(v > 0.0);
  }
  // Convexity probe: any single-coordinate perturbation increases the value.
  for (const double delta : {0.1, -0.1}) {
    Tensor lv({1, 3});
    lv[1] = delta;
    CHECK(kl_loss(MagnitudeDistribution{lv}) > 0.0);
  }
}

TEST_CASE("recon_loss: examples and reduction convention") {
  CHECK(recon_loss(Tensor({2, 3}, 0.7), Tensor({2, 3}, 0.7)) == 0.0);
  CHECK(recon_loss(Tensor({1, 1}, {1.0}), Tensor({1, 1}, {0.0})) == 0.5);
  // Mean over batch, sum over coordinates: 0.5*(1+4) for a single row.
  CHECK(recon_loss(Tensor({1, 2}, {1.0, 2.0}), Tensor({1, 2}, {0.0, 0.0})) == 2.5);
  CHECK_THROWS_AS(recon_loss(Tensor({1, 2}), Tensor({2, 1})), ConfigError);
}

TEST_CASE("brsda_loss composes its two components") {
  RngStream rng(17);
  MagnitudeDistribution dist{random_tensor({3, 4}, rng)};
  const Tensor reconstructed = random_tensor({3, 4}, rng);
  const Tensor original = random_tensor({3, 4}, rng);
  const auto [kl, recon] = brsda_loss(dist, reconstructed, original);
  CHECK(kl == kl_loss(dist));
  CHECK(recon == recon_loss(reconstructed, original));
  CHECK((kl >= 0.0 && recon >= 0.0));
}

TEST_CASE("graph builders agree with the pure operations") {
  RngStream rng(18);
  const Tensor lv_value = random_tensor({2, 5}, rng, 0.8);
  const Tensor features = random_tensor({2, 5}, rng);

  RngStream draw_a(55), draw_b(55);
  MagnitudeDistribution dist{lv_value};
  const MagnitudeSample pure = sample_magnitudes(dist, draw_a);
  const DirectionMask mask = sample_direction_mask(features, 0.4, draw_b);

  auto lv = ag::leaf(lv_value);
  auto m = magnitudes_node(lv, pure.noise);
  CHECK(m->value == pure.magnitudes);

  auto augmented = augment_node(ag::constant(features), mask.bits, m);
  CHECK(augmented->value == augment(features, mask, pure));

  CHECK(kl_loss_node(lv)->value.item() ==
        doctest::Approx(kl_loss(dist)).epsilon(1e-14));

  const Tensor recon = random_tensor({2, 5}, rng);
  CHECK(recon_loss_node(ag::constant(recon), ag::constant(features))
            ->value.item() ==
        doctest::Approx(recon_loss(recon, features)).epsilon(1e-14));
}

TEST_CASE("gradient of kl+recon wrt log_variance matches finite differences") {
  // Reconstruction path: fixed linear map of the masked magnitudes, fixed
  // noise and mask, so the composite is a deterministic function of the
  // log-variance alone.
  RngStream rng(19);
  const Tensor features = random_tensor({2, 3}, rng);
  const Tensor noise = random_tensor({2, 3}, rng);
  Tensor mask_bits({2, 3}, 1.0);
  mask_bits[2] = 0.0;
  const Tensor linear = random_tensor({3, 3}, rng);

  auto lv = ag::leaf(random_tensor({2, 3}, rng, 0.7));
  auto build = [&] {
    auto m = magnitudes_node(lv, noise);
    auto masked = ag::mul(ag::constant(mask_bits), m);
    auto reconstructed = ag::matmul(masked, ag::constant(linear));
    return ag::add(kl_loss_node(lv),
                   recon_loss_node(reconstructed, ag::constant(features)));
  };
  for (std::size_t i = 0; i < lv->value.size(); ++i) {
    CHECK(fd_rel_err(build, lv, i, 1e-4) < 1e-4);
  }
}
