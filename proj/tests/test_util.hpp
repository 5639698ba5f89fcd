#pragma once

#include <cmath>
#include <functional>

#include "brsda/autodiff.hpp"
#include "brsda/rng.hpp"

namespace brsda::testutil {

inline Tensor random_tensor(std::vector<std::size_t> shape, RngStream& rng,
                            double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Central finite difference for d(build())/d(leaf[index]) against the
// analytic gradient. `build` must reconstruct the scalar graph from the
// leaf's current value on every call.
inline double fd_rel_err(const std::function<ag::Var()>& build,
                         const ag::Var& leaf, std::size_t index,
                         double step = 1e-5) {
  auto root = build();
  ag::backward(root);
  const double analytic = leaf->grad[index];

  const double saved = leaf->value[index];
  leaf->value[index] = saved + step;
  const double up = build()->value.item();
  leaf->value[index] = saved - step;
  const double down = build()->value.item();
  leaf->value[index] = saved;

  const double numeric = (up - down) / (2.0 * step);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace brsda::testutil
