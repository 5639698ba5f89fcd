#include "brsda/optim.hpp"

#include <cmath>

namespace brsda {

void AdamW::step(const std::vector<NamedParam>& params, double lr) {
  for (const NamedParam& p : params) {
    ag::Node* node = p.var.get();
    if (node->grad.size() != node->value.size()) {
      throw ConfigError("AdamW::step: parameter '" + p.name +
                        "' has no gradient");
    }
    Slot& slot = slots_[node];
    if (slot.m.size() != node->value.size()) {
      slot.m = Tensor(node->value.shape());
      slot.v = Tensor(node->value.shape());
    }
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < node->value.size(); ++i) {
      const double g = node->grad[i];
      slot.m[i] = options_.beta1 * slot.m[i] + (1.0 - options_.beta1) * g;
      slot.v[i] = options_.beta2 * slot.v[i] + (1.0 - options_.beta2) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      node->value[i] -= lr * (mhat / (std::sqrt(vhat) + options_.eps) +
                              options_.weight_decay * node->value[i]);
    }
  }
}

double clip_global_norm(const std::vector<NamedParam>& params, double max_norm) {
  double sq = 0.0;
  for (const NamedParam& p : params) {
    for (std::size_t i = 0; i < p.var->grad.size(); ++i) {
      sq += p.var->grad[i] * p.var->grad[i];
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const NamedParam& p : params) {
      for (std::size_t i = 0; i < p.var->grad.size(); ++i) p.var->grad[i] *= s;
    }
  }
  return norm;
}

}  // namespace brsda
