#pragma once

#include <unordered_map>
#include <vector>

#include "brsda/autodiff.hpp"
#include "brsda/nets.hpp"

namespace brsda {

// Decoupled-weight-decay adaptive-moment optimizer. State is keyed by
// parameter node, so a step may cover any subset of the registered
// parameters (bias correction is tracked per parameter).
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() : options_() {}
  explicit AdamW(const Options& options) : options_(options) {}

  void step(const std::vector<NamedParam>& params, double lr);

  const Options& options() const { return options_; }

 private:
  struct Slot {
    Tensor m, v;
    std::int64_t t = 0;
  };
  Options options_;
  std::unordered_map<const ag::Node*, Slot> slots_;
};

// Scales all gradients so their global L2 norm does not exceed max_norm.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<NamedParam>& params, double max_norm);

}  // namespace brsda
