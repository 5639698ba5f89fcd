#include "brsda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace brsda::ag {

namespace {

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  return n;
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "ag::add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i];
      self.parents[1]->grad[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "ag::sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i];
      self.parents[1]->grad[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "ag::mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i] * bv[i];
      self.parents[1]->grad[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_node(std::move(out), {a}, [s](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i] * s;
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
  return make_node(std::move(out), {a}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i];
    }
  });
}

Var exp_(const Var& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return make_node(std::move(out), {a}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i] * self.value[i];
    }
  });
}

Var square(const Var& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  return make_node(std::move(out), {a}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i] * 2.0 * av[i];
    }
  });
}

Var gelu(const Var& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return make_node(std::move(out), {a}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = av[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      self.parents[0]->grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Var clamp_pass_through(const Var& a, double lo, double hi) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(hi, std::max(lo, out[i]));
  }
  return make_node(std::move(out), {a}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 ||
      a->value.cols() != b->value.rows()) {
    throw ConfigError("ag::matmul: incompatible shapes " +
                      a->value.shape_str() + " x " + b->value.shape_str());
  }
  const std::size_t n = a->value.rows(), k = a->value.cols(),
                    m = b->value.cols();
  Tensor out({n, m});
  const double* ad = a->value.data();
  const double* bd = b->value.data();
  double* od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + p * m;
      double* orow = od + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return make_node(std::move(out), {a, b}, [n, k, m](Node& self) {
    const double* ad = self.parents[0]->value.data();
    const double* bd = self.parents[1]->value.data();
    const double* gd = self.grad.data();
    double* gad = self.parents[0]->grad.data();
    double* gbd = self.parents[1]->grad.data();
    // dA = dY B^T
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* grow = gd + i * m;
        const double* brow = bd + p * m;
        for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
        gad[i * k + p] += acc;
      }
    }
    // dB = A^T dY
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < n; ++i) {
        const double av = ad[i * k + p];
        if (av == 0.0) continue;
        const double* grow = gd + i * m;
        double* gbrow = gbd + p * m;
        for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
      }
    }
  });
}

Var add_rowvec(const Var& mat, const Var& vec) {
  if (mat->value.rank() != 2 || vec->value.rank() != 1 ||
      mat->value.cols() != vec->value.dim(0)) {
    throw ConfigError("ag::add_rowvec: incompatible shapes");
  }
  const std::size_t n = mat->value.rows(), f = mat->value.cols();
  Tensor out = mat->value;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] += vec->value[j];
  }
  return make_node(std::move(out), {mat, vec}, [n, f](Node& self) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        self.parents[0]->grad[i * f + j] += self.grad[i * f + j];
        self.parents[1]->grad[j] += self.grad[i * f + j];
      }
    }
  });
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != a->value.size()) {
    throw ConfigError("ag::reshape: element count mismatch");
  }
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i];
  return make_node(std::move(out), {a}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i];
    }
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_node(Tensor::scalar(acc), {a}, [](Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < self.parents[0]->grad.size(); ++i) {
      self.parents[0]->grad[i] += g;
    }
  });
}

Var conv2d_3x3(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3 ||
      wv.dim(1) != xv.dim(1) || b->value.rank() != 1 ||
      b->value.dim(0) != wv.dim(0)) {
    throw ConfigError("ag::conv2d_3x3: incompatible shapes");
  }
  const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t O = wv.dim(0);
  Tensor out({B, O, H, W});
  auto xi = [C, H, W](std::size_t n, std::size_t c, std::size_t i,
                      std::size_t j) { return ((n * C + c) * H + i) * W + j; };
  auto oi = [O, H, W](std::size_t n, std::size_t o, std::size_t i,
                      std::size_t j) { return ((n * O + o) * H + i) * W + j; };
  auto wi = [C](std::size_t o, std::size_t c, std::size_t u, std::size_t v) {
    return ((o * C + c) * 3 + u) * 3 + v;
  };
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          double acc = b->value[o];
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t u = 0; u < 3; ++u) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) - 1;
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < 3; ++v) {
                const std::ptrdiff_t jj =
                    static_cast<std::ptrdiff_t>(j + v) - 1;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += xv[xi(n, c, ii, jj)] * wv[wi(o, c, u, v)];
              }
            }
          }
          out[oi(n, o, i, j)] = acc;
        }
      }
    }
  }
  return make_node(std::move(out), {x, w, b}, [B, C, H, W, O, xi, oi,
                                               wi](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    Tensor& gx = self.parents[0]->grad;
    Tensor& gw = self.parents[1]->grad;
    Tensor& gb = self.parents[2]->grad;
    for (std::size_t n = 0; n < B; ++n) {
      for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t i = 0; i < H; ++i) {
          for (std::size_t j = 0; j < W; ++j) {
            const double g = self.grad[oi(n, o, i, j)];
            if (g == 0.0) continue;
            gb[o] += g;
            for (std::size_t c = 0; c < C; ++c) {
              for (std::size_t u = 0; u < 3; ++u) {
                const std::ptrdiff_t ii =
                    static_cast<std::ptrdiff_t>(i + u) - 1;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t v = 0; v < 3; ++v) {
                  const std::ptrdiff_t jj =
                      static_cast<std::ptrdiff_t>(j + v) - 1;
                  if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                  gx[xi(n, c, ii, jj)] += g * wv[wi(o, c, u, v)];
                  gw[wi(o, c, u, v)] += g * xv[xi(n, c, ii, jj)];
                }
              }
            }
          }
        }
      }
    }
  });
}

Var maxpool2(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4 || xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0) {
    throw ConfigError("ag::maxpool2: needs rank-4 input with even H and W");
  }
  const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor out({B, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  std::size_t k = 0;
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * H * W;
      for (std::size_t i = 0; i < Ho; ++i) {
        for (std::size_t j = 0; j < Wo; ++j, ++k) {
          std::size_t best = base + (2 * i) * W + 2 * j;
          double bv = xv[best];
          const std::size_t cand[3] = {base + (2 * i) * W + 2 * j + 1,
                                       base + (2 * i + 1) * W + 2 * j,
                                       base + (2 * i + 1) * W + 2 * j + 1};
          for (std::size_t idx : cand) {
            if (xv[idx] > bv) {
              bv = xv[idx];
              best = idx;
            }
          }
          out[k] = bv;
          argmax[k] = best;
        }
      }
    }
  }
  return make_node(std::move(out), {x}, [argmax](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[argmax[i]] += self.grad[i];
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) {
    throw ConfigError("ag::global_avg_pool: needs rank-4 input");
  }
  const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const double inv = 1.0 / static_cast<double>(H * W);
  Tensor out({B, C});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * H * W;
      double acc = 0.0;
      for (std::size_t p = 0; p < H * W; ++p) acc += xv[base + p];
      out[n * C + c] = acc * inv;
    }
  }
  return make_node(std::move(out), {x}, [B, C, H, W, inv](Node& self) {
    for (std::size_t n = 0; n < B; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const double g = self.grad[n * C + c] * inv;
        const std::size_t base = (n * C + c) * H * W;
        for (std::size_t p = 0; p < H * W; ++p) {
          self.parents[0]->grad[base + p] += g;
        }
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               BatchNormStats* stats, bool training, double eps) {
  const Tensor& xv = x->value;
  if (xv.rank() != 2 && xv.rank() != 4) {
    throw ConfigError("ag::batch_norm: rank must be 2 or 4");
  }
  const std::size_t C = xv.dim(1);
  if (gamma->value.size() != C || beta->value.size() != C) {
    throw ConfigError("ag::batch_norm: gamma/beta size mismatch");
  }
  const std::size_t B = xv.dim(0);
  const std::size_t S = xv.rank() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  const std::size_t N = B * S;  // reduction count per channel
  auto idx = [C, S](std::size_t n, std::size_t c, std::size_t s) {
    return (n * C + c) * S + s;
  };

  Tensor mean({C}), var({C});
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t s = 0; s < S; ++s) m += xv[idx(n, c, s)];
      }
      m /= static_cast<double>(N);
      double v = 0.0;
      for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t s = 0; s < S; ++s) {
          const double d = xv[idx(n, c, s)] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(N);
      mean[c] = m;
      var[c] = v;
    }
    if (stats != nullptr) {
      if (stats->running_mean.size() != C) {
        stats->running_mean = Tensor({C});
        stats->running_var = Tensor({C}, 1.0);
      }
      const double mom = stats->momentum;
      const double unbias =
          N > 1 ? static_cast<double>(N) / static_cast<double>(N - 1) : 1.0;
      for (std::size_t c = 0; c < C; ++c) {
        stats->running_mean[c] =
            (1.0 - mom) * stats->running_mean[c] + mom * mean[c];
        stats->running_var[c] =
            (1.0 - mom) * stats->running_var[c] + mom * var[c] * unbias;
      }
      stats->updates++;
    }
  } else {
    if (stats == nullptr || stats->running_mean.size() != C) {
      throw ConfigError("ag::batch_norm: eval mode requires running stats");
    }
    mean = stats->running_mean;
    var = stats->running_var;
  }

  Tensor inv_std({C});
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = idx(n, c, s);
        xhat[i] = (xv[i] - mean[c]) * inv_std[c];
        out[i] = gamma->value[c] * xhat[i] + beta->value[c];
      }
    }
  }

  if (training) {
    return make_node(
        std::move(out), {x, gamma, beta},
        [B, C, S, N, idx, xhat, inv_std](Node& self) {
          const Tensor& g = self.parents[1]->value;  // gamma
          // Per-channel sums of dy and dy*xhat.
          Tensor sum_dy({C}), sum_dy_xhat({C});
          for (std::size_t n = 0; n < B; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t i = idx(n, c, s);
                sum_dy[c] += self.grad[i];
                sum_dy_xhat[c] += self.grad[i] * xhat[i];
              }
            }
          }
          for (std::size_t c = 0; c < C; ++c) {
            self.parents[1]->grad[c] += sum_dy_xhat[c];
            self.parents[2]->grad[c] += sum_dy[c];
          }
          const double invN = 1.0 / static_cast<double>(N);
          for (std::size_t n = 0; n < B; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
              const double k = g[c] * inv_std[c] * invN;
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t i = idx(n, c, s);
                self.parents[0]->grad[i] +=
                    k * (static_cast<double>(N) * self.grad[i] - sum_dy[c] -
                         xhat[i] * sum_dy_xhat[c]);
              }
            }
          }
        });
  }
  // Eval mode: running stats are constants.
  return make_node(std::move(out), {x, gamma, beta},
                   [B, C, S, idx, xhat, inv_std](Node& self) {
                     const Tensor& g = self.parents[1]->value;
                     for (std::size_t n = 0; n < B; ++n) {
                       for (std::size_t c = 0; c < C; ++c) {
                         for (std::size_t s = 0; s < S; ++s) {
                           const std::size_t i = idx(n, c, s);
                           self.parents[0]->grad[i] +=
                               self.grad[i] * g[c] * inv_std[c];
                           self.parents[1]->grad[c] += self.grad[i] * xhat[i];
                           self.parents[2]->grad[c] += self.grad[i];
                         }
                       }
                     }
                   });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Tensor& lv = logits->value;
  if (lv.rank() != 2 || lv.rows() != labels.size()) {
    throw ConfigError("ag::softmax_cross_entropy: bad logits/labels shapes");
  }
  const std::size_t B = lv.rows(), C = lv.cols();
  Tensor probs({B, C});
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C) {
      throw ConfigError("ag::softmax_cross_entropy: label out of range");
    }
    double mx = lv.at(i, 0);
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, lv.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < C; ++j) denom += std::exp(lv.at(i, j) - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t j = 0; j < C; ++j) {
      probs.at(i, j) = std::exp(lv.at(i, j) - lse);
    }
    loss += lse - lv.at(i, labels[i]);
  }
  loss /= static_cast<double>(B);
  return make_node(Tensor::scalar(loss), {logits},
                   [probs, labels, B, C](Node& self) {
                     const double g = self.grad[0] / static_cast<double>(B);
                     for (std::size_t i = 0; i < B; ++i) {
                       for (std::size_t j = 0; j < C; ++j) {
                         double d = probs.at(i, j);
                         if (static_cast<std::size_t>(labels[i]) == j) d -= 1.0;
                         self.parents[0]->grad[i * C + j] += g * d;
                       }
                     }
                   });
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw ConfigError("ag::backward: root must be scalar");
  }
  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Tensor(n->value.shape());
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t B = logits.rows(), C = logits.cols();
  Tensor out({B, C});
  for (std::size_t i = 0; i < B; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < C; ++j) denom += std::exp(logits.at(i, j) - mx);
    for (std::size_t j = 0; j < C; ++j) {
      out.at(i, j) = std::exp(logits.at(i, j) - mx) / denom;
    }
  }
  return out;
}

}  // namespace brsda::ag
