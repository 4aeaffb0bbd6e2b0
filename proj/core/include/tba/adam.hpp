#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tba/error.hpp"
#include "tba/tensor.hpp"

namespace tba {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update with bias correction on a flat parameter block. `step` is
// the 1-based step number after increment.
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    params[i] = static_cast<T>(params[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

// Optimizer state for a fixed list of parameter blocks. Slot i holds the
// moments of the i-th block passed to step().
template <typename T>
class Adam {
 public:
  Adam(AdamConfig cfg, std::vector<std::size_t> block_sizes) : cfg_(cfg) {
    if (!(cfg.lr > 0.0)) throw ArgumentError("Adam: learning rate must be positive");
    for (auto n : block_sizes) {
      m_.emplace_back(n, T(0));
      v_.emplace_back(n, T(0));
    }
  }

  const AdamConfig& config() const noexcept { return cfg_; }
  std::int64_t steps() const noexcept { return step_; }

  // Advances the step counter once and updates every block.
  void step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw DimensionError("Adam::step: expected " + std::to_string(m_.size()) + " blocks");
    }
    ++step_;
    for (std::size_t i = 0; i < m_.size(); ++i) {
      if (params[i].size() != m_[i].size() || grads[i].size() != m_[i].size()) {
        throw DimensionError("Adam::step: block " + std::to_string(i) + " size mismatch");
      }
      adam_update<T>(params[i], grads[i], m_[i], v_[i], step_, cfg_);
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

// Tensor-level state for a single parameter tensor.
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  Tensor m;
  Tensor v;

  explicit AdamState(const Shape& shape, AdamConfig cfg = {})
      : config(cfg), m(Tensor::zeros(shape)), v(Tensor::zeros(shape)) {}
};

void adam_step(Tensor& params, const Tensor& grads, AdamState& state);

}  // namespace tba
