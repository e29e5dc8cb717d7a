#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grrnn/tensor.hpp"

namespace grrnn {

/// Stepped learning rate: the base rate is halved once every `halve_every`
/// epochs (epochs count from zero).
inline double lr_at(double lr0, std::size_t epoch, std::size_t halve_every) {
  if (halve_every == 0) throw ConfigError("lr schedule: halve_every must be positive");
  return std::ldexp(lr0, -static_cast<int>(epoch / halve_every));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 penalty folded into the gradient
};

/// Adam with bias correction.  Parameters are registered once, in a fixed
/// order; each step consumes the gradients currently stored on the tensors.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void add_param(const std::string& name, Tensor<T> param) {
    if (!param.defined()) throw ValueError("optimizer: undefined parameter " + name);
    names_.push_back(name);
    params_.push_back(std::move(param));
    m_.emplace_back(params_.back().numel(), 0.0);
    v_.emplace_back(params_.back().numel(), 0.0);
  }

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void step(double lr) {
    ++t_;
    const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = params_[k];
      const T* g = p.grad_data();
      T* x = p.data();
      for (std::size_t i = 0; i < p.numel(); ++i) {
        if (!std::isfinite(static_cast<double>(g[i])))
          throw ValueError("optimizer: non-finite gradient in " + names_[k]);
        const double gi =
            static_cast<double>(g[i]) + cfg_.weight_decay * static_cast<double>(x[i]);
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * gi;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m_[k][i] / b1t;
        const double vhat = v_[k][i] / b2t;
        x[i] = static_cast<T>(static_cast<double>(x[i]) -
                              lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace grrnn
