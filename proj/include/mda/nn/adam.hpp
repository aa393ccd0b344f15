#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mda/nn/conv.hpp"

namespace mda::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 10.0;
};

/// Adam with optional decoupled weight decay. Moment buffers are indexed by
/// the order of `params` passed to step(), which must not change between
/// calls.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(const std::vector<Param<T>*>& params, double lr) {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i]->size(), 0.0);
        v_[i].assign(params[i]->size(), 0.0);
      }
    }
    double scale = 1.0;
    if (config_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto* p : params)
        for (const T g : p->grad) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = static_cast<double>(p.grad[j]) * scale;
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
        double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.epsilon);
        if (config_.weight_decay > 0.0)
          update += config_.weight_decay * static_cast<double>(p.value[j]);
        p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) - lr * update);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void restore(std::int64_t t, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  void reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
  }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace mda::nn
