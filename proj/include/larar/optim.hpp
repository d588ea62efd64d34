#pragma once

#include <cstdint>
#include <vector>

#include "larar/autodiff.hpp"

namespace larar {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction over a fixed list of leaves. Leaves missing from
// the gradient map are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<ad::Var> params, AdamConfig cfg = {});

  void step(const ad::GradMap& grads);

  std::int64_t steps() const noexcept { return t_; }
  const std::vector<ad::Var>& params() const noexcept { return params_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace larar
