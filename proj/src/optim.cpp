#include "larar/optim.hpp"

#include <cmath>

namespace larar {

Adam::Adam(std::vector<ad::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const ad::Var& p : params_) {
    m_.emplace_back(p.shape().rows, p.shape().cols);
    v_.emplace_back(p.shape().rows, p.shape().cols);
  }
}

void Adam::step(const ad::GradMap& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor* g = grads.find(params_[i].id());
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    Tensor next = params_[i].value();
    for (std::size_t j = 0; j < next.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      next[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    params_[i].assign(std::move(next));
  }
}

}  // namespace larar
