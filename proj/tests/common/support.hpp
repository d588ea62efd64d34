#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "larar/autodiff.hpp"
#include "larar/model.hpp"
#include "larar/tensor.hpp"

namespace larar::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// |a - b| <= tol * max(|a|, |b|), with an absolute floor for values that are
// zero up to finite-difference noise.
inline bool close_rel(double a, double b, double tol, double floor = 1e-9) {
  const double diff = std::abs(a - b);
  return diff <= floor || diff <= tol * std::max(std::abs(a), std::abs(b));
}

// Central difference of f with respect to every element of a leaf. The leaf
// is restored afterwards.
inline Tensor central_difference(ad::Var& leaf, const std::function<double()>& f, double h = 1e-5) {
  const Tensor original = leaf.value();
  Tensor out(original.rows(), original.cols());
  for (std::size_t i = 0; i < original.size(); ++i) {
    Tensor plus = original;
    plus[i] += h;
    leaf.assign(plus);
    const double fp = f();
    Tensor minus = original;
    minus[i] -= h;
    leaf.assign(minus);
    const double fm = f();
    out[i] = (fp - fm) / (2.0 * h);
  }
  leaf.assign(original);
  return out;
}

// Sets a leaf to the given values, keeping its identity.
inline void set(ad::Var& leaf, std::initializer_list<double> values) {
  leaf.assign(Tensor(leaf.value().rows(), leaf.value().cols(), values));
}

// Architecture without batchnorm, for hand-checkable nets.
inline NetworkParams plain_network(std::size_t input_dim, std::vector<std::size_t> hidden, bool aux,
                                   std::uint64_t seed, ModelKind kind = ModelKind::kLarar) {
  Architecture a;
  a.kind = kind;
  a.input_dim = input_dim;
  a.hidden_dims = std::move(hidden);
  a.batchnorm = false;
  a.aux_heads = aux;
  return init_network(a, seed);
}

// Logistic model p = sigmoid(w x + b) with w = 1, b = 0.
inline NetworkParams logistic_toy() {
  NetworkParams p = plain_network(1, {}, false, 0, ModelKind::kBaseAdvnn);
  set(p.output.weight, {1.0});
  set(p.output.bias, {0.0});
  return p;
}

}  // namespace larar::testing

#include "larar/data.hpp"
#include "larar/training.hpp"

namespace larar::testing {

inline Splits synth_splits(std::size_t n, std::size_t d, double sep, std::uint64_t seed) {
  SplitSpec s;
  s.seed = seed;
  return preprocess(synth_dataset(n, d, sep, seed), s);
}

// A few epochs of clean training; enough for attacks to have something to break.
inline NetworkParams quick_model(ModelKind kind, const FeatureMatrix& data, int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.learning_rate = 0.01;
  return train(kind, data, cfg).params;
}

}  // namespace larar::testing
