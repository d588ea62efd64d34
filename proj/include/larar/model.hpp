#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "larar/autodiff.hpp"
#include "larar/tensor.hpp"

namespace larar {

enum class ModelKind : std::uint8_t { kVanilla = 0, kBaseAdvnn = 1, kLarar = 2 };

std::string_view to_string(ModelKind kind) noexcept;
// Accepts "vanilla", "base-advnn", "larar".
ModelKind parse_model_kind(std::string_view name);

enum class Mode : std::uint8_t { kTrain, kEval };

enum class Activation : std::uint8_t { kRelu, kNone };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  bool has_batchnorm = false;
  Activation activation = Activation::kRelu;
};

// Shape of a network. The three model kinds use standard() but tests and
// tools may build smaller variants.
struct Architecture {
  ModelKind kind = ModelKind::kLarar;
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  bool batchnorm = true;
  bool aux_heads = false;

  // vanilla: (256, 128), no aux heads. base-advnn: (128, 64), no aux heads.
  // larar: (128, 64) with one aux head per hidden layer.
  static Architecture standard(ModelKind kind, std::size_t input_dim);

  std::vector<LayerSpec> hidden_specs() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNorm {
  ad::Var gamma;  // 1 x d
  ad::Var beta;   // 1 x d
  Tensor running_mean;
  Tensor running_var;
  std::uint64_t batches_tracked = 0;
};

struct LinearHead {
  ad::Var weight;  // in x out
  ad::Var bias;    // 1 x out
};

struct HiddenLayer {
  LinearHead linear;
  bool has_batchnorm = false;
  BatchNorm bn;
};

// Weights, biases, batchnorm state, auxiliary heads and the per-layer
// regularization weights. Copies are deep: a copy owns fresh leaves.
class NetworkParams {
 public:
  NetworkParams() = default;
  NetworkParams(const NetworkParams& other);
  NetworkParams& operator=(const NetworkParams& other);
  NetworkParams(NetworkParams&&) noexcept = default;
  NetworkParams& operator=(NetworkParams&&) noexcept = default;

  Architecture arch;
  std::vector<HiddenLayer> hidden;
  LinearHead output;
  std::vector<LinearHead> aux;  // empty unless arch.aux_heads
  std::vector<ad::Var> layer_weights;  // one 1x1 leaf per hidden layer, starts at 1.0

  std::size_t num_hidden() const noexcept { return hidden.size(); }
  ModelKind kind() const noexcept { return arch.kind; }
  std::size_t input_dim() const noexcept { return arch.input_dim; }
  bool has_aux() const noexcept { return !aux.empty(); }

  // Network parameters (theta), excluding layer weights.
  std::vector<ad::Var> parameters() const;
  std::vector<double> layer_weight_values() const;
};

bool bit_equal(const NetworkParams& a, const NetworkParams& b);

NetworkParams init_network(const Architecture& arch, std::uint64_t seed);
NetworkParams init_network(ModelKind kind, std::size_t input_dim, std::uint64_t seed);

struct BatchStats {
  Tensor mean;
  Tensor var;  // biased
  std::size_t count = 0;
};

// Activations captured by a forward pass. hidden[l] is the post-activation
// output of hidden layer l.
struct ForwardTrace {
  Mode mode = Mode::kEval;
  ad::Var input;
  std::vector<ad::Var> hidden;
  ad::Var logit;
  ad::Var output;
  std::vector<ad::Var> aux_logits;
  std::vector<ad::Var> aux_outputs;
  std::vector<BatchStats> batch_stats;  // train mode only, per batchnorm layer

  const ad::Var& final_hidden() const { return hidden.back(); }
};

// Order per hidden layer: linear -> batchnorm -> ReLU. Train mode
// normalizes with batch statistics and does not touch running statistics;
// call update_running_stats afterwards.
ForwardTrace forward(const NetworkParams& params, const ad::Var& x, Mode mode);
ForwardTrace forward(const NetworkParams& params, const Tensor& x, Mode mode);

void update_running_stats(NetworkParams& params, const ForwardTrace& trace);

// Eval-mode probabilities, n x 1.
Tensor predict_proba(const NetworkParams& params, const Tensor& x);
std::vector<int> predict_labels(const NetworkParams& params, const Tensor& x);

// Multiply-accumulate count of one eval forward pass per sample, linear layers only.
std::size_t full_forward_macs(const Architecture& arch);

}  // namespace larar
