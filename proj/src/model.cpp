#include "larar/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "larar/errors.hpp"

namespace larar {

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::kVanilla: return "vanilla";
    case ModelKind::kBaseAdvnn: return "base-advnn";
    case ModelKind::kLarar: return "larar";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "vanilla") return ModelKind::kVanilla;
  if (name == "base-advnn") return ModelKind::kBaseAdvnn;
  if (name == "larar") return ModelKind::kLarar;
  throw Error("unknown model kind '" + std::string(name) + "'");
}

Architecture Architecture::standard(ModelKind kind, std::size_t input_dim) {
  Architecture a;
  a.kind = kind;
  a.input_dim = input_dim;
  a.batchnorm = true;
  switch (kind) {
    case ModelKind::kVanilla:
      a.hidden_dims = {256, 128};
      break;
    case ModelKind::kBaseAdvnn:
      a.hidden_dims = {128, 64};
      break;
    case ModelKind::kLarar:
      a.hidden_dims = {128, 64};
      a.aux_heads = true;
      break;
  }
  return a;
}

std::vector<LayerSpec> Architecture::hidden_specs() const {
  std::vector<LayerSpec> specs;
  std::size_t in = input_dim;
  for (std::size_t d : hidden_dims) {
    specs.push_back({in, d, batchnorm, Activation::kRelu});
    in = d;
  }
  return specs;
}

namespace {

ad::Var clone_leaf(const ad::Var& v) {
  return v.defined() ? ad::Var::leaf(v.value(), v.requires_grad()) : ad::Var{};
}

LinearHead clone_head(const LinearHead& h) { return {clone_leaf(h.weight), clone_leaf(h.bias)}; }

LinearHead he_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  Tensor w(in, out);
  for (double& v : w.values()) v = dist(rng);
  return {ad::Var::leaf(std::move(w)), ad::Var::leaf(Tensor(1, out))};
}

ad::Var linear(const LinearHead& h, const ad::Var& x) {
  return ad::add_row(ad::matmul(x, h.weight), h.bias);
}

}  // namespace

NetworkParams::NetworkParams(const NetworkParams& other)
    : arch(other.arch), output(clone_head(other.output)) {
  hidden.reserve(other.hidden.size());
  for (const HiddenLayer& l : other.hidden) {
    HiddenLayer c;
    c.linear = clone_head(l.linear);
    c.has_batchnorm = l.has_batchnorm;
    c.bn.gamma = clone_leaf(l.bn.gamma);
    c.bn.beta = clone_leaf(l.bn.beta);
    c.bn.running_mean = l.bn.running_mean;
    c.bn.running_var = l.bn.running_var;
    c.bn.batches_tracked = l.bn.batches_tracked;
    hidden.push_back(std::move(c));
  }
  for (const LinearHead& h : other.aux) aux.push_back(clone_head(h));
  for (const ad::Var& w : other.layer_weights) layer_weights.push_back(clone_leaf(w));
}

NetworkParams& NetworkParams::operator=(const NetworkParams& other) {
  if (this != &other) *this = NetworkParams(other);
  return *this;
}

std::vector<ad::Var> NetworkParams::parameters() const {
  std::vector<ad::Var> out;
  for (const HiddenLayer& l : hidden) {
    out.push_back(l.linear.weight);
    out.push_back(l.linear.bias);
    if (l.has_batchnorm) {
      out.push_back(l.bn.gamma);
      out.push_back(l.bn.beta);
    }
  }
  out.push_back(output.weight);
  out.push_back(output.bias);
  for (const LinearHead& h : aux) {
    out.push_back(h.weight);
    out.push_back(h.bias);
  }
  return out;
}

std::vector<double> NetworkParams::layer_weight_values() const {
  std::vector<double> out;
  for (const ad::Var& w : layer_weights) out.push_back(w.value().item());
  return out;
}

bool bit_equal(const NetworkParams& a, const NetworkParams& b) {
  if (!(a.arch == b.arch)) return false;
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bit_equal(pa[i].value(), pb[i].value())) return false;
  }
  for (std::size_t l = 0; l < a.hidden.size(); ++l) {
    const BatchNorm& x = a.hidden[l].bn;
    const BatchNorm& y = b.hidden[l].bn;
    if (x.batches_tracked != y.batches_tracked || !bit_equal(x.running_mean, y.running_mean) ||
        !bit_equal(x.running_var, y.running_var)) {
      return false;
    }
  }
  if (a.layer_weights.size() != b.layer_weights.size()) return false;
  for (std::size_t l = 0; l < a.layer_weights.size(); ++l) {
    if (!bit_equal(a.layer_weights[l].value(), b.layer_weights[l].value())) return false;
  }
  return true;
}

NetworkParams init_network(const Architecture& arch, std::uint64_t seed) {
  if (arch.input_dim == 0) throw ShapeError("init_network: input dimension must be positive");
  for (std::size_t d : arch.hidden_dims) {
    if (d == 0) throw ShapeError("init_network: hidden dimensions must be positive");
  }
  NetworkParams p;
  p.arch = arch;
  std::mt19937_64 rng(seed);
  for (const LayerSpec& spec : arch.hidden_specs()) {
    HiddenLayer layer;
    layer.linear = he_linear(spec.in_dim, spec.out_dim, rng);
    layer.has_batchnorm = spec.has_batchnorm;
    if (spec.has_batchnorm) {
      layer.bn.gamma = ad::Var::leaf(Tensor(1, spec.out_dim, 1.0));
      layer.bn.beta = ad::Var::leaf(Tensor(1, spec.out_dim, 0.0));
      layer.bn.running_mean = Tensor(1, spec.out_dim, 0.0);
      layer.bn.running_var = Tensor(1, spec.out_dim, 1.0);
    }
    p.hidden.push_back(std::move(layer));
    p.layer_weights.push_back(ad::Var::leaf(Tensor::scalar(1.0)));
  }
  const std::size_t last = arch.hidden_dims.empty() ? arch.input_dim : arch.hidden_dims.back();
  p.output = he_linear(last, 1, rng);
  if (arch.aux_heads) {
    // Separate stream so the trunk is identical with and without aux heads.
    std::mt19937_64 aux_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t d : arch.hidden_dims) p.aux.push_back(he_linear(d, 1, aux_rng));
  }
  return p;
}

NetworkParams init_network(ModelKind kind, std::size_t input_dim, std::uint64_t seed) {
  return init_network(Architecture::standard(kind, input_dim), seed);
}

ForwardTrace forward(const NetworkParams& params, const ad::Var& x, Mode mode) {
  if (x.shape().cols != params.input_dim()) {
    throw ShapeError("forward: input has " + std::to_string(x.shape().cols) +
                     " columns, network expects " + std::to_string(params.input_dim()));
  }
  const std::size_t n = x.shape().rows;
  ForwardTrace trace;
  trace.mode = mode;
  trace.input = x;
  ad::Var h = x;
  for (std::size_t l = 0; l < params.hidden.size(); ++l) {
    const HiddenLayer& layer = params.hidden[l];
    ad::Var z = linear(layer.linear, h);
    if (layer.has_batchnorm) {
      const BatchNorm& bn = layer.bn;
      if (mode == Mode::kTrain) {
        const double inv_n = 1.0 / static_cast<double>(n);
        ad::Var mu = ad::scale(ad::sum_rows(z), inv_n);
        ad::Var centered = ad::sub(z, ad::broadcast_rows(mu, n));
        ad::Var var = ad::scale(ad::sum_rows(ad::square(centered)), inv_n);
        ad::Var inv_std = ad::reciprocal(ad::sqrt(ad::add_scalar(var, kBatchNormEpsilon)));
        z = ad::mul(centered, ad::broadcast_rows(inv_std, n));
        trace.batch_stats.push_back({mu.value(), var.value(), n});
      } else {
        if (bn.batches_tracked == 0) {
          throw CalibrationMissingError("forward: batchnorm layer " + std::to_string(l + 1) +
                                        " has no running statistics; eval mode needs a trained model");
        }
        Tensor shift(1, bn.running_mean.cols());
        Tensor inv_std(1, bn.running_var.cols());
        for (std::size_t j = 0; j < shift.cols(); ++j) {
          shift[j] = -bn.running_mean[j];
          inv_std[j] = 1.0 / std::sqrt(bn.running_var[j] + kBatchNormEpsilon);
        }
        z = ad::mul_row(ad::add_row(z, ad::Var::constant(std::move(shift))),
                        ad::Var::constant(std::move(inv_std)));
      }
      z = ad::add_row(ad::mul_row(z, bn.gamma), bn.beta);
    }
    h = ad::relu(z);
    trace.hidden.push_back(h);
    if (params.has_aux()) {
      ad::Var a = linear(params.aux[l], h);
      trace.aux_logits.push_back(a);
      trace.aux_outputs.push_back(ad::sigmoid(a));
    }
  }
  trace.logit = linear(params.output, h);
  trace.output = ad::sigmoid(trace.logit);
  return trace;
}

ForwardTrace forward(const NetworkParams& params, const Tensor& x, Mode mode) {
  return forward(params, ad::Var::constant(x), mode);
}

void update_running_stats(NetworkParams& params, const ForwardTrace& trace) {
  if (trace.mode != Mode::kTrain) return;
  std::size_t k = 0;
  for (HiddenLayer& layer : params.hidden) {
    if (!layer.has_batchnorm) continue;
    const BatchStats& s = trace.batch_stats.at(k++);
    const double n = static_cast<double>(s.count);
    const double unbias = s.count > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t j = 0; j < s.mean.cols(); ++j) {
      layer.bn.running_mean[j] =
          (1.0 - kBatchNormMomentum) * layer.bn.running_mean[j] + kBatchNormMomentum * s.mean[j];
      layer.bn.running_var[j] =
          (1.0 - kBatchNormMomentum) * layer.bn.running_var[j] + kBatchNormMomentum * s.var[j] * unbias;
    }
    ++layer.bn.batches_tracked;
  }
}

Tensor predict_proba(const NetworkParams& params, const Tensor& x) {
  ad::NoGradGuard guard;
  return forward(params, x, Mode::kEval).output.value();
}

std::vector<int> predict_labels(const NetworkParams& params, const Tensor& x) {
  ad::NoGradGuard guard;
  const Tensor logit = forward(params, x, Mode::kEval).logit.value();
  std::vector<int> out(logit.rows());
  for (std::size_t i = 0; i < logit.rows(); ++i) out[i] = logit[i] >= 0.0 ? 1 : 0;
  return out;
}

std::size_t full_forward_macs(const Architecture& arch) {
  std::size_t macs = 0;
  std::size_t in = arch.input_dim;
  for (std::size_t d : arch.hidden_dims) {
    macs += in * d;
    in = d;
  }
  return macs + in;
}

}  // namespace larar
