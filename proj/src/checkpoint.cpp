#include "larar/checkpoint.hpp"

#include "larar/binary_io.hpp"
#include "larar/errors.hpp"

namespace larar {

namespace {

constexpr io::Magic kMagic = {'L', 'A', 'R', 'A', 'R', 'C', 'K', 'P'};

void write_head(io::Writer& w, const LinearHead& h) {
  w.tensor(h.weight.value());
  w.tensor(h.bias.value());
}

LinearHead read_head(io::Reader& r, std::size_t in, std::size_t out) {
  Tensor weight = r.tensor();
  Tensor bias = r.tensor();
  if (weight.shape() != Shape{in, out} || bias.shape() != Shape{1, out}) {
    throw ShapeMismatchError("checkpoint head has shape " + to_string(weight.shape()) + ", expected " +
                             to_string(Shape{in, out}));
  }
  return {ad::Var::leaf(std::move(weight)), ad::Var::leaf(std::move(bias))};
}

void write_threshold(io::Writer& w, const LayerThreshold& t) {
  w.f64(t.mean);
  w.f64(t.stddev);
  w.f64(t.max);
  w.f64(t.tau);
}

LayerThreshold read_threshold(io::Reader& r) {
  LayerThreshold t;
  t.mean = r.f64();
  t.stddev = r.f64();
  t.max = r.f64();
  t.tau = r.f64();
  return t;
}

Tensor read_row(io::Reader& r, std::size_t d) {
  Tensor t = r.tensor();
  if (t.shape() != Shape{1, d}) throw ShapeMismatchError("checkpoint vector has shape " + to_string(t.shape()));
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const NetworkParams& p = ckpt.params;
  io::Writer w;
  w.u8(static_cast<std::uint8_t>(p.arch.kind));
  w.u64(p.arch.input_dim);
  w.u64(p.arch.hidden_dims.size());
  for (std::size_t d : p.arch.hidden_dims) w.u64(d);
  w.u8(p.arch.batchnorm ? 1 : 0);
  w.u8(p.arch.aux_heads ? 1 : 0);
  for (const HiddenLayer& layer : p.hidden) {
    write_head(w, layer.linear);
    if (layer.has_batchnorm) {
      w.tensor(layer.bn.gamma.value());
      w.tensor(layer.bn.beta.value());
      w.tensor(layer.bn.running_mean);
      w.tensor(layer.bn.running_var);
      w.u64(layer.bn.batches_tracked);
    }
  }
  write_head(w, p.output);
  for (const LinearHead& h : p.aux) write_head(w, h);
  for (const ad::Var& lw : p.layer_weights) w.f64(lw.value().item());

  w.u8(ckpt.calibration ? 1 : 0);
  if (ckpt.calibration) {
    const CalibrationStats& c = *ckpt.calibration;
    w.f64(c.k);
    w.f64(c.lambda);
    w.u64(c.calibration_size);
    w.f64(c.noise_epsilon);
    w.u64(c.mean_activation.size());
    for (const Tensor& t : c.mean_activation) w.tensor(t);
    for (const LayerThreshold& t : c.proxy) write_threshold(w, t);
    for (const LayerThreshold& t : c.paired) write_threshold(w, t);
  }
  w.str(ckpt.metadata);
  io::write_container(path, kMagic, kCheckpointVersion, w);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected) {
  io::Reader r = io::read_container(path, kMagic, kCheckpointVersion);
  Checkpoint ckpt;
  Architecture arch;
  const std::uint8_t kind = r.u8();
  if (kind > 2) throw CorruptFileError("unknown model kind " + std::to_string(kind));
  arch.kind = static_cast<ModelKind>(kind);
  if (expected && *expected != arch.kind) {
    throw ShapeMismatchError("checkpoint holds a " + std::string(to_string(arch.kind)) + " model, expected " +
                             std::string(to_string(*expected)));
  }
  arch.input_dim = r.u64();
  const std::uint64_t layers = r.u64();
  if (layers > 1024) throw CorruptFileError("implausible layer count");
  for (std::uint64_t l = 0; l < layers; ++l) arch.hidden_dims.push_back(r.u64());
  arch.batchnorm = r.u8() != 0;
  arch.aux_heads = r.u8() != 0;

  NetworkParams& p = ckpt.params;
  p.arch = arch;
  for (const LayerSpec& spec : arch.hidden_specs()) {
    HiddenLayer layer;
    layer.linear = read_head(r, spec.in_dim, spec.out_dim);
    layer.has_batchnorm = spec.has_batchnorm;
    if (spec.has_batchnorm) {
      layer.bn.gamma = ad::Var::leaf(read_row(r, spec.out_dim));
      layer.bn.beta = ad::Var::leaf(read_row(r, spec.out_dim));
      layer.bn.running_mean = read_row(r, spec.out_dim);
      layer.bn.running_var = read_row(r, spec.out_dim);
      layer.bn.batches_tracked = r.u64();
    }
    p.hidden.push_back(std::move(layer));
  }
  const std::size_t last = arch.hidden_dims.empty() ? arch.input_dim : arch.hidden_dims.back();
  p.output = read_head(r, last, 1);
  if (arch.aux_heads) {
    for (std::size_t d : arch.hidden_dims) p.aux.push_back(read_head(r, d, 1));
  }
  for (std::uint64_t l = 0; l < layers; ++l) p.layer_weights.push_back(ad::Var::leaf(Tensor::scalar(r.f64())));

  if (r.u8() != 0) {
    CalibrationStats c;
    c.k = r.f64();
    c.lambda = r.f64();
    c.calibration_size = r.u64();
    c.noise_epsilon = r.f64();
    const std::uint64_t nl = r.u64();
    if (nl != layers) throw ShapeMismatchError("calibration covers " + std::to_string(nl) + " layers");
    for (std::uint64_t l = 0; l < nl; ++l) c.mean_activation.push_back(read_row(r, arch.hidden_dims[l]));
    for (std::uint64_t l = 0; l < nl; ++l) c.proxy.push_back(read_threshold(r));
    for (std::uint64_t l = 0; l < nl; ++l) c.paired.push_back(read_threshold(r));
    ckpt.calibration = std::move(c);
  }
  ckpt.metadata = r.str();
  if (!r.at_end()) throw CorruptFileError("trailing bytes after checkpoint payload");
  return ckpt;
}

}  // namespace larar
