#include "larar/losses.hpp"

#include "larar/errors.hpp"

namespace larar {

Tensor labels_column(std::span<const int> y) {
  Tensor t(y.size(), 1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0 && y[i] != 1) throw DataError("labels must be 0 or 1");
    t[i] = static_cast<double>(y[i]);
  }
  return t;
}

ad::Var bce_per_sample(const ad::Var& prob, const Tensor& y) {
  if (prob.shape() != y.shape()) {
    throw ShapeError("op 'bce': incompatible shapes " + to_string(prob.shape()) + " and " +
                     to_string(y.shape()));
  }
  Tensor not_y(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) not_y[i] = 1.0 - y[i];
  ad::Var p = ad::clamp(prob, kProbClip, 1.0 - kProbClip);
  ad::Var pos = ad::mul(ad::Var::constant(y), ad::log(p));
  ad::Var negv = ad::mul(ad::Var::constant(std::move(not_y)), ad::log(ad::add_scalar(ad::neg(p), 1.0)));
  return ad::neg(ad::add(pos, negv));
}

ad::Var bce(const ad::Var& prob, const Tensor& y) { return ad::mean(bce_per_sample(prob, y)); }

ad::Var loss_ce(const ad::Var& prob_clean, const ad::Var& prob_adv, const Tensor& y) {
  return ad::scale(ad::add(bce(prob_clean, y), bce(prob_adv, y)), 0.5);
}

ad::Var loss_aux(const ForwardTrace& clean, const Tensor& y) {
  if (clean.aux_outputs.empty()) {
    throw UnsupportedModelError("loss_aux: model has no auxiliary heads");
  }
  ad::Var total = bce(clean.aux_outputs[0], y);
  for (std::size_t l = 1; l < clean.aux_outputs.size(); ++l) {
    total = ad::add(total, bce(clean.aux_outputs[l], y));
  }
  return total;
}

ad::Var input_gradients(const ForwardTrace& trace, const Tensor& y) {
  if (!trace.input.is_leaf() || !trace.input.requires_grad()) {
    throw Error("input_gradients: trace input must be a leaf that requires grad");
  }
  ad::Var per_sample_sum = ad::sum(bce_per_sample(trace.output, y));
  const ad::Var wrt[] = {trace.input};
  return ad::grad(per_sample_sum, wrt, ad::GradOptions{.create_graph = true, .seed = {}})[0];
}

ad::Var loss_ga(const ForwardTrace& clean, const ForwardTrace& adv, const Tensor& y) {
  ad::Var diff = ad::sub(input_gradients(clean, y), input_gradients(adv, y));
  return ad::mean(ad::sum_cols(ad::square(diff)));
}

ad::Var loss_ga(const NetworkParams& params, const Tensor& x, const Tensor& x_adv,
                std::span<const int> y, Mode mode) {
  const Tensor yt = labels_column(y);
  ForwardTrace clean = forward(params, ad::Var::leaf(x), mode);
  ForwardTrace adv = forward(params, ad::Var::leaf(x_adv), mode);
  return loss_ga(clean, adv, yt);
}

ad::Var loss_fs(const ForwardTrace& clean, const ForwardTrace& adv) {
  ad::Var d = ad::sub(clean.final_hidden(), adv.final_hidden());
  return ad::mean(ad::sum_cols(ad::square(d)));
}

ad::Var loss_lvs(std::span<const ad::Var> lvs, std::span<const ad::Var> layer_weights, double beta) {
  if (lvs.size() != layer_weights.size() || lvs.empty()) {
    throw ShapeError("loss_lvs: " + std::to_string(lvs.size()) + " LVS values for " +
                     std::to_string(layer_weights.size()) + " layer weights");
  }
  ad::Var total = ad::mul(layer_weights[0], lvs[0]);
  for (std::size_t l = 1; l < lvs.size(); ++l) {
    total = ad::add(total, ad::mul(layer_weights[l], lvs[l]));
  }
  return ad::scale(total, beta);
}

}  // namespace larar
