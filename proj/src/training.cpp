#include "larar/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "larar/attacks.hpp"
#include "larar/errors.hpp"
#include "larar/optim.hpp"
#include "larar/vulnerability.hpp"

namespace larar {

Components Components::for_kind(ModelKind kind) {
  switch (kind) {
    case ModelKind::kVanilla: return {};
    case ModelKind::kBaseAdvnn: return {.aux = false, .ga = true, .fs = true, .lvs_penalty = false,
                                        .adaptive_weights = false};
    case ModelKind::kLarar: return {.aux = true, .ga = true, .fs = true, .lvs_penalty = true,
                                    .adaptive_weights = true};
  }
  return {};
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error("epochs must be >= 0");
  if (batch_size == 0) throw Error("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error("learning rate must be > 0");
  if (!(epsilon_max >= 0.0) || !std::isfinite(epsilon_max)) throw Error("epsilon must be >= 0");
  if (pgd_iterations < 1) throw Error("PGD iterations must be >= 1");
  if (!(pgd_step > 0.0)) throw Error("PGD step must be > 0");
}

double curriculum_epsilon(double epsilon_max, int epoch, int epochs) {
  if (epochs <= 0 || epoch < 1 || epoch > epochs) throw Error("curriculum epoch out of range");
  return epsilon_max * static_cast<double>(epoch) / static_cast<double>(epochs);
}

namespace {

ad::Var zero() { return ad::Var::constant(Tensor::scalar(0.0)); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

LossBreakdown assemble_loss(const NetworkParams& params, const ForwardTrace& clean,
                            const ForwardTrace& adv, std::span<const int> y,
                            const Components& c, const LossWeights& w) {
  const Tensor yt = labels_column(y);
  LossBreakdown out;
  out.ce = loss_ce(clean.output, adv.output, yt);
  out.aux = c.aux ? loss_aux(clean, yt) : zero();
  out.ga = c.ga ? loss_ga(clean, adv, yt) : zero();
  out.fs = c.fs ? loss_fs(clean, adv) : zero();
  out.lvs = zero();
  if (c.uses_lvs()) {
    for (std::size_t l = 0; l < clean.hidden.size(); ++l) {
      ad::Var v = lvs_batch(clean.hidden[l], adv.hidden[l]);
      out.layer_lvs.push_back(c.lvs_penalty ? v : v.detach());
    }
    out.lvs = loss_lvs(out.layer_lvs, params.layer_weights, w.beta);
  }
  ad::Var total = out.ce;
  if (c.aux) total = ad::add(total, ad::scale(out.aux, w.aux));
  if (c.ga) total = ad::add(total, ad::scale(out.ga, w.ga));
  if (c.fs) total = ad::add(total, ad::scale(out.fs, w.fs));
  if (c.uses_lvs()) total = ad::add(total, out.lvs);
  out.total = total;
  return out;
}

LossBreakdown batch_loss(const NetworkParams& params, const Tensor& x, const Tensor& x_adv,
                         std::span<const int> y, const Components& c, const LossWeights& w) {
  ForwardTrace clean = forward(params, ad::Var::leaf(x, c.ga), Mode::kTrain);
  ForwardTrace adv = forward(params, ad::Var::leaf(x_adv, c.ga), Mode::kTrain);
  return assemble_loss(params, clean, adv, y, c, w);
}

ad::Var vanilla_loss(const NetworkParams& params, const Tensor& x, std::span<const int> y) {
  ForwardTrace t = forward(params, x, Mode::kTrain);
  return bce(t.output, labels_column(y));
}

TrainResult train(NetworkParams init, const FeatureMatrix& data, const TrainConfig& cfg,
                  const LossWeights& weights) {
  cfg.validate();
  if (data.x.cols() != init.input_dim()) {
    throw ShapeError("train: data has " + std::to_string(data.x.cols()) + " features, model expects " +
                     std::to_string(init.input_dim()));
  }
  if (data.rows() == 0) throw DataError("train: empty training set");

  TrainResult result;
  result.params = std::move(init);
  NetworkParams& params = result.params;
  const bool adversarial = params.kind() != ModelKind::kVanilla;
  const Components comps = cfg.components.value_or(Components::for_kind(params.kind()));
  if (!adversarial && comps != Components{}) {
    throw UnsupportedModelError("vanilla training uses the clean cross-entropy only");
  }
  if (comps.aux && !params.has_aux()) throw UnsupportedModelError("aux loss requested but model has no aux heads");
  result.components = comps;

  std::vector<ad::Var> opt_params = params.parameters();
  if (comps.adaptive_weights) {
    opt_params.insert(opt_params.end(), params.layer_weights.begin(), params.layer_weights.end());
  }
  Adam adam(opt_params, AdamConfig{.learning_rate = cfg.learning_rate});

  const std::size_t n = data.rows();
  const std::size_t num_layers = params.num_hidden();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5348554646ULL, 0));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    if (adversarial) log.epsilon = cfg.curriculum ? curriculum_epsilon(cfg.epsilon_max, epoch, cfg.epochs)
                                                  : cfg.epsilon_max;
    if (comps.uses_lvs()) log.lvs.assign(num_layers, 0.0);
    std::size_t batches = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batches) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      const Tensor xb = data.x.gather_rows(idx);
      std::vector<int> yb;
      yb.reserve(count);
      for (std::size_t i : idx) yb.push_back(data.y[i]);

      try {
        ad::Var total;
        if (!adversarial) {
          ForwardTrace t = forward(params, xb, Mode::kTrain);
          update_running_stats(params, t);
          total = bce(t.output, labels_column(yb));
          log.loss_ce += total.value().item();
        } else {
          ForwardTrace clean = forward(params, ad::Var::leaf(xb, comps.ga), Mode::kTrain);
          update_running_stats(params, clean);
          AttackConfig atk{.epsilon = log.epsilon,
                           .alpha = cfg.pgd_step,
                           .iterations = cfg.pgd_iterations,
                           .random_init = cfg.pgd_random_init,
                           .seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), batches)};
          const Tensor x_adv = pgd(params, xb, yb, atk);
          ForwardTrace adv = forward(params, ad::Var::leaf(x_adv, comps.ga), Mode::kTrain);
          update_running_stats(params, adv);
          LossBreakdown lb = assemble_loss(params, clean, adv, yb, comps, weights);
          total = lb.total;
          log.loss_ce += lb.ce.value().item();
          log.loss_aux += lb.aux.value().item();
          log.loss_ga += lb.ga.value().item();
          log.loss_fs += lb.fs.value().item();
          log.loss_lvs += lb.lvs.value().item();
          for (std::size_t l = 0; l < lb.layer_lvs.size(); ++l) log.lvs[l] += lb.layer_lvs[l].value().item();
          ad::GradMap grads = ad::backward(total);
          if (comps.uses_lvs()) {
            for (std::size_t l = 0; l < num_layers; ++l) {
              const double g = grads.get(params.layer_weights[l]).item();
              const double expected = weights.beta * lb.layer_lvs[l].value().item();
              log.max_weight_grad_residual = std::max(log.max_weight_grad_residual, std::abs(g - expected));
            }
          }
          log.loss_total += total.value().item();
          adam.step(grads);
          if (cfg.clamp_layer_weights) {
            for (ad::Var& w : params.layer_weights) w.assign(Tensor::scalar(std::max(0.0, w.value().item())));
          }
          continue;
        }
        log.loss_total += total.value().item();
        adam.step(ad::backward(total));
      } catch (const NonFiniteError& e) {
        throw TrainingDivergedError(e.what(), epoch, batches);
      } catch (const AttackError& e) {
        throw TrainingDivergedError(std::string("PGD: ") + e.what(), epoch, batches);
      }
    }

    const double nb = static_cast<double>(batches);
    for (double* v : {&log.loss_total, &log.loss_ce, &log.loss_aux, &log.loss_ga, &log.loss_fs, &log.loss_lvs}) {
      *v /= nb;
    }
    for (double& v : log.lvs) v /= nb;
    if (!std::isfinite(log.loss_total)) {
      throw TrainingDivergedError("non-finite epoch loss", epoch, batches);
    }
    log.layer_weights = params.layer_weight_values();
    result.epochs.push_back(std::move(log));
  }
  result.optimizer_steps = adam.steps();
  return result;
}

TrainResult train(ModelKind kind, const FeatureMatrix& data, const TrainConfig& cfg,
                  const LossWeights& weights) {
  return train(init_network(kind, data.x.cols(), cfg.seed), data, cfg, weights);
}

void write_epoch_csv(std::span<const EpochLog> logs, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  const std::size_t layers = logs.empty() ? 0 : logs.front().layer_weights.size();
  f << "epoch,eps,loss_total,loss_ce,loss_aux,loss_ga,loss_fs,loss_lvs";
  for (std::size_t l = 1; l <= layers; ++l) f << ",lvs_" << l;
  for (std::size_t l = 1; l <= layers; ++l) f << ",w_" << l;
  f << '\n';
  for (const EpochLog& e : logs) {
    f << fmt::format("{},{},{},{},{},{},{},{}", e.epoch, e.epsilon, e.loss_total, e.loss_ce, e.loss_aux,
                     e.loss_ga, e.loss_fs, e.loss_lvs);
    for (std::size_t l = 0; l < layers; ++l) {
      if (l < e.lvs.size()) {
        f << ',' << fmt::format("{}", e.lvs[l]);
      } else {
        f << ',';
      }
    }
    for (std::size_t l = 0; l < layers; ++l) f << ',' << fmt::format("{}", e.layer_weights[l]);
    f << '\n';
  }
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace larar
