#include "larar/vulnerability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "larar/errors.hpp"

namespace larar {

ad::Var lvs_per_sample(const ad::Var& clean, const ad::Var& adv) {
  if (clean.shape() != adv.shape()) {
    throw ShapeError("lvs: clean activations " + to_string(clean.shape()) +
                     " do not match adversarial activations " + to_string(adv.shape()));
  }
  ad::Var shift = ad::l2_norm_rows(ad::sub(adv, clean));
  ad::Var base = ad::add_scalar(ad::l2_norm_rows(clean), kLvsEpsilon);
  return ad::mul(shift, ad::reciprocal(base));
}

ad::Var lvs_batch(const ad::Var& clean, const ad::Var& adv) {
  return ad::mean(lvs_per_sample(clean, adv));
}

LvsReport compute_lvs(const ForwardTrace& clean, const ForwardTrace& adv) {
  if (clean.hidden.size() != adv.hidden.size()) {
    throw ShapeError("compute_lvs: traces have different depths");
  }
  ad::NoGradGuard guard;
  LvsReport r;
  for (std::size_t l = 0; l < clean.hidden.size(); ++l) {
    const Tensor s = lvs_per_sample(clean.hidden[l], adv.hidden[l]).value();
    std::vector<double> v(s.values().begin(), s.values().end());
    double total = 0.0;
    for (double x : v) total += x;
    r.batch.push_back(v.empty() ? 0.0 : total / static_cast<double>(v.size()));
    r.per_sample.push_back(std::move(v));
  }
  return r;
}

LayerThreshold threshold_from_scores(std::span<const double> scores, double k, double lambda) {
  if (scores.empty()) throw DegenerateCalibrationError("calibration set is empty");
  if (scores.size() == 1) {
    throw DegenerateCalibrationError("calibration set has one sample; standard deviation is undefined");
  }
  const double n = static_cast<double>(scores.size());
  LayerThreshold t;
  t.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : scores) ss += (s - t.mean) * (s - t.mean);
  t.stddev = std::sqrt(ss / n);
  t.max = *std::max_element(scores.begin(), scores.end());
  t.tau = std::max(t.mean + k * t.stddev, lambda * t.max);
  return t;
}

std::vector<double> CalibrationStats::taus(DetectionMode mode) const {
  const auto& src = mode == DetectionMode::kProxy ? proxy : paired;
  std::vector<double> out;
  for (const LayerThreshold& t : src) out.push_back(t.tau);
  return out;
}

namespace {

std::vector<std::vector<double>> proxy_scores_from(const ForwardTrace& trace,
                                                   const std::vector<Tensor>& means) {
  std::vector<std::vector<double>> out;
  for (std::size_t l = 0; l < trace.hidden.size(); ++l) {
    const Tensor& h = trace.hidden[l].value();
    const Tensor& mu = means.at(l);
    if (mu.cols() != h.cols()) throw ShapeError("proxy score: calibration width mismatch");
    double mu_norm = 0.0;
    for (double v : mu.values()) mu_norm += v * v;
    mu_norm = std::sqrt(mu_norm);
    std::vector<double> scores(h.rows());
    for (std::size_t i = 0; i < h.rows(); ++i) {
      double d = 0.0;
      auto row = h.row(i);
      for (std::size_t j = 0; j < h.cols(); ++j) d += (row[j] - mu[j]) * (row[j] - mu[j]);
      scores[i] = std::sqrt(d) / (mu_norm + kLvsEpsilon);
    }
    out.push_back(std::move(scores));
  }
  return out;
}

}  // namespace

CalibrationStats calibrate_thresholds(const NetworkParams& params, const Tensor& calibration_x,
                                      const AttackConfig& attack, double k, double lambda) {
  if (calibration_x.rows() == 0) throw DegenerateCalibrationError("calibration set is empty");
  if (calibration_x.rows() == 1) {
    throw DegenerateCalibrationError("calibration set has one sample; standard deviation is undefined");
  }
  ad::NoGradGuard guard;
  CalibrationStats stats;
  stats.k = k;
  stats.lambda = lambda;
  stats.calibration_size = calibration_x.rows();
  stats.noise_epsilon = attack.epsilon;

  const ForwardTrace clean = forward(params, calibration_x, Mode::kEval);
  for (const ad::Var& h : clean.hidden) {
    Tensor mu(1, h.shape().cols);
    for (std::size_t i = 0; i < h.shape().rows; ++i) {
      auto row = h.value().row(i);
      for (std::size_t j = 0; j < mu.cols(); ++j) mu[j] += row[j];
    }
    for (double& v : mu.values()) v /= static_cast<double>(h.shape().rows);
    stats.mean_activation.push_back(std::move(mu));
  }
  for (const auto& scores : proxy_scores_from(clean, stats.mean_activation)) {
    stats.proxy.push_back(threshold_from_scores(scores, k, lambda));
  }

  Tensor noisy = calibration_x;
  std::mt19937_64 rng(attack.seed);
  std::uniform_real_distribution<double> u(-attack.epsilon, attack.epsilon);
  if (attack.epsilon > 0.0) {
    for (double& v : noisy.values()) v += u(rng);
  }
  const ForwardTrace perturbed = forward(params, noisy, Mode::kEval);
  const LvsReport benign = compute_lvs(clean, perturbed);
  for (const auto& scores : benign.per_sample) {
    stats.paired.push_back(threshold_from_scores(scores, k, lambda));
  }
  return stats;
}

std::vector<std::vector<double>> proxy_scores(const NetworkParams& params, const Tensor& x,
                                              const CalibrationStats& stats) {
  if (!stats.calibrated()) throw CalibrationMissingError("detector thresholds are not calibrated");
  ad::NoGradGuard guard;
  return proxy_scores_from(forward(params, x, Mode::kEval), stats.mean_activation);
}

DetectionVerdict verdict_from_scores(std::span<const double> scores, std::span<const double> taus) {
  if (scores.size() != taus.size()) throw ShapeError("detect: score/threshold count mismatch");
  DetectionVerdict v;
  v.scores.assign(scores.begin(), scores.end());
  for (std::size_t l = 0; l < scores.size(); ++l) {
    if (scores[l] > taus[l]) v.triggering_layers.push_back(l + 1);
  }
  v.flagged = !v.triggering_layers.empty();
  return v;
}

std::vector<DetectionVerdict> detect(const NetworkParams& params, const Tensor& x,
                                     const CalibrationStats& stats, DetectionMode mode,
                                     const Tensor* x_ref) {
  if (!stats.calibrated()) throw CalibrationMissingError("detector thresholds are not calibrated");
  std::vector<std::vector<double>> scores;
  if (mode == DetectionMode::kProxy) {
    scores = proxy_scores(params, x, stats);
  } else {
    if (x_ref == nullptr) throw Error("paired detection needs a clean reference input");
    if (x_ref->shape() != x.shape()) throw ShapeError("paired detection: reference shape mismatch");
    ad::NoGradGuard guard;
    scores = compute_lvs(forward(params, *x_ref, Mode::kEval), forward(params, x, Mode::kEval)).per_sample;
  }
  const std::vector<double> taus = stats.taus(mode);
  std::vector<DetectionVerdict> out(x.rows());
  std::vector<double> row(scores.size());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t l = 0; l < scores.size(); ++l) row[l] = scores[l][i];
    out[i] = verdict_from_scores(row, taus);
  }
  return out;
}

bool detect_batch(const LvsReport& report, const CalibrationStats& stats, DetectionMode mode) {
  if (!stats.calibrated()) throw CalibrationMissingError("detector thresholds are not calibrated");
  return verdict_from_scores(report.batch, stats.taus(mode)).flagged;
}

double EarlyExitResult::early_exit_fraction(std::size_t num_hidden) const {
  if (exit_layer.empty()) return 0.0;
  const auto exited = std::count_if(exit_layer.begin(), exit_layer.end(),
                                    [num_hidden](std::size_t l) { return l <= num_hidden; });
  return static_cast<double>(exited) / static_cast<double>(exit_layer.size());
}

double EarlyExitResult::mean_macs() const {
  if (macs.empty()) return 0.0;
  return static_cast<double>(std::accumulate(macs.begin(), macs.end(), std::size_t{0})) /
         static_cast<double>(macs.size());
}

EarlyExitResult early_exit_infer(const NetworkParams& params, const Tensor& x,
                                 double confidence_threshold) {
  if (!params.has_aux()) {
    throw UnsupportedModelError("early exit needs a model with auxiliary heads");
  }
  if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0)) {
    throw Error("early exit confidence threshold must lie in (0, 1]");
  }
  // p >= t  <=>  logit >= log(t / (1 - t)); comparing logits avoids the
  // saturation of sigmoid near 0 and 1.
  const double cut = confidence_threshold >= 1.0
                         ? std::numeric_limits<double>::infinity()
                         : std::log(confidence_threshold / (1.0 - confidence_threshold));

  ad::NoGradGuard guard;
  const ForwardTrace t = forward(params, x, Mode::kEval);
  const std::size_t L = params.num_hidden();
  std::vector<std::size_t> cost_to_layer(L);
  std::size_t in = params.input_dim(), acc = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t d = params.arch.hidden_dims[l];
    acc += in * d + d;  // trunk layer plus its aux head
    cost_to_layer[l] = acc;
    in = d;
  }
  const std::size_t full_cost = acc + in;

  EarlyExitResult r;
  r.labels.resize(x.rows());
  r.exit_layer.resize(x.rows());
  r.macs.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    r.exit_layer[i] = L + 1;
    r.macs[i] = full_cost;
    r.labels[i] = t.logit.value()[i] >= 0.0 ? 1 : 0;
    for (std::size_t l = 0; l < L; ++l) {
      const double z = t.aux_logits[l].value()[i];
      if (z >= cut || z <= -cut) {
        r.exit_layer[i] = l + 1;
        r.macs[i] = cost_to_layer[l];
        r.labels[i] = z >= 0.0 ? 1 : 0;
        break;
      }
    }
  }
  return r;
}

}  // namespace larar
