#include "atomflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

#include "atomflow/errors.hpp"

namespace atomflow {

void TrainConfig::validate() const {
    if (!(alpha > 0.0)) throw ConfigError("time sampling shape must be positive");
    if (!(lambda_discrete > 0.0)) throw ConfigError("type loss weight must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema decay must lie in [0, 1)");
    if (n_rot_augs < 1) throw ConfigError("rotation copies must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(grad_clip > 0.0)) throw ConfigError("gradient clip must be positive");
}

double beta_inv_cdf(double u, double alpha) {
    return std::pow(u, 1.0 / alpha);
}

double sample_time(Rng& rng, double alpha) {
    return beta_inv_cdf(rng.uniform(), alpha);
}

double loss_weight(double t) {
    const double one_minus = 1.0 - t;
    if (one_minus <= 0.0) return 100.0;
    return std::min(100.0, 1.0 / (one_minus * one_minus));
}

NoisyState noise_state(const Molecule& mol, double t, Rng& rng) {
    const int n = mol.size();
    NoisyState state;
    state.t = t;
    const Eigen::MatrixXd eps = rng.gaussian_matrix(n, 3);
    state.x = t * mol.coords + (1.0 - t) * eps;
    state.types.resize(n);
    for (int i = 0; i < n; ++i) {
        const int target = static_cast<int>(mol.atoms[i]);
        state.types[i] = rng.uniform() < t ? target : rng.uniform_int(kAtomVocab);
    }
    return state;
}

Tensor weighted_molecule_loss(const ModelOutput& out, const Molecule& target, double t,
                              double lambda, LossBreakdown* breakdown) {
    const int n = target.size();
    if (out.coords.rows() != n)
        throw DataError("endpoint prediction does not match the target atom count");
    std::vector<int> type_targets(n);
    for (int i = 0; i < n; ++i) type_targets[i] = static_cast<int>(target.atoms[i]);

    const Tensor coord_term = scale(squared_error(out.coords, Tensor(target.coords)), 1.0 / n);
    const Tensor type_term = cross_entropy(out.logits, type_targets);
    const double beta = loss_weight(t);
    const Tensor total = scale(add(coord_term, scale(type_term, lambda)), beta);
    if (breakdown) {
        breakdown->coord = coord_term.item();
        breakdown->type = type_term.item();
        breakdown->total = total.item();
    }
    return total;
}

std::vector<Molecule> augment_batch(const std::vector<Molecule>& batch, int k, bool rotate,
                                    Rng& rng) {
    if (k < 1) throw ConfigError("rotation copies must be at least 1");
    std::vector<Molecule> out;
    out.reserve(batch.size() * static_cast<std::size_t>(k));
    for (const Molecule& mol : batch) {
        for (int c = 0; c < k; ++c) {
            if (rotate) {
                out.push_back(rotated(mol, random_rotation(rng)));
            } else {
                out.push_back(mol);
            }
        }
    }
    return out;
}

void ema_update(ModelParams& shadow, const ModelParams& params, double decay) {
    if (shadow.count() != params.count())
        throw ConfigError("ema shadow does not match the parameter set");
    for (std::size_t i = 0; i < params.count(); ++i) {
        Eigen::MatrixXd& s = shadow.tensors[i].mutable_value();
        s = decay * s + (1.0 - decay) * params.tensors[i].value();
    }
}

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& train_config,
                 std::vector<Molecule> corpus)
    : Trainer(ModelParams::init(model_config, train_config.seed), train_config,
              std::move(corpus)) {}

Trainer::Trainer(ModelParams initial, const TrainConfig& train_config,
                 std::vector<Molecule> corpus)
    : params_(std::move(initial)),
      ema_(params_.clone()),
      config_(train_config),
      corpus_(std::move(corpus)) {
    config_.validate();
    if (corpus_.empty()) throw DataError("training corpus is empty");
    for (const Molecule& mol : corpus_) {
        if (mol.size() < 1) throw DataError("training corpus contains an empty molecule");
        if (mol.size() > params_.config.max_len)
            throw DataError("training molecule exceeds the model's maximum atom count");
    }
}

TrainStepStats Trainer::step() {
    Rng pick = Rng::stream(config_.seed, "batch", static_cast<std::uint64_t>(step_));
    Rng aug = Rng::stream(config_.seed, "augment", static_cast<std::uint64_t>(step_));
    Rng noise = Rng::stream(config_.seed, "noise", static_cast<std::uint64_t>(step_));

    std::vector<Molecule> base;
    base.reserve(config_.batch_size);
    for (int b = 0; b < config_.batch_size; ++b)
        base.push_back(corpus_[pick.uniform_int(corpus_.size())]);
    const std::vector<Molecule> copies =
        augment_batch(base, config_.n_rot_augs, config_.rotate, aug);

    std::vector<Eigen::MatrixXd> grad_sum(params_.count());
    for (std::size_t i = 0; i < params_.count(); ++i)
        grad_sum[i] =
            Eigen::MatrixXd::Zero(params_.tensors[i].rows(), params_.tensors[i].cols());

    TrainStepStats stats;
    stats.step = step_;
    for (const Molecule& mol : copies) {
        const double t = sample_time(noise, config_.alpha);
        const NoisyState state = noise_state(mol, t, noise);
        const ModelOutput out = model_forward(params_, Tensor(state.x), state.types, t);
        LossBreakdown bd;
        const Tensor loss =
            weighted_molecule_loss(out, mol, t, config_.lambda_discrete, &bd);
        Gradients grads = backward(loss);
        for (std::size_t i = 0; i < params_.count(); ++i)
            if (grads.contains(params_.tensors[i])) grad_sum[i] += grads.wrt(params_.tensors[i]);
        stats.t_mean += t;
        stats.loss += bd.total;
        stats.coord_loss += bd.coord;
        stats.type_loss += bd.type;
    }
    const double inv_m = 1.0 / static_cast<double>(copies.size());
    stats.t_mean *= inv_m;
    stats.loss *= inv_m;
    stats.coord_loss *= inv_m;
    stats.type_loss *= inv_m;
    for (Eigen::MatrixXd& g : grad_sum) g *= inv_m;

    stats.grad_norm = global_norm(grad_sum);
    clip_global_norm(grad_sum, config_.grad_clip);
    AdamConfig adam_config;
    adam_config.lr = config_.lr;
    adam_step(params_.tensors, grad_sum, adam_, adam_config);
    ema_update(ema_, params_, config_.ema_decay);
    ++step_;
    return stats;
}

void Trainer::run(long n_steps, std::ostream* log, long log_every) {
    for (long i = 0; i < n_steps; ++i) {
        const TrainStepStats stats = step();
        if (log && (stats.step % log_every == 0 || i + 1 == n_steps))
            write_train_log_line(*log, stats);
    }
}

void write_train_log_line(std::ostream& os, const TrainStepStats& stats) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"step\": %ld, \"t_mean\": %.6f, \"loss\": %.6f, \"coord_loss\": %.6f, "
                  "\"type_loss\": %.6f, \"grad_norm\": %.6f}",
                  stats.step, stats.t_mean, stats.loss, stats.coord_loss, stats.type_loss,
                  stats.grad_norm);
    os << buf << "\n";
}

} // namespace atomflow
