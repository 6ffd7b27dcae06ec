#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "atomflow/chem.hpp"
#include "atomflow/model.hpp"
#include "atomflow/rng.hpp"
#include "atomflow/tensor.hpp"

namespace atomflow {

struct TrainConfig {
    double alpha = 1.8;            // Beta(alpha, 1) time sampling shape
    double lambda_discrete = 0.1;  // weight of the type cross-entropy term
    double ema_decay = 0.999;
    int n_rot_augs = 8;            // rotated copies per molecule; 1 disables
    bool rotate = true;            // false keeps copies unrotated
    int batch_size = 4;
    double lr = 1e-3;
    double grad_clip = 10.0;
    std::uint64_t seed = 0;

    void validate() const; // throws ConfigError
};

// Inverse CDF of Beta(alpha, 1): t = u^(1/alpha).
double beta_inv_cdf(double u, double alpha);
double sample_time(Rng& rng, double alpha);

// Time weighting min{100, 1/(1-t)^2}; the cap activates at t >= 0.9.
double loss_weight(double t);

struct NoisyState {
    Eigen::MatrixXd x;      // N x 3
    std::vector<int> types; // N, vocabulary indices
    double t = 0.0;
};

// Interpolates coordinates x_t = t*x1 + (1-t)*eps with unit Gaussian noise and
// draws each noisy type from t*onehot(a1) + (1-t)*uniform. Coordinates are
// drawn before types so the stream layout is stable.
NoisyState noise_state(const Molecule& mol, double t, Rng& rng);

struct LossBreakdown {
    double total = 0.0; // weighted objective
    double coord = 0.0; // (1/N) * squared endpoint error, unweighted
    double type = 0.0;  // summed cross-entropy, unweighted
};

// loss = beta(t) * (coord + lambda * type) for a single molecule.
Tensor weighted_molecule_loss(const ModelOutput& out, const Molecule& target, double t,
                              double lambda, LossBreakdown* breakdown = nullptr);

// k copies of every molecule, each under an independent uniform rotation
// (identity when rotate is false).
std::vector<Molecule> augment_batch(const std::vector<Molecule>& batch, int k, bool rotate,
                                    Rng& rng);

// shadow <- decay * shadow + (1 - decay) * params, elementwise.
void ema_update(ModelParams& shadow, const ModelParams& params, double decay);

struct TrainStepStats {
    long step = 0;
    double t_mean = 0.0;
    double loss = 0.0;
    double coord_loss = 0.0;
    double type_loss = 0.0;
    double grad_norm = 0.0;
};

// Deterministic single-threaded training loop: per step, a uniformly drawn
// batch is rotation-augmented, per-molecule losses are averaged, gradients are
// clipped at global norm and applied with Adam, then the EMA shadow advances.
class Trainer {
public:
    Trainer(const ModelConfig& model_config, const TrainConfig& train_config,
            std::vector<Molecule> corpus);
    Trainer(ModelParams initial, const TrainConfig& train_config, std::vector<Molecule> corpus);

    TrainStepStats step();
    // Runs n steps; when log is given, writes one JSON line per log_every
    // steps (and for the final step).
    void run(long n_steps, std::ostream* log = nullptr, long log_every = 50);

    const ModelParams& params() const { return params_; }
    const ModelParams& ema() const { return ema_; }
    long step_count() const { return step_; }

private:
    ModelParams params_;
    ModelParams ema_;
    TrainConfig config_;
    std::vector<Molecule> corpus_;
    AdamState adam_;
    long step_ = 0;
};

void write_train_log_line(std::ostream& os, const TrainStepStats& stats);

} // namespace atomflow
