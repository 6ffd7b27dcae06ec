#pragma once

#include <vector>

#include <Eigen/Dense>

#include "atomflow/chem.hpp"
#include "atomflow/predictor.hpp"
#include "atomflow/rng.hpp"

namespace atomflow {

enum class GKind { zero, inv_t, inv_t2, one_minus_t_over_t };
enum class ScheduleKind { uniform, logarithmic };

struct GuidanceConfig {
    bool enabled = false;
    double t_guidance = 0.99;  // earliest time at which updates fire
    double alpha_phys = 0.01;  // per-axis sign step size
    bool through_model = true; // false differentiates the coordinates directly
};

struct SampleConfig {
    int n_steps = 100;
    ScheduleKind schedule = ScheduleKind::logarithmic;
    GKind g_kind = GKind::inv_t;
    double eps_g = 0.01;
    double gamma = 0.01;
    double g_cutoff = 0.9; // stochasticity is disabled beyond this time
    bool noise_literal = false;
    GuidanceConfig guidance;

    void validate() const; // throws ConfigError
};

// Time grid with n_steps+1 points. Uniform: t_i = i/n, ending at 1.
// Logarithmic: 1 - t_i = 0.01^(i/n), ending at 0.99, with steps concentrated
// near the end.
std::vector<double> schedule(int n_steps, ScheduleKind kind);

// Stochasticity scale; forced to zero past the cutoff.
double g_eval(GKind kind, double t, double eps_g = 0.01, double g_cutoff = 0.9);

// One Euler-Maruyama update of the coordinate SDE from time t over dt:
// v = (x1_hat - x)/(1-t), s = g*(t*v - x)/(1-t),
// x += (v + s)*dt + sqrt(2*g*gamma*dt)*xi. noise_literal scales the noise
// draw sqrt(2*g*gamma)*xi by dt instead. The denominator clamps (1-t) at
// 1e-4; noise is drawn only when its coefficient is positive.
Eigen::MatrixXd euclidean_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x1_hat,
                               double t, double dt, double g, double gamma, Rng& rng,
                               bool noise_literal = false);

// One zero-mean jump update of the per-atom type chain: with ratio
// min(dt/(1-t), 1), off-type mass is ratio * p1_hat(i, j) and the current
// type keeps the remainder. Each atom resamples from that distribution.
std::vector<int> discrete_flow_step(const std::vector<int>& a, const Eigen::MatrixXd& p1_hat,
                                    double t, double dt, Rng& rng);

struct TrajectorySnapshot {
    double t = 0.0;
    Eigen::MatrixXd x;      // state coordinates at t
    std::vector<int> types; // state types at t
    Eigen::MatrixXd x1_hat; // endpoint estimate from this state
};

struct Trajectory {
    std::vector<TrajectorySnapshot> snapshots;
};

struct GuidanceReport {
    int attempts = 0; // grid points at or past t_guidance
    int applied = 0;  // updates actually taken
    int skipped = 0;  // decodes that failed validity or connectivity
};

// One guidance update in place: decode the endpoint at (x, types, t), build
// its distance bounds, and move x by -alpha_phys * sign(grad of the bounds
// loss). Returns false without touching x when the decoded molecule fails
// validity or connectivity.
bool guidance_update(const EndpointPredictor& model, Eigen::MatrixXd& x,
                     const std::vector<int>& types, double t, const GuidanceConfig& gc);

// Integrates the joint SDE from the given state at t_start across the
// remaining schedule grid and returns the endpoint prediction at the final
// grid point (argmax types). Guidance, when enabled, nudges x by
// -alpha_phys * sign(grad of the distance-bounds loss) at every grid point
// with t >= t_guidance before the model is queried there, and is skipped
// whenever the decoded endpoint fails validity or connectivity.
Molecule sample_from(const EndpointPredictor& model, Eigen::MatrixXd x0, std::vector<int> a0,
                     double t_start, const SampleConfig& cfg, Rng& rng,
                     Trajectory* trajectory = nullptr, GuidanceReport* report = nullptr);

// Draws x0 ~ N(0, I) and uniform types, then integrates from t = 0.
Molecule sample(const EndpointPredictor& model, int n_atoms, const SampleConfig& cfg, Rng& rng,
                Trajectory* trajectory = nullptr, GuidanceReport* report = nullptr);

} // namespace atomflow
