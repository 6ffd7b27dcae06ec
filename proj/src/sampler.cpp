#include "atomflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "atomflow/bounds.hpp"
#include "atomflow/errors.hpp"
#include "atomflow/metrics.hpp"

namespace atomflow {

namespace {

constexpr double kMinOneMinusT = 1e-4; // velocity denominator clamp
constexpr double kTimeEps = 1e-12;

void check_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw NumericalError(std::string(what) + " became non-finite");
}

std::vector<int> argmax_types(const Eigen::MatrixXd& p1) {
    std::vector<int> types(p1.rows());
    for (Eigen::Index i = 0; i < p1.rows(); ++i) {
        Eigen::Index best = 0;
        p1.row(i).maxCoeff(&best);
        types[i] = static_cast<int>(best);
    }
    return types;
}

Molecule decode_endpoint(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& p1) {
    Molecule mol;
    mol.coords = x1;
    for (int type : argmax_types(p1)) mol.atoms.push_back(static_cast<Element>(type));
    return mol;
}

} // namespace

bool guidance_update(const EndpointPredictor& model, Eigen::MatrixXd& x,
                     const std::vector<int>& types, double t, const GuidanceConfig& gc) {
    Eigen::MatrixXd x1, p1;
    model.predict(x, types, t, x1, p1);
    const Molecule decoded = decode_endpoint(x1, p1);
    if (!validity(decoded) || !connectivity(decoded)) return false;
    const BondGraph g = perceive_bonds(decoded);
    const BoundsMatrix bm = bounds_matrix(decoded, g);
    const Eigen::MatrixXd grad =
        model.bounds_loss_gradient(x, types, t, bm, gc.through_model);
    x -= gc.alpha_phys * grad.array().sign().matrix();
    check_finite(x, "guided state");
    return true;
}

void SampleConfig::validate() const {
    if (n_steps < 1) throw ConfigError("sampling needs at least one step");
    if (!(gamma >= 0.0)) throw ConfigError("noise scale must be non-negative");
    if (!(eps_g > 0.0)) throw ConfigError("stochasticity epsilon must be positive");
    if (!(g_cutoff > 0.0)) throw ConfigError("stochasticity cutoff must be positive");
    if (guidance.enabled) {
        if (!(guidance.t_guidance > 0.0 && guidance.t_guidance < 1.0))
            throw ConfigError("guidance time must lie in (0, 1)");
        if (!(guidance.alpha_phys > 0.0)) throw ConfigError("guidance step size must be positive");
    }
}

std::vector<double> schedule(int n_steps, ScheduleKind kind) {
    if (n_steps < 1) throw ConfigError("schedule needs at least one step");
    std::vector<double> grid(n_steps + 1);
    for (int i = 0; i <= n_steps; ++i) {
        const double frac = static_cast<double>(i) / n_steps;
        grid[i] = kind == ScheduleKind::uniform ? frac : 1.0 - std::pow(0.01, frac);
    }
    grid.front() = 0.0;
    grid.back() = kind == ScheduleKind::uniform ? 1.0 : 0.99;
    return grid;
}

double g_eval(GKind kind, double t, double eps_g, double g_cutoff) {
    if (t > g_cutoff) return 0.0;
    switch (kind) {
    case GKind::zero: return 0.0;
    case GKind::inv_t: return 1.0 / (t + eps_g);
    case GKind::inv_t2: return 1.0 / (t * t + eps_g);
    case GKind::one_minus_t_over_t: return (1.0 - t) / (t + eps_g);
    }
    throw ConfigError("unknown stochasticity kind");
}

Eigen::MatrixXd euclidean_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x1_hat,
                               double t, double dt, double g, double gamma, Rng& rng,
                               bool noise_literal) {
    const double om = std::max(1.0 - t, kMinOneMinusT);
    const Eigen::MatrixXd v = (x1_hat - x) / om;
    const Eigen::MatrixXd s = g * (t * v - x) / om;
    Eigen::MatrixXd out = x + (v + s) * dt;
    const double coef =
        noise_literal ? dt * std::sqrt(2.0 * g * gamma) : std::sqrt(2.0 * g * gamma * dt);
    if (coef > 0.0) out += coef * rng.gaussian_matrix(x.rows(), x.cols());
    check_finite(out, "coordinate state");
    return out;
}

std::vector<int> discrete_flow_step(const std::vector<int>& a, const Eigen::MatrixXd& p1_hat,
                                    double t, double dt, Rng& rng) {
    const int n = static_cast<int>(a.size());
    if (p1_hat.rows() != n) throw DataError("type probabilities do not match the atom count");
    const int vocab = static_cast<int>(p1_hat.cols());
    const double om = 1.0 - t;
    const double ratio = om <= kTimeEps ? 1.0 : std::min(dt / om, 1.0);

    std::vector<int> out(a.size());
    std::vector<double> p(vocab);
    for (int i = 0; i < n; ++i) {
        if (a[i] < 0 || a[i] >= vocab) throw DataError("type index outside the vocabulary");
        if (std::abs(p1_hat.row(i).sum() - 1.0) > 1e-6)
            throw DataError("type probability row does not sum to one");
        double off_mass = 0.0;
        for (int j = 0; j < vocab; ++j) {
            if (j == a[i]) continue;
            p[j] = ratio * p1_hat(i, j);
            off_mass += p[j];
        }
        p[a[i]] = 1.0 - off_mass;
        for (int j = 0; j < vocab; ++j) {
            if (p[j] < -1e-9 || p[j] > 1.0 + 1e-9)
                throw DataError("type step probability outside the unit interval");
            p[j] = std::clamp(p[j], 0.0, 1.0);
        }
        const double u = rng.uniform();
        double cum = 0.0;
        out[i] = vocab - 1;
        for (int j = 0; j < vocab; ++j) {
            cum += p[j];
            if (u < cum) {
                out[i] = j;
                break;
            }
        }
    }
    return out;
}

Molecule sample_from(const EndpointPredictor& model, Eigen::MatrixXd x0, std::vector<int> a0,
                     double t_start, const SampleConfig& cfg, Rng& rng, Trajectory* trajectory,
                     GuidanceReport* report) {
    cfg.validate();
    if (x0.rows() != static_cast<Eigen::Index>(a0.size()) || x0.cols() != 3)
        throw DataError("initial state shapes disagree");
    if (!(t_start >= 0.0 && t_start < 1.0)) throw ConfigError("start time must lie in [0, 1)");

    std::vector<double> times{t_start};
    for (double t : schedule(cfg.n_steps, cfg.schedule))
        if (t > t_start + kTimeEps) times.push_back(t);

    Eigen::MatrixXd x = std::move(x0);
    std::vector<int> a = std::move(a0);
    Eigen::MatrixXd x1, p1;
    GuidanceReport local;
    GuidanceReport& rep = report ? *report : local;

    auto guide_here = [&](double t) {
        if (!cfg.guidance.enabled || t < cfg.guidance.t_guidance - kTimeEps) return;
        ++rep.attempts;
        if (guidance_update(model, x, a, t, cfg.guidance)) {
            ++rep.applied;
        } else {
            ++rep.skipped;
        }
    };

    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
        const double t = times[i];
        const double dt = times[i + 1] - t;
        guide_here(t);
        model.predict(x, a, t, x1, p1);
        if (trajectory) trajectory->snapshots.push_back({t, x, a, x1});
        const double g = g_eval(cfg.g_kind, t, cfg.eps_g, cfg.g_cutoff);
        x = euclidean_step(x, x1, t, dt, g, cfg.gamma, rng, cfg.noise_literal);
        a = discrete_flow_step(a, p1, t, dt, rng);
    }

    const double t_final = times.back();
    guide_here(t_final);
    model.predict(x, a, t_final, x1, p1);
    if (trajectory) trajectory->snapshots.push_back({t_final, x, a, x1});
    check_finite(x1, "endpoint prediction");

    Molecule out;
    out.coords = x1;
    for (int type : argmax_types(p1)) out.atoms.push_back(static_cast<Element>(type));
    return out;
}

Molecule sample(const EndpointPredictor& model, int n_atoms, const SampleConfig& cfg, Rng& rng,
                Trajectory* trajectory, GuidanceReport* report) {
    if (n_atoms < 1) throw ConfigError("molecule needs at least one atom");
    Eigen::MatrixXd x0 = rng.gaussian_matrix(n_atoms, 3);
    std::vector<int> a0(n_atoms);
    for (int& t : a0) t = rng.uniform_int(kAtomVocab);
    return sample_from(model, std::move(x0), std::move(a0), 0.0, cfg, rng, trajectory, report);
}

} // namespace atomflow
