#include <doctest.h>

#include <cmath>
#include <vector>

#include "atomflow/bounds.hpp"
#include "atomflow/errors.hpp"
#include "atomflow/sampler.hpp"

using namespace atomflow;

namespace {

Eigen::MatrixXd one_hot_rows(const std::vector<int>& types, int vocab = kAtomVocab) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(types.size(), vocab);
    for (std::size_t i = 0; i < types.size(); ++i) p(static_cast<Eigen::Index>(i), types[i]) = 1.0;
    return p;
}

// Always predicts the same molecule, regardless of the state.
struct FixedOracle : EndpointPredictor {
    Molecule target;

    explicit FixedOracle(Molecule m) : target(std::move(m)) {}

    void predict(const Eigen::MatrixXd&, const std::vector<int>&, double, Eigen::MatrixXd& x1,
                 Eigen::MatrixXd& p1) const override {
        x1 = target.coords;
        std::vector<int> types(target.atoms.size());
        for (std::size_t i = 0; i < types.size(); ++i) types[i] = static_cast<int>(target.atoms[i]);
        p1 = one_hot_rows(types);
    }
};

// Predicts the state itself as the endpoint.
struct IdentityOracle : EndpointPredictor {
    void predict(const Eigen::MatrixXd& x, const std::vector<int>& types, double,
                 Eigen::MatrixXd& x1, Eigen::MatrixXd& p1) const override {
        x1 = x;
        p1 = one_hot_rows(types);
    }
};

Molecule two_carbon(double gap = 1.52) {
    Molecule m;
    m.atoms = {Element::C, Element::C};
    m.coords.resize(2, 3);
    m.coords << 0.0, 0.0, 0.0, gap, 0.0, 0.0;
    return m;
}

Molecule straight_chain(int n = 4) {
    Molecule m;
    m.atoms.assign(n, Element::C);
    m.coords.resize(n, 3);
    for (int i = 0; i < n; ++i) m.coords.row(i) << 1.52 * i, 0.0, 0.0;
    return m;
}

} // namespace

TEST_SUITE("sampler") {

TEST_CASE("uniform schedule divides the interval evenly") {
    const std::vector<double> grid = schedule(4, ScheduleKind::uniform);
    REQUIRE(grid.size() == 5);
    const double expected[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int i = 0; i < 5; ++i) CHECK(grid[i] == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(grid.front() == 0.0);
    CHECK(grid.back() == 1.0);
}

TEST_CASE("logarithmic schedule concentrates steps near the end") {
    const std::vector<double> grid = schedule(2, ScheduleKind::logarithmic);
    REQUIRE(grid.size() == 3);
    CHECK(grid[0] == 0.0);
    CHECK(grid[1] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(grid[2] == doctest::Approx(0.99).epsilon(1e-12));
    // later gaps are smaller
    const std::vector<double> fine = schedule(50, ScheduleKind::logarithmic);
    for (std::size_t i = 2; i < fine.size(); ++i)
        CHECK(fine[i] - fine[i - 1] < fine[i - 1] - fine[i - 2]);
}

TEST_CASE("schedules are strictly increasing") {
    for (ScheduleKind kind : {ScheduleKind::uniform, ScheduleKind::logarithmic})
        for (int n : {1, 2, 7, 40, 100, 500}) {
            const std::vector<double> grid = schedule(n, kind);
            REQUIRE(grid.size() == static_cast<std::size_t>(n) + 1);
            for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
        }
    CHECK_THROWS_AS(schedule(0, ScheduleKind::uniform), ConfigError);
}

TEST_CASE("stochasticity scale follows each parameterization") {
    CHECK(g_eval(GKind::inv_t, 0.0) == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(g_eval(GKind::inv_t, 0.5) == doctest::Approx(1.0 / 0.51).epsilon(1e-12));
    CHECK(g_eval(GKind::inv_t2, 0.5) == doctest::Approx(1.0 / 0.26).epsilon(1e-12));
    CHECK(g_eval(GKind::one_minus_t_over_t, 0.5) == doctest::Approx(0.5 / 0.51).epsilon(1e-12));
    for (double t : {0.0, 0.3, 0.7, 0.9})
        CHECK(g_eval(GKind::zero, t) == 0.0);
    // forced to zero strictly past the cutoff
    for (GKind kind :
         {GKind::zero, GKind::inv_t, GKind::inv_t2, GKind::one_minus_t_over_t})
        CHECK(g_eval(kind, 0.95) == 0.0);
    CHECK(g_eval(GKind::inv_t, 0.9) > 0.0);
}

TEST_CASE("coordinate step integrates the hand-checked velocity") {
    Eigen::MatrixXd x(1, 3), x1(1, 3);
    x << 0.0, 0.0, 0.0;
    x1 << 2.0, 0.0, 0.0;
    Rng rng = Rng::stream(1, "step");
    // v = (2-0)/0.5 = 4, no score, no noise
    const Eigen::MatrixXd out = euclidean_step(x, x1, 0.5, 0.1, 0.0, 0.0, rng);
    CHECK(out(0, 0) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(out(0, 1) == 0.0);

    // score adds g*(t*v - x)/(1-t) = 1*(0.5*4)/0.5 = 4, so x += (4+4)*0.1
    const Eigen::MatrixXd with_score = euclidean_step(x, x1, 0.5, 0.1, 1.0, 0.0, rng);
    CHECK(with_score(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("coordinate step fixes points where the prediction equals the state") {
    Eigen::MatrixXd x(2, 3);
    x << 1.0, -2.0, 0.5, 0.25, 0.0, -1.0;
    Rng rng = Rng::stream(2, "step");
    const Eigen::MatrixXd out = euclidean_step(x, x, 0.3, 0.05, 0.0, 0.0, rng);
    // v = 0 and g = 0 leave the state untouched
    CHECK((out - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("noise scaling differs between default and literal modes by sqrt(dt)") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 3);
    Eigen::MatrixXd x1 = Eigen::MatrixXd::Ones(3, 3);
    const double t = 0.4, dt = 0.04, g = 2.0, gamma = 0.01;
    Rng rng_a = Rng::stream(3, "noise");
    Rng rng_b = Rng::stream(3, "noise");
    const Eigen::MatrixXd drift = euclidean_step(x, x1, t, dt, g, 0.0, rng_a);
    Rng rng_c = Rng::stream(3, "noise");
    const Eigen::MatrixXd em = euclidean_step(x, x1, t, dt, g, gamma, rng_b);
    const Eigen::MatrixXd literal = euclidean_step(x, x1, t, dt, g, gamma, rng_c, true);
    const Eigen::MatrixXd noise_em = em - drift;
    const Eigen::MatrixXd noise_literal = literal - drift;
    CHECK(noise_em.cwiseAbs().minCoeff() > 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(noise_literal(i, j) / noise_em(i, j) ==
                  doctest::Approx(std::sqrt(dt)).epsilon(1e-12));
}

TEST_CASE("zero noise coefficient consumes no randomness") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 3);
    Eigen::MatrixXd x1 = Eigen::MatrixXd::Ones(2, 3);
    Rng used = Rng::stream(4, "noise");
    Rng untouched = Rng::stream(4, "noise");
    euclidean_step(x, x1, 0.5, 0.1, 0.0, 0.5, used);  // g = 0
    euclidean_step(x, x1, 0.5, 0.1, 2.0, 0.0, used);  // gamma = 0
    CHECK(used.uniform() == untouched.uniform());
}

TEST_CASE("type step keeps one-hot self predictions fixed") {
    const std::vector<int> a = {2, 5, 0};
    const Eigen::MatrixXd p1 = one_hot_rows(a);
    Rng rng = Rng::stream(5, "types");
    for (double t : {0.0, 0.5, 0.9})
        CHECK(discrete_flow_step(a, p1, t, 0.05, rng) == a);
}

TEST_CASE("type step flips with the prescribed jump probability") {
    const std::vector<int> a = {1};
    const Eigen::MatrixXd p1 = one_hot_rows({4});
    Rng rng = Rng::stream(6, "types");
    const int trials = 100000;
    long flips = 0;
    for (int k = 0; k < trials; ++k) {
        // ratio = dt/(1-t) = 0.25/0.5 = 0.5
        const std::vector<int> next = discrete_flow_step(a, p1, 0.5, 0.25, rng);
        if (next[0] == 4) ++flips;
        else CHECK(next[0] == 1);
    }
    const double p = 0.5;
    CHECK(std::abs(flips / double(trials) - p) <
          3.0 * std::sqrt(p * (1.0 - p) / trials));
}

TEST_CASE("final type step jumps straight to the predicted distribution") {
    const std::vector<int> a = {0};
    Eigen::MatrixXd p1(1, kAtomVocab);
    p1.setZero();
    p1(0, 0) = 0.3;
    p1(0, 7) = 0.7;
    Rng rng = Rng::stream(7, "types");
    const int trials = 100000;
    long sevens = 0;
    for (int k = 0; k < trials; ++k) {
        const std::vector<int> next = discrete_flow_step(a, p1, 0.6, 0.4, rng); // ratio 1
        if (next[0] == 7) ++sevens;
        else CHECK(next[0] == 0);
    }
    CHECK(std::abs(sevens / double(trials) - 0.7) <
          3.0 * std::sqrt(0.7 * 0.3 / trials));
}

TEST_CASE("type step rejects malformed probability rows") {
    const std::vector<int> a = {0};
    Eigen::MatrixXd bad(1, kAtomVocab);
    bad.setZero();
    bad(0, 0) = 2.0;
    Rng rng = Rng::stream(8, "types");
    CHECK_THROWS_AS(discrete_flow_step(a, bad, 0.5, 0.1, rng), DataError);
    Eigen::MatrixXd negative(1, kAtomVocab);
    negative.setZero();
    negative(0, 0) = 1.5;
    negative(0, 1) = -0.5;
    CHECK_THROWS_AS(discrete_flow_step(a, negative, 0.5, 0.1, rng), DataError);
}

TEST_CASE("fixed-output oracle reaches its molecule for every stochasticity kind") {
    Molecule target = straight_chain(5);
    target.atoms[2] = Element::O;
    target.atoms[4] = Element::N;
    const FixedOracle oracle(target);
    for (GKind kind : {GKind::zero, GKind::inv_t, GKind::inv_t2, GKind::one_minus_t_over_t})
        for (int n_steps : {40, 100})
            for (ScheduleKind sched : {ScheduleKind::uniform, ScheduleKind::logarithmic}) {
                SampleConfig cfg;
                cfg.n_steps = n_steps;
                cfg.g_kind = kind;
                cfg.schedule = sched;
                Rng rng = Rng::stream(9, "sample");
                Trajectory traj;
                const Molecule out = sample(oracle, target.size(), cfg, rng, &traj);
                REQUIRE(out.size() == target.size());
                double rmsd = std::sqrt((out.coords - target.coords).squaredNorm() / target.size());
                CHECK(rmsd < 1e-6);
                for (int i = 0; i < out.size(); ++i) CHECK(out.atoms[i] == target.atoms[i]);
                // the state itself contracts toward the prediction along the way
                const double d_first =
                    (traj.snapshots.front().x - target.coords).norm();
                const double d_last = (traj.snapshots.back().x - target.coords).norm();
                CHECK(d_last < 0.25 * d_first);
            }
}

TEST_CASE("single-step sampling returns the one-shot endpoint prediction") {
    const Molecule target = two_carbon();
    const FixedOracle oracle(target);
    SampleConfig cfg;
    cfg.n_steps = 1;
    Rng rng = Rng::stream(10, "sample");
    const Molecule out = sample(oracle, 2, cfg, rng);
    CHECK((out.coords - target.coords).cwiseAbs().maxCoeff() == 0.0);
    CHECK(out.atoms == target.atoms);
}

TEST_CASE("fixed seeds reproduce the whole trajectory bit for bit") {
    const Molecule target = straight_chain(4);
    const FixedOracle oracle(target);
    SampleConfig cfg;
    cfg.n_steps = 25;
    Trajectory ta, tb;
    Rng ra = Rng::stream(11, "sample");
    Rng rb = Rng::stream(11, "sample");
    const Molecule a = sample(oracle, 4, cfg, ra, &ta);
    const Molecule b = sample(oracle, 4, cfg, rb, &tb);
    CHECK((a.coords - b.coords).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.atoms == b.atoms);
    REQUIRE(ta.snapshots.size() == tb.snapshots.size());
    for (std::size_t i = 0; i < ta.snapshots.size(); ++i) {
        CHECK((ta.snapshots[i].x - tb.snapshots[i].x).cwiseAbs().maxCoeff() == 0.0);
        CHECK(ta.snapshots[i].types == tb.snapshots[i].types);
    }
    // a different seed shifts the path
    Rng rc = Rng::stream(12, "sample");
    Trajectory tc;
    sample(oracle, 4, cfg, rc, &tc);
    CHECK((ta.snapshots[5].x - tc.snapshots[5].x).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("without stochasticity the sampler is a deterministic flow") {
    const Molecule target = straight_chain(3);
    const FixedOracle oracle(target);
    SampleConfig cfg;
    cfg.n_steps = 30;
    cfg.g_kind = GKind::zero;
    cfg.gamma = 0.0;
    const Eigen::MatrixXd x0 = Rng::stream(13, "init").gaussian_matrix(3, 3);
    const std::vector<int> a0 = {0, 0, 0};
    Rng ra = Rng::stream(14, "sample");
    Rng rb = Rng::stream(999, "sample");
    Trajectory ta, tb;
    const Molecule a = sample_from(oracle, x0, a0, 0.0, cfg, ra, &ta);
    const Molecule b = sample_from(oracle, x0, a0, 0.0, cfg, rb, &tb);
    CHECK((a.coords - b.coords).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.atoms == b.atoms);
    for (std::size_t i = 0; i < ta.snapshots.size(); ++i)
        CHECK((ta.snapshots[i].x - tb.snapshots[i].x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trajectory times strictly increase and cover the schedule") {
    const Molecule target = two_carbon();
    const FixedOracle oracle(target);
    SampleConfig cfg;
    cfg.n_steps = 10;
    Rng rng = Rng::stream(15, "sample");
    Trajectory traj;
    sample(oracle, 2, cfg, rng, &traj);
    REQUIRE(traj.snapshots.size() == 11);
    for (std::size_t i = 1; i < traj.snapshots.size(); ++i)
        CHECK(traj.snapshots[i].t > traj.snapshots[i - 1].t);
    CHECK(traj.snapshots.front().t == 0.0);
    CHECK(traj.snapshots.back().t == doctest::Approx(0.99).epsilon(1e-12));
}

TEST_CASE("satisfied distance bounds leave the guided state untouched") {
    const Molecule target = two_carbon(1.5); // inside [1.42, 1.52]
    const FixedOracle oracle(target);
    Eigen::MatrixXd x = Rng::stream(16, "init").gaussian_matrix(2, 3);
    const Eigen::MatrixXd before = x;
    GuidanceConfig gc;
    const bool applied = guidance_update(oracle, x, {0, 0}, 0.99, gc);
    CHECK(applied);
    CHECK((x - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("guidance descends the bounds loss on a stretched fixture") {
    Molecule mol = straight_chain(4);
    mol.coords(3, 2) += 1.0; // stretches the last bond well past its bound
    const IdentityOracle oracle;
    std::vector<int> types(4, 0);
    const BondGraph g = perceive_bonds(mol);
    const BoundsMatrix bm = bounds_matrix(mol, g);
    REQUIRE(phys_loss_value(mol.coords, bm) > 0.0);

    GuidanceConfig gc;
    Eigen::MatrixXd x = mol.coords;
    double prev = phys_loss_value(x, bm);
    int steps = 0;
    while (prev > 1e-3 && steps < 500) {
        REQUIRE(guidance_update(oracle, x, types, 0.99, gc));
        // the loss is re-measured against the evolving decode's own bounds
        const Molecule decoded{{Element::C, Element::C, Element::C, Element::C}, x, ""};
        const double now =
            phys_loss_value(x, bounds_matrix(decoded, perceive_bonds(decoded)));
        CHECK(now < prev);
        prev = now;
        ++steps;
    }
    CHECK(prev < 1e-3);
    CHECK(steps < 500);
}

TEST_CASE("each guided coordinate moves by the step size or not at all") {
    Molecule mol = straight_chain(4);
    mol.coords(3, 2) += 1.0;
    const IdentityOracle oracle;
    GuidanceConfig gc;
    Eigen::MatrixXd x = mol.coords;
    const Eigen::MatrixXd before = x;
    REQUIRE(guidance_update(oracle, x, {0, 0, 0, 0}, 0.99, gc));
    const Eigen::MatrixXd delta = (x - before).cwiseAbs();
    bool moved = false;
    for (int i = 0; i < delta.rows(); ++i)
        for (int j = 0; j < delta.cols(); ++j) {
            CHECK((delta(i, j) == 0.0 || std::abs(delta(i, j) - gc.alpha_phys) < 1e-15));
            if (delta(i, j) != 0.0) moved = true;
        }
    CHECK(moved);
}

TEST_CASE("invalid decodes skip guidance and match the unguided run") {
    Molecule split = two_carbon(10.0); // disconnected decode
    const FixedOracle oracle(split);
    SampleConfig plain;
    plain.n_steps = 20;
    SampleConfig guided = plain;
    guided.guidance.enabled = true;
    Rng ra = Rng::stream(17, "sample");
    Rng rb = Rng::stream(17, "sample");
    GuidanceReport report;
    const Molecule a = sample(oracle, 2, plain, ra);
    const Molecule b = sample(oracle, 2, guided, rb, nullptr, &report);
    CHECK((a.coords - b.coords).cwiseAbs().maxCoeff() == 0.0);
    CHECK(report.attempts >= 1);
    CHECK(report.applied == 0);
    CHECK(report.skipped == report.attempts);
}

TEST_CASE("guidance fires only at grid points past its activation time") {
    const Molecule target = two_carbon(1.5);
    const FixedOracle oracle(target);
    SampleConfig cfg;
    cfg.n_steps = 40;
    cfg.guidance.enabled = true;
    Rng rng = Rng::stream(18, "sample");
    GuidanceReport report;
    sample(oracle, 2, cfg, rng, nullptr, &report);
    // the logarithmic grid has exactly one point at or past 0.99
    CHECK(report.attempts == 1);
    CHECK(report.applied == 1);

    SampleConfig uniform = cfg;
    uniform.schedule = ScheduleKind::uniform;
    uniform.n_steps = 100;
    Rng rng2 = Rng::stream(19, "sample");
    GuidanceReport report2;
    sample(oracle, 2, uniform, rng2, nullptr, &report2);
    // t = 0.99 and t = 1.0
    CHECK(report2.attempts == 2);
}

TEST_CASE("sampler rejects invalid configurations and states") {
    const FixedOracle oracle(two_carbon());
    SampleConfig cfg;
    cfg.n_steps = 0;
    Rng rng = Rng::stream(20, "sample");
    CHECK_THROWS_AS(sample(oracle, 2, cfg, rng), ConfigError);
    cfg.n_steps = 10;
    CHECK_THROWS_AS(sample(oracle, 0, cfg, rng), ConfigError);
    cfg.gamma = -0.1;
    CHECK_THROWS_AS(sample(oracle, 2, cfg, rng), ConfigError);
    cfg = SampleConfig{};
    CHECK_THROWS_AS(
        sample_from(oracle, Eigen::MatrixXd::Zero(2, 3), {0}, 0.0, cfg, rng), DataError);
    CHECK_THROWS_AS(
        sample_from(oracle, Eigen::MatrixXd::Zero(2, 3), {0, 0}, 1.0, cfg, rng), ConfigError);
}

TEST_CASE("resuming mid-schedule only integrates the remaining grid") {
    const Molecule target = straight_chain(3);
    const FixedOracle oracle(target);
    SampleConfig cfg;
    cfg.n_steps = 10;
    Rng rng = Rng::stream(21, "sample");
    Trajectory traj;
    const Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(3, 3);
    sample_from(oracle, x0, {0, 0, 0}, 0.95, cfg, rng, &traj);
    REQUIRE(!traj.snapshots.empty());
    CHECK(traj.snapshots.front().t == doctest::Approx(0.95));
    for (const TrajectorySnapshot& s : traj.snapshots) CHECK(s.t >= 0.95);
    // a start past the last grid point degenerates to one endpoint prediction
    Trajectory tail;
    const Molecule out = sample_from(oracle, x0, {0, 0, 0}, 0.995, cfg, rng, &tail);
    CHECK(tail.snapshots.size() == 1);
    CHECK((out.coords - target.coords).cwiseAbs().maxCoeff() == 0.0);
}

} // TEST_SUITE
