#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "atomflow/bounds.hpp"
#include "atomflow/errors.hpp"
#include "atomflow/model.hpp"
#include "atomflow/rng.hpp"

using namespace atomflow;

namespace {

ModelConfig tiny_config(bool pos_enc = true) {
    ModelConfig c;
    c.hidden_size = 16;
    c.n_blocks = 1;
    c.n_heads = 2;
    c.max_len = 16;
    c.use_positional_encoding = pos_enc;
    return c;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("time encoding interleaves sin and cos of geometric frequencies") {
    Eigen::RowVectorXd e0 = time_encoding(0.0, 64);
    for (int k = 0; k < 32; ++k) {
        CHECK(e0(2 * k) == 0.0);
        CHECK(e0(2 * k + 1) == 1.0);
    }
    CHECK(time_encoding(0.37, 64) == time_encoding(0.37, 64));
    CHECK((time_encoding(0.1, 64) - time_encoding(0.9, 64)).norm() > 0.0);
    // Lowest frequency is 1, highest 1000.
    Eigen::RowVectorXd e = time_encoding(0.25, 4);
    CHECK(e(0) == doctest::Approx(std::sin(2.0 * std::numbers::pi * 0.25)));
    CHECK(e(2) == doctest::Approx(std::sin(2.0 * std::numbers::pi * 1000.0 * 0.25)).epsilon(1e-6));
    CHECK_THROWS_AS(time_encoding(-0.1, 16), std::invalid_argument);
    CHECK_THROWS_AS(time_encoding(1.1, 16), std::invalid_argument);
}

TEST_CASE("positional encoding matches the sinusoidal formula") {
    Eigen::RowVectorXd p0 = positional_encoding(0, 32);
    for (int i = 0; i < 16; ++i) {
        CHECK(p0(2 * i) == 0.0);
        CHECK(p0(2 * i + 1) == 1.0);
    }
    Eigen::RowVectorXd p1 = positional_encoding(1, 32);
    CHECK(p1(0) == doctest::Approx(0.8414709848));
    CHECK(p1(1) == doctest::Approx(std::cos(1.0)));
    CHECK(positional_encoding(5, 32, false).norm() == 0.0);
}

TEST_CASE("forward produces endpoint coordinates and type logits for any length") {
    ModelParams params = ModelParams::init(tiny_config(), 1);
    for (int n : {1, 2, 7, 16}) {
        Eigen::MatrixXd x = Rng::stream(2, "fx", static_cast<std::uint64_t>(n)).gaussian_matrix(n, 3);
        std::vector<int> types(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) types[static_cast<std::size_t>(i)] = i % kAtomVocab;
        NoGradGuard ng;
        ModelOutput out = model_forward(params, Tensor(x), types, 0.4);
        CHECK(out.coords.rows() == n);
        CHECK(out.coords.cols() == 3);
        CHECK(out.logits.rows() == n);
        CHECK(out.logits.cols() == 9);
    }
}

TEST_CASE("forward rejects over-length and out-of-vocabulary inputs") {
    ModelParams params = ModelParams::init(tiny_config(), 1);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(17, 3);
    std::vector<int> types(17, 0);
    CHECK_THROWS_AS(model_forward(params, Tensor(x), types, 0.5), DataError);
    Eigen::MatrixXd x2 = Eigen::MatrixXd::Zero(2, 3);
    CHECK_THROWS_AS(model_forward(params, Tensor(x2), {0, 9}, 0.5), DataError);
}

TEST_CASE("config validation catches inconsistent settings") {
    ModelConfig c = tiny_config();
    c.hidden_size = 15;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.atom_vocab = 10;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.n_blocks = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("without positional encodings the forward is permutation equivariant") {
    ModelParams params = ModelParams::init(tiny_config(false), 3);
    const int n = 4;
    Eigen::MatrixXd x = Rng::stream(4, "perm").gaussian_matrix(n, 3);
    std::vector<int> types{0, 2, 5, 2};
    NoGradGuard ng;
    ModelOutput base = model_forward(params, Tensor(x), types, 0.3);

    std::vector<int> perm{0, 1, 2, 3};
    do {
        Eigen::MatrixXd xp(n, 3);
        std::vector<int> tp(n);
        for (int i = 0; i < n; ++i) {
            xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
            tp[static_cast<std::size_t>(i)] = types[static_cast<std::size_t>(perm[i])];
        }
        ModelOutput out = model_forward(params, Tensor(xp), tp, 0.3);
        for (int i = 0; i < n; ++i) {
            CHECK((out.coords.value().row(i) - base.coords.value().row(perm[i])).cwiseAbs().maxCoeff() <
                  1e-9);
            CHECK((out.logits.value().row(i) - base.logits.value().row(perm[i])).cwiseAbs().maxCoeff() <
                  1e-9);
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("with positional encodings permutation equivariance breaks") {
    ModelParams params = ModelParams::init(tiny_config(true), 3);
    const int n = 4;
    Eigen::MatrixXd x = Rng::stream(4, "perm").gaussian_matrix(n, 3);
    std::vector<int> types{0, 2, 5, 2};
    NoGradGuard ng;
    ModelOutput base = model_forward(params, Tensor(x), types, 0.3);

    // Reverse the sequence: if outputs still permuted identically, the
    // position signal would be absent.
    std::vector<int> perm{3, 2, 1, 0};
    Eigen::MatrixXd xp(n, 3);
    std::vector<int> tp(n);
    for (int i = 0; i < n; ++i) {
        xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        tp[static_cast<std::size_t>(i)] = types[static_cast<std::size_t>(perm[i])];
    }
    ModelOutput out = model_forward(params, Tensor(xp), tp, 0.3);
    double dev = 0.0;
    for (int i = 0; i < n; ++i)
        dev = std::max(dev,
                       (out.coords.value().row(i) - base.coords.value().row(perm[i])).cwiseAbs().maxCoeff());
    CHECK(dev > 1e-9);
}

TEST_CASE("coordinate gradients match finite differences through the full network") {
    ModelParams params = ModelParams::init(tiny_config(), 7);
    const int n = 3;
    Eigen::MatrixXd x = Rng::stream(8, "fd").gaussian_matrix(n, 3);
    std::vector<int> types{1, 0, 4};
    const double t = 0.6;

    auto losses = [&](const Eigen::MatrixXd& xin) {
        NoGradGuard ng;
        ModelOutput out = model_forward(params, Tensor(xin), types, t);
        // Weighted scalar mixing both heads.
        return sum(out.coords).item() + 0.5 * sum(out.logits).item();
    };

    Tensor coords(x, true);
    ModelOutput out = model_forward(params, coords, types, t);
    Gradients g = backward(add(sum(out.coords), scale(sum(out.logits), 0.5)));
    Eigen::MatrixXd analytic = g.wrt(coords);

    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < 3; ++c) {
            Eigen::MatrixXd xp = x, xm = x;
            xp(i, c) += h;
            xm(i, c) -= h;
            double fd = (losses(xp) - losses(xm)) / (2.0 * h);
            double a = analytic(i, c);
            worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2}));
        }
    CHECK(worst < 1e-4);
}

TEST_CASE("bounds loss gradient through the model matches finite differences") {
    ModelParams params = ModelParams::init(tiny_config(), 9);
    ModelPredictor pred(params);
    Molecule m;
    m.atoms = {Element::C, Element::C, Element::O};
    m.coords.resize(3, 3);
    m.coords << 0, 0, 0, 1.52, 0, 0, 2.94, 0, 0;
    auto bm = bounds_matrix(m, perceive_bonds(m));

    Eigen::MatrixXd x = Rng::stream(10, "gfd").gaussian_matrix(3, 3);
    std::vector<int> types{0, 0, 2};
    const double t = 0.95;
    Eigen::MatrixXd analytic = pred.bounds_loss_gradient(x, types, t, bm, true);

    auto f = [&](const Eigen::MatrixXd& xin) {
        Eigen::MatrixXd x1, p1;
        pred.predict(xin, types, t, x1, p1);
        return phys_loss_value(x1, bm);
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index c = 0; c < 3; ++c) {
            Eigen::MatrixXd xp = x, xm = x;
            xp(i, c) += h;
            xm(i, c) -= h;
            double fd = (f(xp) - f(xm)) / (2.0 * h);
            double a = analytic(i, c);
            worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2}));
        }
    CHECK(worst < 1e-4);

    // Direct mode differentiates the loss at the predicted endpoint instead
    // of pushing it back through the network.
    Eigen::MatrixXd x1, p1;
    pred.predict(x, types, t, x1, p1);
    Eigen::MatrixXd direct = pred.bounds_loss_gradient(x, types, t, bm, false);
    CHECK((direct - phys_loss_grad(x1, bm)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((direct - analytic).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("model predictor emits probability rows") {
    ModelParams params = ModelParams::init(tiny_config(), 11);
    ModelPredictor pred(params);
    Eigen::MatrixXd x = Rng::stream(12, "p").gaussian_matrix(5, 3);
    std::vector<int> types{0, 1, 2, 3, 4};
    Eigen::MatrixXd x1, p1;
    pred.predict(x, types, 0.2, x1, p1);
    CHECK(x1.rows() == 5);
    CHECK(p1.rows() == 5);
    CHECK(p1.cols() == 9);
    for (Eigen::Index i = 0; i < 5; ++i) {
        CHECK(p1.row(i).sum() == doctest::Approx(1.0));
        CHECK(p1.row(i).minCoeff() > 0.0);
    }
}

TEST_CASE("forward is deterministic") {
    ModelParams params = ModelParams::init(tiny_config(), 13);
    Eigen::MatrixXd x = Rng::stream(14, "d").gaussian_matrix(4, 3);
    std::vector<int> types{0, 1, 2, 3};
    NoGradGuard ng;
    ModelOutput a = model_forward(params, Tensor(x), types, 0.5);
    ModelOutput b = model_forward(params, Tensor(x), types, 0.5);
    CHECK(a.coords.value() == b.coords.value());
    CHECK(a.logits.value() == b.logits.value());
}

TEST_CASE("checkpoints round-trip bit-exactly at f32 precision") {
    ModelParams params = ModelParams::init(tiny_config(), 15);
    ModelParams ema = params.clone();
    ema.tensors[0].mutable_value()(0, 0) += 0.25;

    const std::string p1 = "test_ck1.tbsc";
    const std::string p2 = "test_ck2.tbsc";
    save_checkpoint(p1, params, &ema);
    Checkpoint ck = load_checkpoint(p1);
    REQUIRE(ck.ema.has_value());
    CHECK(ck.params.config == params.config);
    save_checkpoint(p2, ck.params, &*ck.ema);
    CHECK(read_file(p1) == read_file(p2));

    // Loaded weights must equal the f32 rounding of the originals.
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& orig = params.tensors[i].value();
        const auto& back = ck.params.tensors[i].value();
        for (Eigen::Index r = 0; r < orig.rows(); ++r)
            for (Eigen::Index c = 0; c < orig.cols(); ++c)
                CHECK(back(r, c) == static_cast<double>(static_cast<float>(orig(r, c))));
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint without EMA reports none and corrupt files are rejected") {
    ModelParams params = ModelParams::init(tiny_config(), 16);
    const std::string p = "test_ck3.tbsc";
    save_checkpoint(p, params);
    Checkpoint ck = load_checkpoint(p);
    CHECK_FALSE(ck.ema.has_value());
    std::remove(p.c_str());

    std::ofstream bad("test_bad.tbsc", std::ios::binary);
    bad << "JUNKJUNKJUNK";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint("test_bad.tbsc"), DataError);
    CHECK_THROWS_AS(load_checkpoint("no_such_file.tbsc"), DataError);
    std::remove("test_bad.tbsc");
}

TEST_CASE("parameter clones are deep copies") {
    ModelParams params = ModelParams::init(tiny_config(), 17);
    ModelParams copy = params.clone();
    double before = copy.tensors[0].value()(0, 0);
    params.tensors[0].mutable_value()(0, 0) = before + 1.0;
    CHECK(copy.tensors[0].value()(0, 0) == before);
}

} // TEST_SUITE
