#include "atomflow/tensor.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "atomflow/errors.hpp"

namespace atomflow {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const Eigen::MatrixXd& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void ensure_finite(const Eigen::MatrixXd& m, const char* op) {
    if (!m.allFinite())
        throw NumericalError(std::string("non-finite values produced by op '") + op + "'");
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_value_node(Eigen::MatrixXd value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    return n;
}

// Builds an op node. The backward closure is attached only when recording is
// enabled and some parent participates in differentiation.
Tensor make_op(const char* op, Eigen::MatrixXd value, std::vector<NodePtr> parents,
               std::function<void(const detail::Node&, const Eigen::MatrixXd&, const detail::GradSink&)> backward) {
    ensure_finite(value, op);
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    bool track = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p && p->requires_grad) track = true;
    if (track) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
        n->requires_grad = true;
    }
    return detail::make_tensor(std::move(n));
}

// Broadcast descriptor for the right operand of add/mul.
enum class Bcast { same, row, scalar };

Bcast bcast_kind(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::same;
    if (b.rows() == 1 && b.cols() == 1) return Bcast::scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::row;
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

Eigen::MatrixXd reduce_to(const Eigen::MatrixXd& g, Bcast kind) {
    switch (kind) {
    case Bcast::same: return g;
    case Bcast::row: return g.colwise().sum();
    case Bcast::scalar: return Eigen::MatrixXd::Constant(1, 1, g.sum());
    }
    return g;
}

} // namespace

namespace detail {
Tensor make_tensor(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
} // namespace detail

// ---- Tensor --------------------------------------------------------------

Tensor::Tensor(Eigen::MatrixXd value, bool requires_grad) {
    node_ = make_value_node(std::move(value));
    node_->requires_grad = requires_grad && g_grad_enabled;
}

Tensor::Tensor(Eigen::Index rows, Eigen::Index cols, double fill, bool requires_grad)
    : Tensor(Eigen::MatrixXd::Constant(rows, cols, fill), requires_grad) {}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(Eigen::MatrixXd::Constant(1, 1, v), requires_grad);
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
    return Tensor(Eigen::MatrixXd::Zero(rows, cols), requires_grad);
}

Tensor Tensor::row(const Eigen::RowVectorXd& v, bool requires_grad) {
    return Tensor(Eigen::MatrixXd(v), requires_grad);
}

const Eigen::MatrixXd& Tensor::value() const {
    if (!node_) throw std::invalid_argument("use of undefined tensor");
    return node_->value;
}

Eigen::MatrixXd& Tensor::mutable_value() {
    if (!node_) throw std::invalid_argument("use of undefined tensor");
    if (node_->backward) throw std::invalid_argument("mutable_value on a non-leaf tensor");
    return node_->value;
}

double Tensor::item() const {
    const auto& v = value();
    if (v.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(v));
    return v(0, 0);
}

// ---- grad mode -----------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- backward ------------------------------------------------------------

bool Gradients::contains(const Tensor& t) const {
    return t.defined() && grads_.count(t.node().get()) > 0;
}

Eigen::MatrixXd Gradients::wrt(const Tensor& t) const {
    auto it = grads_.find(t.node().get());
    if (it == grads_.end()) return Eigen::MatrixXd::Zero(t.rows(), t.cols());
    return it->second;
}

Gradients backward(const Tensor& loss) {
    if (!loss.defined() || loss.value().size() != 1)
        throw std::invalid_argument("backward requires a scalar loss");
    detail::Node* root = loss.node().get();
    if (!root->requires_grad)
        throw std::invalid_argument("backward on a tensor that does not require grad");

    // Iterative postorder DFS; the reverse visits each node before its parents.
    std::vector<detail::Node*> order;
    std::unordered_map<detail::Node*, int> state; // 0 new, 1 open, 2 done
    std::vector<detail::Node*> stack{root};
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        int& s = state[n];
        if (s == 0) {
            if (n->backward && n->backward_done)
                throw std::invalid_argument("backward through an already-consumed graph");
            s = 1;
            for (const auto& p : n->parents)
                if (p && p->requires_grad && state[p.get()] == 0) stack.push_back(p.get());
        } else {
            stack.pop_back();
            if (s == 1) {
                s = 2;
                order.push_back(n);
            }
        }
    }

    Gradients result;
    auto& grads = result.map();
    grads.reserve(order.size());
    grads[root] = Eigen::MatrixXd::Constant(1, 1, 1.0);
    detail::GradSink sink = [&grads](const NodePtr& parent, const Eigen::MatrixXd& g) {
        if (!parent || !parent->requires_grad) return;
        auto it = grads.find(parent.get());
        if (it == grads.end())
            grads.emplace(parent.get(), g);
        else
            it->second += g;
    };
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        n->backward_done = true;
        if (!n->backward) continue;
        auto git = grads.find(n);
        if (git == grads.end()) continue;
        n->backward(*n, git->second, sink);
    }
    return result;
}

// ---- ops -----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& A = a.value();
    const auto& B = b.value();
    Bcast kind = bcast_kind(A, B, "add");
    Eigen::MatrixXd out;
    switch (kind) {
    case Bcast::same: out = A + B; break;
    case Bcast::row: out = A.rowwise() + B.row(0); break;
    case Bcast::scalar: out = (A.array() + B(0, 0)).matrix(); break;
    }
    return make_op("add", std::move(out), {a.node(), b.node()},
                   [kind](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       sink(self.parents[0], g);
                       sink(self.parents[1], reduce_to(g, kind));
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto& A = a.value();
    const auto& B = b.value();
    Bcast kind = bcast_kind(A, B, "mul");
    Eigen::MatrixXd out;
    switch (kind) {
    case Bcast::same: out = A.cwiseProduct(B); break;
    case Bcast::row: out = (A.array().rowwise() * B.row(0).array()).matrix(); break;
    case Bcast::scalar: out = A * B(0, 0); break;
    }
    return make_op("mul", std::move(out), {a.node(), b.node()},
                   [kind](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       const auto& B = self.parents[1]->value;
                       Eigen::MatrixXd ga;
                       switch (kind) {
                       case Bcast::same: ga = g.cwiseProduct(B); break;
                       case Bcast::row: ga = (g.array().rowwise() * B.row(0).array()).matrix(); break;
                       case Bcast::scalar: ga = g * B(0, 0); break;
                       }
                       sink(self.parents[0], ga);
                       sink(self.parents[1], reduce_to(g.cwiseProduct(A), kind));
                   });
}

Tensor scale(const Tensor& a, double c) {
    return make_op("scale", a.value() * c, {a.node()},
                   [c](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       sink(self.parents[0], g * c);
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.cols() != B.rows())
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(A) + " and " +
                                    shape_str(B));
    return make_op("matmul", A * B, {a.node(), b.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       const auto& B = self.parents[1]->value;
                       sink(self.parents[0], g * B.transpose());
                       sink(self.parents[1], A.transpose() * g);
                   });
}

Tensor transpose(const Tensor& a) {
    return make_op("transpose", a.value().transpose(), {a.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       sink(self.parents[0], g.transpose());
                   });
}

Tensor relu(const Tensor& a) {
    return make_op("relu", a.value().cwiseMax(0.0), {a.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       sink(self.parents[0],
                            (A.array() > 0.0).cast<double>().matrix().cwiseProduct(g));
                   });
}

namespace {
constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;
constexpr double kInvSqrt2Pi = 0.3989422804014327; // 1/sqrt(2*pi)

double gauss_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double gauss_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
} // namespace

Tensor gelu(const Tensor& a) {
    Eigen::MatrixXd out = a.value().unaryExpr([](double x) { return x * gauss_cdf(x); });
    return make_op("gelu", std::move(out), {a.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       Eigen::MatrixXd d =
                           A.unaryExpr([](double x) { return gauss_cdf(x) + x * gauss_pdf(x); });
                       sink(self.parents[0], d.cwiseProduct(g));
                   });
}

Tensor softmax(const Tensor& a) {
    const auto& A = a.value();
    Eigen::MatrixXd out(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        Eigen::RowVectorXd e = (A.row(i).array() - A.row(i).maxCoeff()).exp();
        out.row(i) = e / e.sum();
    }
    return make_op("softmax", std::move(out), {a.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& Y = self.value;
                       Eigen::MatrixXd gx(Y.rows(), Y.cols());
                       for (Eigen::Index i = 0; i < Y.rows(); ++i) {
                           double dot = g.row(i).dot(Y.row(i));
                           gx.row(i) = (Y.row(i).array() * (g.row(i).array() - dot)).matrix();
                       }
                       sink(self.parents[0], gx);
                   });
}

Tensor layer_norm(const Tensor& a) {
    constexpr double eps = 1e-5;
    const auto& A = a.value();
    Eigen::MatrixXd out(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        double mu = A.row(i).mean();
        double var = (A.row(i).array() - mu).square().mean();
        out.row(i) = (A.row(i).array() - mu) / std::sqrt(var + eps);
    }
    return make_op("layer_norm", std::move(out), {a.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       const auto& Y = self.value;
                       Eigen::MatrixXd gx(A.rows(), A.cols());
                       for (Eigen::Index i = 0; i < A.rows(); ++i) {
                           double mu = A.row(i).mean();
                           double var = (A.row(i).array() - mu).square().mean();
                           double inv_std = 1.0 / std::sqrt(var + eps);
                           double g_mean = g.row(i).mean();
                           double gy_mean = g.row(i).cwiseProduct(Y.row(i)).mean();
                           gx.row(i) = (inv_std *
                                        (g.row(i).array() - g_mean - Y.row(i).array() * gy_mean))
                                           .matrix();
                       }
                       sink(self.parents[0], gx);
                   });
}

Tensor sum(const Tensor& a) {
    return make_op("sum", Eigen::MatrixXd::Constant(1, 1, a.value().sum()), {a.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       sink(self.parents[0], Eigen::MatrixXd::Constant(A.rows(), A.cols(), g(0, 0)));
                   });
}

Tensor mean(const Tensor& a) {
    return make_op("mean", Eigen::MatrixXd::Constant(1, 1, a.value().mean()), {a.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       double c = g(0, 0) / static_cast<double>(A.size());
                       sink(self.parents[0], Eigen::MatrixXd::Constant(A.rows(), A.cols(), c));
                   });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    const auto& T = table.value();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), T.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= T.rows())
            throw std::invalid_argument("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = T.row(indices[i]);
    }
    return make_op("gather_rows", std::move(out), {table.node()},
                   [indices](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& T = self.parents[0]->value;
                       Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(T.rows(), T.cols());
                       for (std::size_t i = 0; i < indices.size(); ++i)
                           gt.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
                       sink(self.parents[0], gt);
                   });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    const auto& A = a.value();
    const auto& B = b.value();
    Eigen::MatrixXd out;
    if (axis == 0) {
        if (A.cols() != B.cols())
            throw std::invalid_argument("concat axis 0: column mismatch " + shape_str(A) + " vs " +
                                        shape_str(B));
        out.resize(A.rows() + B.rows(), A.cols());
        out.topRows(A.rows()) = A;
        out.bottomRows(B.rows()) = B;
    } else if (axis == 1) {
        if (A.rows() != B.rows())
            throw std::invalid_argument("concat axis 1: row mismatch " + shape_str(A) + " vs " +
                                        shape_str(B));
        out.resize(A.rows(), A.cols() + B.cols());
        out.leftCols(A.cols()) = A;
        out.rightCols(B.cols()) = B;
    } else {
        throw std::invalid_argument("concat: axis must be 0 or 1");
    }
    Eigen::Index ar = A.rows(), ac = A.cols();
    return make_op("concat", std::move(out), {a.node(), b.node()},
                   [axis, ar, ac](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       if (axis == 0) {
                           sink(self.parents[0], g.topRows(ar));
                           sink(self.parents[1], g.bottomRows(g.rows() - ar));
                       } else {
                           sink(self.parents[0], g.leftCols(ac));
                           sink(self.parents[1], g.rightCols(g.cols() - ac));
                       }
                   });
}

Tensor slice(const Tensor& a, Eigen::Index row0, Eigen::Index nrows, Eigen::Index col0,
             Eigen::Index ncols) {
    const auto& A = a.value();
    if (row0 < 0 || col0 < 0 || nrows < 0 || ncols < 0 || row0 + nrows > A.rows() ||
        col0 + ncols > A.cols())
        throw std::invalid_argument("slice: window outside tensor of shape " + shape_str(A));
    return make_op("slice", A.block(row0, col0, nrows, ncols), {a.node()},
                   [row0, nrows, col0, ncols](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& A = self.parents[0]->value;
                       Eigen::MatrixXd ga = Eigen::MatrixXd::Zero(A.rows(), A.cols());
                       ga.block(row0, col0, nrows, ncols) = g;
                       sink(self.parents[0], ga);
                   });
}

Tensor squared_error(const Tensor& a, const Tensor& b) {
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw std::invalid_argument("squared_error: shape mismatch " + shape_str(A) + " vs " +
                                    shape_str(B));
    double v = (A - B).squaredNorm();
    return make_op("squared_error", Eigen::MatrixXd::Constant(1, 1, v), {a.node(), b.node()},
                   [](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       Eigen::MatrixXd d =
                           2.0 * g(0, 0) * (self.parents[0]->value - self.parents[1]->value);
                       sink(self.parents[0], d);
                       sink(self.parents[1], -d);
                   });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    const auto& L = logits.value();
    if (static_cast<Eigen::Index>(targets.size()) != L.rows())
        throw std::invalid_argument("cross_entropy: one target per row required");
    double total = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
        int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= L.cols())
            throw std::invalid_argument("cross_entropy: target out of range");
        double m = L.row(i).maxCoeff();
        double lse = m + std::log((L.row(i).array() - m).exp().sum());
        total += lse - L(i, t);
    }
    return make_op("cross_entropy", Eigen::MatrixXd::Constant(1, 1, total), {logits.node()},
                   [targets](const detail::Node& self, const Eigen::MatrixXd& g, const detail::GradSink& sink) {
                       const auto& L = self.parents[0]->value;
                       Eigen::MatrixXd gl(L.rows(), L.cols());
                       for (Eigen::Index i = 0; i < L.rows(); ++i) {
                           Eigen::RowVectorXd e = (L.row(i).array() - L.row(i).maxCoeff()).exp();
                           gl.row(i) = e / e.sum();
                           gl(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
                       }
                       sink(self.parents[0], gl * g(0, 0));
                   });
}

Tensor custom_unary(const Tensor& parent, Eigen::MatrixXd value,
                    std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> grad_fn,
                    const char* op_name) {
    return make_op(op_name, std::move(value), {parent.node()},
                   [grad_fn = std::move(grad_fn)](const detail::Node& self, const Eigen::MatrixXd& g,
                                                  const detail::GradSink& sink) {
                       sink(self.parents[0], grad_fn(g));
                   });
}

// ---- optimizer -----------------------------------------------------------

bool adam_step(std::vector<Tensor>& params, const std::vector<Eigen::MatrixXd>& grads,
               AdamState& state, const AdamConfig& config) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const auto& p : params) {
            state.m.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
            state.v.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter count");
    for (const auto& g : grads)
        if (!g.allFinite()) return false;

    state.step += 1;
    double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
        Eigen::ArrayXXd mh = m.array() / bc1;
        Eigen::ArrayXXd vh = v.array() / bc2;
        params[i].mutable_value() -= (config.lr * mh / (vh.sqrt() + config.eps)).matrix();
    }
    return true;
}

double global_norm(const std::vector<Eigen::MatrixXd>& grads) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    return std::sqrt(sq);
}

void clip_global_norm(std::vector<Eigen::MatrixXd>& grads, double max_norm) {
    double n = global_norm(grads);
    if (n > max_norm && n > 0.0) {
        double s = max_norm / n;
        for (auto& g : grads) g *= s;
    }
}

} // namespace atomflow
