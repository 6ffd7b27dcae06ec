#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace atomflow {

class Tensor;

namespace detail {

struct Node;
// Accumulates a gradient contribution into a parent node's slot.
using GradSink = std::function<void(const std::shared_ptr<Node>&, const Eigen::MatrixXd&)>;

struct Node {
    Eigen::MatrixXd value;
    std::vector<std::shared_ptr<Node>> parents;
    // Pushes this node's parent gradients given the incoming gradient. Leaves
    // and value-only nodes have no backward.
    std::function<void(const Node& self, const Eigen::MatrixXd& grad, const GradSink& sink)> backward;
    bool requires_grad = false;
    bool backward_done = false;
};

Tensor make_tensor(std::shared_ptr<Node> n);

} // namespace detail

// Dense 2D tensor of doubles with reverse-mode autodiff. Values are immutable
// once recorded in a graph; optimizers mutate leaf storage only between passes.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Eigen::MatrixXd value, bool requires_grad = false);
    Tensor(Eigen::Index rows, Eigen::Index cols, double fill, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);
    static Tensor row(const Eigen::RowVectorXd& v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Eigen::MatrixXd& value() const;
    // Leaf storage for optimizer updates. Must not be called while a recorded
    // graph referencing this leaf is still alive.
    Eigen::MatrixXd& mutable_value();
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    double item() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    friend Tensor detail::make_tensor(std::shared_ptr<detail::Node> n);
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

    std::shared_ptr<detail::Node> node_;
};

// Suspends graph recording on the current thread while alive. Forward values
// are still computed; backward() on results is impossible.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Gradients keyed by graph node identity, produced by backward().
class Gradients {
public:
    bool contains(const Tensor& t) const;
    // Gradient of the loss w.r.t. t; zeros of t's shape when t received none.
    Eigen::MatrixXd wrt(const Tensor& t) const;

    std::unordered_map<const detail::Node*, Eigen::MatrixXd>& map() { return grads_; }

private:
    std::unordered_map<const detail::Node*, Eigen::MatrixXd> grads_;
};

// Reverse-mode sweep from a scalar loss. Throws std::invalid_argument if the
// loss is not 1x1 or if backward already ran on this graph.
Gradients backward(const Tensor& loss);

// ---- primitive ops -------------------------------------------------------
// add/mul broadcast the right operand when it is 1x1 or a 1xC row against an
// RxC left operand. All ops validate shapes and reject non-finite outputs.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
// Row-wise softmax.
Tensor softmax(const Tensor& a);
// Row-wise layer normalization without affine parameters, epsilon 1e-5.
Tensor layer_norm(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Rows of a table selected by index; duplicate indices accumulate gradient.
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);
// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, Eigen::Index row0, Eigen::Index nrows,
             Eigen::Index col0, Eigen::Index ncols);
// Scalar sum of elementwise squared differences.
Tensor squared_error(const Tensor& a, const Tensor& b);
// Scalar sum over rows of softmax cross-entropy against integer targets,
// computed via the log-sum-exp identity for stability.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Wraps an externally computed value with a custom gradient w.r.t. a single
// parent, for domain losses with hand-derived derivatives.
Tensor custom_unary(const Tensor& parent, Eigen::MatrixXd value,
                    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& grad)> grad_fn,
                    const char* op_name);

// ---- optimizer -----------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
    long step = 0;
};

// Applies one bias-corrected Adam update in place. If any gradient entry is
// non-finite the whole update is skipped (state untouched) and false returned.
bool adam_step(std::vector<Tensor>& params, const std::vector<Eigen::MatrixXd>& grads,
               AdamState& state, const AdamConfig& config);

// Global L2 norm across a gradient list.
double global_norm(const std::vector<Eigen::MatrixXd>& grads);
// Scales gradients in place so the global norm is at most max_norm.
void clip_global_norm(std::vector<Eigen::MatrixXd>& grads, double max_norm);

} // namespace atomflow
