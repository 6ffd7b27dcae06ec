#pragma once

#include <vector>

#include <Eigen/Dense>

#include "atomflow/bounds.hpp"

namespace atomflow {

// Anything that can estimate the clean endpoint of a noisy molecular state.
// The sampler, guidance, and several metrics are written against this
// interface so they can be exercised with closed-form oracles.
class EndpointPredictor {
public:
    virtual ~EndpointPredictor() = default;

    // Given noisy coordinates x (N x 3), noisy types and time t, produces the
    // endpoint estimate: coordinates x1 (N x 3) and per-atom type
    // probabilities p1 (N x vocab, rows summing to 1).
    virtual void predict(const Eigen::MatrixXd& x, const std::vector<int>& types, double t,
                         Eigen::MatrixXd& x1, Eigen::MatrixXd& p1) const = 0;

    // Gradient of the distance-bounds loss of the predicted endpoint.
    // through_model asks for backpropagation to x; the base implementation
    // instead differentiates the loss at the endpoint coordinates directly
    // and uses that as the update direction.
    virtual Eigen::MatrixXd bounds_loss_gradient(const Eigen::MatrixXd& x,
                                                 const std::vector<int>& types, double t,
                                                 const BoundsMatrix& bm, bool through_model) const;
};

} // namespace atomflow
