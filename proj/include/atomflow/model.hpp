#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "atomflow/predictor.hpp"
#include "atomflow/tensor.hpp"

namespace atomflow {

struct ModelConfig {
    int hidden_size = 64;
    int n_blocks = 4;
    int n_heads = 4;
    int atom_vocab = 9;
    int max_len = 72;
    bool use_positional_encoding = true;

    void validate() const; // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

// Flat parameter store in a fixed declared order; the checkpoint format and
// the optimizer both rely on this order.
struct ModelParams {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    ModelParams() = default;
    ModelParams(const ModelParams&) = delete;
    ModelParams& operator=(const ModelParams&) = delete;
    ModelParams(ModelParams&&) = default;
    ModelParams& operator=(ModelParams&&) = default;

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);
    ModelParams clone() const;

    const Tensor& at(std::string_view name) const;
    std::size_t count() const { return tensors.size(); }
};

// Interleaved sin/cos of 2*pi*f_k*t with H/2 frequencies geometric in
// [1, 1000].
Eigen::RowVectorXd time_encoding(double t, int hidden_size);

// Standard sinusoidal sequence encoding; the zero vector when disabled.
Eigen::RowVectorXd positional_encoding(int pos, int hidden_size, bool enabled = true);

struct ModelOutput {
    Tensor coords; // N x 3 endpoint estimate
    Tensor logits; // N x vocab
};

// Endpoint prediction from noisy coordinates, types and time. Differentiable
// w.r.t. coords and all parameters when recording is enabled.
ModelOutput model_forward(const ModelParams& params, const Tensor& coords,
                          const std::vector<int>& types, double t);

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    std::optional<ModelParams> ema;
};

// Binary format: magic "TBSC", u32 version, config header, then f32
// little-endian weight blocks in declared order; EMA shadow appended when
// present.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ModelParams* ema = nullptr);
Checkpoint load_checkpoint(const std::string& path);

// ---- predictor -------------------------------------------------------------

class ModelPredictor : public EndpointPredictor {
public:
    explicit ModelPredictor(const ModelParams& params) : params_(params) {}

    void predict(const Eigen::MatrixXd& x, const std::vector<int>& types, double t,
                 Eigen::MatrixXd& x1, Eigen::MatrixXd& p1) const override;

    // through_model: loss on the predicted endpoint, backpropagated through
    // the network to the input coordinates.
    Eigen::MatrixXd bounds_loss_gradient(const Eigen::MatrixXd& x, const std::vector<int>& types,
                                         double t, const BoundsMatrix& bm,
                                         bool through_model) const override;

private:
    const ModelParams& params_;
};

} // namespace atomflow
