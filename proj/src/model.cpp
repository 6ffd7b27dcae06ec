#include "atomflow/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

#include "atomflow/errors.hpp"
#include "atomflow/rng.hpp"

namespace atomflow {

namespace {

struct ParamSpec {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    double init_std; // 0 for zero-init, 1-filled for layer-norm gains
    bool ones = false;
};

// Declared parameter order. Checkpoints, Adam state and EMA all index into
// this fixed sequence.
std::vector<ParamSpec> param_specs(const ModelConfig& c) {
    const auto H = static_cast<Eigen::Index>(c.hidden_size);
    const auto F = 4 * H;
    std::vector<ParamSpec> specs;
    auto linear_std = [](Eigen::Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
    auto ln = [&](const std::string& prefix) {
        specs.push_back({prefix + ".g", 1, H, 0.0, true});
        specs.push_back({prefix + ".b", 1, H, 0.0, false});
    };
    auto attn = [&](const std::string& prefix) {
        for (const char* part : {"wq", "wk", "wv", "wo"})
            specs.push_back({prefix + "." + part, H, H, linear_std(H)});
        for (const char* part : {"bq", "bk", "bv", "bo"})
            specs.push_back({prefix + "." + part, 1, H, 0.0});
    };
    auto ffn = [&](const std::string& prefix) {
        specs.push_back({prefix + ".w1", H, F, linear_std(H)});
        specs.push_back({prefix + ".b1", 1, F, 0.0});
        specs.push_back({prefix + ".w2", F, H, linear_std(F)});
        specs.push_back({prefix + ".b2", 1, H, 0.0});
    };

    specs.push_back({"coord_encoder.w", 3, H, linear_std(3)});
    specs.push_back({"type_embedding", static_cast<Eigen::Index>(c.atom_vocab), H, 1.0});
    for (int b = 0; b < c.n_blocks; ++b) {
        std::string p = "block" + std::to_string(b);
        ln(p + ".ln1");
        attn(p + ".attn");
        ln(p + ".ln2");
        ffn(p + ".ffn");
    }
    for (const char* d : {"coord_stack", "type_stack"}) {
        std::string p = d;
        ln(p + ".ln_self");
        attn(p + ".self_attn");
        ln(p + ".ln_cross_q");
        ln(p + ".ln_cross_kv");
        attn(p + ".cross_attn");
        ln(p + ".ln_ffn");
        ffn(p + ".ffn");
    }
    ln("coord_head.ln");
    specs.push_back({"coord_head.w1", H, H, linear_std(H)});
    specs.push_back({"coord_head.w2", H, 3, linear_std(H)});
    ln("type_head.ln");
    specs.push_back({"type_head.w1", H, H, linear_std(H)});
    specs.push_back({"type_head.b1", 1, H, 0.0});
    specs.push_back({"type_head.w2", H, static_cast<Eigen::Index>(c.atom_vocab), linear_std(H)});
    specs.push_back({"type_head.b2", 1, static_cast<Eigen::Index>(c.atom_vocab), 0.0});
    return specs;
}

// Read-only view of parameters by name for one forward pass.
class ParamView {
public:
    explicit ParamView(const ModelParams& p) : params_(p) {
        for (std::size_t i = 0; i < p.names.size(); ++i) index_.emplace(p.names[i], i);
    }
    const Tensor& operator()(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("unknown model parameter: " + name);
        return params_.tensors[it->second];
    }

private:
    const ModelParams& params_;
    std::unordered_map<std::string, std::size_t> index_;
};

Tensor affine_layer_norm(const Tensor& h, const ParamView& pv, const std::string& prefix) {
    return add(mul(layer_norm(h), pv(prefix + ".g")), pv(prefix + ".b"));
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const ParamView& pv,
                            const std::string& prefix, int n_heads) {
    Tensor q = add(matmul(q_in, pv(prefix + ".wq")), pv(prefix + ".bq"));
    Tensor k = add(matmul(kv_in, pv(prefix + ".wk")), pv(prefix + ".bk"));
    Tensor v = add(matmul(kv_in, pv(prefix + ".wv")), pv(prefix + ".bv"));
    const Eigen::Index n_q = q.rows();
    const Eigen::Index n_kv = k.rows();
    const Eigen::Index dh = q.cols() / n_heads;
    Tensor merged;
    for (int h = 0; h < n_heads; ++h) {
        Tensor qh = slice(q, 0, n_q, h * dh, dh);
        Tensor kh = slice(k, 0, n_kv, h * dh, dh);
        Tensor vh = slice(v, 0, n_kv, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor oh = matmul(softmax(scores), vh);
        merged = h == 0 ? oh : concat(merged, oh, 1);
    }
    return add(matmul(merged, pv(prefix + ".wo")), pv(prefix + ".bo"));
}

Tensor feed_forward(const Tensor& h, const ParamView& pv, const std::string& prefix) {
    Tensor u = gelu(add(matmul(h, pv(prefix + ".w1")), pv(prefix + ".b1")));
    return add(matmul(u, pv(prefix + ".w2")), pv(prefix + ".b2"));
}

// Self-attention, cross-attention against the initial combined embedding,
// and a feed-forward block, all pre-norm with residuals.
Tensor domain_stack(Tensor h, const Tensor& e0, const ParamView& pv, const std::string& d,
                    int n_heads) {
    Tensor u = affine_layer_norm(h, pv, d + ".ln_self");
    h = add(h, multi_head_attention(u, u, pv, d + ".self_attn", n_heads));
    Tensor q = affine_layer_norm(h, pv, d + ".ln_cross_q");
    Tensor kv = affine_layer_norm(e0, pv, d + ".ln_cross_kv");
    h = add(h, multi_head_attention(q, kv, pv, d + ".cross_attn", n_heads));
    Tensor f = affine_layer_norm(h, pv, d + ".ln_ffn");
    return add(h, feed_forward(f, pv, d + ".ffn"));
}

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_tensor_f32(std::ostream& os, const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            float f = static_cast<float>(m(i, j));
            os.write(reinterpret_cast<const char*>(&f), sizeof(f));
        }
}

Eigen::MatrixXd read_tensor_f32(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            float f = 0.0f;
            is.read(reinterpret_cast<char*>(&f), sizeof(f));
            m(i, j) = static_cast<double>(f);
        }
    return m;
}

constexpr char kMagic[4] = {'T', 'B', 'S', 'C'};
constexpr std::uint32_t kVersion = 1;

} // namespace

void ModelConfig::validate() const {
    if (hidden_size <= 0 || hidden_size % 2 != 0)
        throw ConfigError("hidden_size must be positive and even");
    if (n_heads <= 0 || hidden_size % n_heads != 0)
        throw ConfigError("hidden_size must be divisible by n_heads");
    if (n_blocks <= 0) throw ConfigError("n_blocks must be positive");
    if (atom_vocab != kAtomVocab) throw ConfigError("atom_vocab must be 9");
    if (max_len <= 0) throw ConfigError("max_len must be positive");
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config = config;
    auto specs = param_specs(config);
    p.names.reserve(specs.size());
    p.tensors.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        Eigen::MatrixXd value;
        if (s.ones)
            value = Eigen::MatrixXd::Ones(s.rows, s.cols);
        else if (s.init_std == 0.0)
            value = Eigen::MatrixXd::Zero(s.rows, s.cols);
        else
            value = s.init_std * Rng::stream(seed, "init", i).gaussian_matrix(s.rows, s.cols);
        p.names.push_back(s.name);
        p.tensors.emplace_back(std::move(value), true);
    }
    return p;
}

ModelParams ModelParams::clone() const {
    ModelParams p;
    p.config = config;
    p.names = names;
    p.tensors.reserve(tensors.size());
    for (const auto& t : tensors) p.tensors.emplace_back(t.value(), true);
    return p;
}

const Tensor& ModelParams::at(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return tensors[i];
    throw std::invalid_argument("unknown model parameter: " + std::string(name));
}

Eigen::RowVectorXd time_encoding(double t, int hidden_size) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("time_encoding: t outside [0,1]");
    const int half = hidden_size / 2;
    Eigen::RowVectorXd out(hidden_size);
    for (int k = 0; k < half; ++k) {
        double f = half == 1 ? 1.0 : std::pow(10.0, 3.0 * k / (half - 1));
        double phase = 2.0 * std::numbers::pi * f * t;
        out(2 * k) = std::sin(phase);
        out(2 * k + 1) = std::cos(phase);
    }
    return out;
}

Eigen::RowVectorXd positional_encoding(int pos, int hidden_size, bool enabled) {
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(hidden_size);
    if (!enabled) return out;
    if (pos < 0) throw std::invalid_argument("positional_encoding: negative position");
    for (int i = 0; i < hidden_size / 2; ++i) {
        double denom = std::pow(10000.0, 2.0 * i / hidden_size);
        out(2 * i) = std::sin(pos / denom);
        out(2 * i + 1) = std::cos(pos / denom);
    }
    return out;
}

ModelOutput model_forward(const ModelParams& params, const Tensor& coords,
                          const std::vector<int>& types, double t) {
    const auto& c = params.config;
    const Eigen::Index n = coords.rows();
    if (coords.cols() != 3) throw std::invalid_argument("model_forward: coords must be Nx3");
    if (n < 1 || n > c.max_len)
        throw DataError("model_forward: atom count " + std::to_string(n) +
                        " outside [1, " + std::to_string(c.max_len) + "]");
    if (static_cast<Eigen::Index>(types.size()) != n)
        throw std::invalid_argument("model_forward: one type per atom required");
    for (int a : types)
        if (a < 0 || a >= c.atom_vocab) throw DataError("model_forward: type outside vocabulary");

    ParamView pv(params);
    Eigen::MatrixXd pos_rows(n, c.hidden_size);
    for (Eigen::Index i = 0; i < n; ++i)
        pos_rows.row(i) = positional_encoding(static_cast<int>(i), c.hidden_size,
                                              c.use_positional_encoding);

    Tensor e0 = add(add(matmul(coords, pv("coord_encoder.w")), gather_rows(pv("type_embedding"), types)),
                    add(Tensor(pos_rows), Tensor::row(time_encoding(t, c.hidden_size))));

    Tensor h = e0;
    for (int b = 0; b < c.n_blocks; ++b) {
        std::string p = "block" + std::to_string(b);
        Tensor u = affine_layer_norm(h, pv, p + ".ln1");
        h = add(h, multi_head_attention(u, u, pv, p + ".attn", c.n_heads));
        Tensor f = affine_layer_norm(h, pv, p + ".ln2");
        h = add(h, feed_forward(f, pv, p + ".ffn"));
    }

    Tensor hc = domain_stack(h, e0, pv, "coord_stack", c.n_heads);
    Tensor ht = domain_stack(h, e0, pv, "type_stack", c.n_heads);

    ModelOutput out;
    Tensor yc = affine_layer_norm(hc, pv, "coord_head.ln");
    // the endpoint estimate is anchored to the current state with a
    // correction scaled by 1 - t: since x1 - x_t = (1-t) * (x1 - eps), the
    // head regresses a bounded target at every t and the 1/(1-t)^2 loss
    // weight keeps its training signal uniformly conditioned
    out.coords = add(coords, scale(matmul(gelu(matmul(yc, pv("coord_head.w1"))),
                                          pv("coord_head.w2")),
                                   1.0 - t));
    Tensor yt = affine_layer_norm(ht, pv, "type_head.ln");
    out.logits = add(matmul(gelu(add(matmul(yt, pv("type_head.w1")), pv("type_head.b1"))),
                            pv("type_head.w2")),
                     pv("type_head.b2"));
    return out;
}

// ---- checkpoints -----------------------------------------------------------

void save_checkpoint(const std::string& path, const ModelParams& params, const ModelParams* ema) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    const auto& c = params.config;
    write_u32(os, static_cast<std::uint32_t>(c.hidden_size));
    write_u32(os, static_cast<std::uint32_t>(c.n_blocks));
    write_u32(os, static_cast<std::uint32_t>(c.n_heads));
    write_u32(os, static_cast<std::uint32_t>(c.atom_vocab));
    write_u32(os, static_cast<std::uint32_t>(c.max_len));
    std::uint8_t flags[4] = {static_cast<std::uint8_t>(c.use_positional_encoding ? 1 : 0),
                             static_cast<std::uint8_t>(ema ? 1 : 0), 0, 0};
    os.write(reinterpret_cast<const char*>(flags), 4);
    for (const auto& t : params.tensors) write_tensor_f32(os, t.value());
    if (ema) {
        if (!(ema->config == c)) throw std::invalid_argument("EMA shadow config mismatch");
        for (const auto& t : ema->tensors) write_tensor_f32(os, t.value());
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a checkpoint file: " + path);
    if (read_u32(is) != kVersion) throw DataError("unsupported checkpoint version");
    ModelConfig c;
    c.hidden_size = static_cast<int>(read_u32(is));
    c.n_blocks = static_cast<int>(read_u32(is));
    c.n_heads = static_cast<int>(read_u32(is));
    c.atom_vocab = static_cast<int>(read_u32(is));
    c.max_len = static_cast<int>(read_u32(is));
    std::uint8_t flags[4] = {};
    is.read(reinterpret_cast<char*>(flags), 4);
    if (!is) throw DataError("truncated checkpoint header: " + path);
    c.use_positional_encoding = flags[0] != 0;
    bool has_ema = flags[1] != 0;
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("invalid checkpoint config: ") + e.what());
    }

    auto read_params = [&] {
        ModelParams p;
        p.config = c;
        for (const auto& s : param_specs(c)) {
            p.names.push_back(s.name);
            p.tensors.emplace_back(read_tensor_f32(is, s.rows, s.cols), true);
        }
        if (!is) throw DataError("truncated checkpoint payload: " + path);
        return p;
    };
    Checkpoint ck;
    ck.params = read_params();
    if (has_ema) ck.ema = read_params();
    return ck;
}

// ---- predictors ------------------------------------------------------------

Eigen::MatrixXd EndpointPredictor::bounds_loss_gradient(const Eigen::MatrixXd& x,
                                                        const std::vector<int>& types, double t,
                                                        const BoundsMatrix& bm, bool) const {
    Eigen::MatrixXd x1, p1;
    predict(x, types, t, x1, p1);
    return phys_loss_grad(x1, bm);
}

void ModelPredictor::predict(const Eigen::MatrixXd& x, const std::vector<int>& types, double t,
                             Eigen::MatrixXd& x1, Eigen::MatrixXd& p1) const {
    NoGradGuard ng;
    ModelOutput out = model_forward(params_, Tensor(x), types, t);
    x1 = out.coords.value();
    p1 = softmax(out.logits).value();
}

Eigen::MatrixXd ModelPredictor::bounds_loss_gradient(const Eigen::MatrixXd& x,
                                                     const std::vector<int>& types, double t,
                                                     const BoundsMatrix& bm,
                                                     bool through_model) const {
    if (!through_model) {
        Eigen::MatrixXd x1, p1;
        predict(x, types, t, x1, p1);
        return phys_loss_grad(x1, bm);
    }
    Tensor coords(x, true);
    ModelOutput out = model_forward(params_, coords, types, t);
    Gradients g = backward(phys_loss(out.coords, bm));
    return g.wrt(coords);
}

} // namespace atomflow
