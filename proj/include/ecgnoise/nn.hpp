#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace ecgnoise {

/// Dense (batch, channels, time) tensor of doubles, batch-major layout.
struct Tensor3 {
    int batch = 0;
    int channels = 0;
    int len = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int b, int c, int t) : batch(b), channels(c), len(t), data(std::size_t(b) * c * t, 0.0) {}

    double& at(int b, int c, int t) { return data[(std::size_t(b) * channels + c) * len + t]; }
    double at(int b, int c, int t) const { return data[(std::size_t(b) * channels + c) * len + t]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor3& o) const {
        return batch == o.batch && channels == o.channels && len == o.len;
    }
};

/// 1-D convolution layer parameters. For a regular convolution the weight
/// layout is [out][in][k]; for a transposed convolution it is [in][out][k]
/// so that a conv/tconv pair sharing the same flat weight array are exact
/// adjoints of each other.
struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int output_padding = 0;  // transposed only, < stride
    bool transposed = false;
    std::vector<double> weights;
    std::vector<double> bias;

    std::size_t weight_count() const {
        return std::size_t(in_channels) * out_channels * kernel;
    }
};

struct ConvGrads {
    Tensor3 grad_input;
    std::vector<double> grad_weights;
    std::vector<double> grad_bias;
};

/// Output length of a regular convolution: floor((T + 2p - K)/s) + 1.
int conv1d_out_len(int in_len, const ConvLayer& layer);
/// Output length of a transposed convolution: (T-1)*s + K - 2p + op.
int tconv1d_out_len(int in_len, const ConvLayer& layer);

Tensor3 conv1d_forward(const Tensor3& input, const ConvLayer& layer);
Tensor3 tconv1d_forward(const Tensor3& input, const ConvLayer& layer);

ConvGrads conv1d_backward(const Tensor3& input, const ConvLayer& layer, const Tensor3& grad_out);
ConvGrads tconv1d_backward(const Tensor3& input, const ConvLayer& layer, const Tensor3& grad_out);

Tensor3 relu(const Tensor3& x);
/// Subgradient at 0 is 0: gradient passes only where x > 0.
Tensor3 relu_backward(const Tensor3& x, const Tensor3& grad_out);

/// Mean squared error over all elements and its gradient w.r.t. pred.
std::pair<double, Tensor3> mse_loss(const Tensor3& pred, const Tensor3& target);

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Per-parameter-array optimizer state. Moment arrays are lazily sized on
/// the first step.
struct AdamWState {
    long step_count = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
};

/// Decoupled-weight-decay Adam update with bias correction:
///   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
///   theta <- theta - lr*(m_hat/(sqrt(v_hat)+eps) + wd*theta)
/// Throws on non-finite gradients.
void adamw_step(std::span<double> params, std::span<const double> grads,
                const AdamWConfig& config, AdamWState& state);

/// Max over parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// where numeric is the central difference (f(p+h) - f(p-h)) / (2h).
/// `loss` is re-evaluated with perturbed parameters; `params` is restored.
double grad_check(const std::function<double(std::span<const double>)>& loss,
                  std::span<double> params, std::span<const double> analytic_grad, double h);

}  // namespace ecgnoise
