#include "ecgnoise/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ecgnoise {

namespace {

void check_conv_input(const Tensor3& input, const ConvLayer& layer) {
    if (input.channels != layer.in_channels) {
        throw std::invalid_argument("conv layer expects " + std::to_string(layer.in_channels) +
                                    " input channels, got " + std::to_string(input.channels));
    }
    if (layer.weights.size() != layer.weight_count() ||
        layer.bias.size() != std::size_t(layer.out_channels)) {
        throw std::invalid_argument("conv layer parameter arrays do not match its shape");
    }
}

}  // namespace

int conv1d_out_len(int in_len, const ConvLayer& layer) {
    return (in_len + 2 * layer.padding - layer.kernel) / layer.stride + 1;
}

int tconv1d_out_len(int in_len, const ConvLayer& layer) {
    return (in_len - 1) * layer.stride + layer.kernel - 2 * layer.padding + layer.output_padding;
}

Tensor3 conv1d_forward(const Tensor3& input, const ConvLayer& layer) {
    check_conv_input(input, layer);
    const int t_out = conv1d_out_len(input.len, layer);
    if (t_out < 1) {
        throw std::invalid_argument("conv output length " + std::to_string(t_out) +
                                    " < 1 for input length " + std::to_string(input.len));
    }
    Tensor3 out(input.batch, layer.out_channels, t_out);
    const int K = layer.kernel;
    for (int b = 0; b < input.batch; ++b) {
        for (int o = 0; o < layer.out_channels; ++o) {
            for (int t = 0; t < t_out; ++t) {
                double acc = layer.bias[o];
                const int base = t * layer.stride - layer.padding;
                for (int i = 0; i < layer.in_channels; ++i) {
                    const double* w = &layer.weights[(std::size_t(o) * layer.in_channels + i) * K];
                    for (int k = 0; k < K; ++k) {
                        const int j = base + k;
                        if (j >= 0 && j < input.len) acc += w[k] * input.at(b, i, j);
                    }
                }
                out.at(b, o, t) = acc;
            }
        }
    }
    return out;
}

Tensor3 tconv1d_forward(const Tensor3& input, const ConvLayer& layer) {
    check_conv_input(input, layer);
    const int t_out = tconv1d_out_len(input.len, layer);
    if (t_out < 1) {
        throw std::invalid_argument("tconv output length " + std::to_string(t_out) +
                                    " < 1 for input length " + std::to_string(input.len));
    }
    Tensor3 out(input.batch, layer.out_channels, t_out);
    const int K = layer.kernel;
    for (int b = 0; b < input.batch; ++b) {
        for (int o = 0; o < layer.out_channels; ++o)
            for (int u = 0; u < t_out; ++u) out.at(b, o, u) = layer.bias[o];
        for (int i = 0; i < layer.in_channels; ++i) {
            for (int o = 0; o < layer.out_channels; ++o) {
                const double* w = &layer.weights[(std::size_t(i) * layer.out_channels + o) * K];
                for (int t = 0; t < input.len; ++t) {
                    const double x = input.at(b, i, t);
                    const int base = t * layer.stride - layer.padding;
                    for (int k = 0; k < K; ++k) {
                        const int u = base + k;
                        if (u >= 0 && u < t_out) out.at(b, o, u) += w[k] * x;
                    }
                }
            }
        }
    }
    return out;
}

ConvGrads conv1d_backward(const Tensor3& input, const ConvLayer& layer, const Tensor3& grad_out) {
    check_conv_input(input, layer);
    const int t_out = conv1d_out_len(input.len, layer);
    if (grad_out.batch != input.batch || grad_out.channels != layer.out_channels ||
        grad_out.len != t_out) {
        throw std::invalid_argument("conv1d_backward: grad_out shape does not match forward output");
    }
    ConvGrads grads;
    grads.grad_input = Tensor3(input.batch, input.channels, input.len);
    grads.grad_weights.assign(layer.weights.size(), 0.0);
    grads.grad_bias.assign(layer.bias.size(), 0.0);
    const int K = layer.kernel;
    for (int b = 0; b < input.batch; ++b) {
        for (int o = 0; o < layer.out_channels; ++o) {
            for (int t = 0; t < t_out; ++t) {
                const double g = grad_out.at(b, o, t);
                grads.grad_bias[o] += g;
                const int base = t * layer.stride - layer.padding;
                for (int i = 0; i < layer.in_channels; ++i) {
                    const double* w = &layer.weights[(std::size_t(o) * layer.in_channels + i) * K];
                    double* gw = &grads.grad_weights[(std::size_t(o) * layer.in_channels + i) * K];
                    for (int k = 0; k < K; ++k) {
                        const int j = base + k;
                        if (j < 0 || j >= input.len) continue;
                        gw[k] += g * input.at(b, i, j);
                        grads.grad_input.at(b, i, j) += g * w[k];
                    }
                }
            }
        }
    }
    return grads;
}

ConvGrads tconv1d_backward(const Tensor3& input, const ConvLayer& layer, const Tensor3& grad_out) {
    check_conv_input(input, layer);
    const int t_out = tconv1d_out_len(input.len, layer);
    if (grad_out.batch != input.batch || grad_out.channels != layer.out_channels ||
        grad_out.len != t_out) {
        throw std::invalid_argument("tconv1d_backward: grad_out shape does not match forward output");
    }
    ConvGrads grads;
    grads.grad_input = Tensor3(input.batch, input.channels, input.len);
    grads.grad_weights.assign(layer.weights.size(), 0.0);
    grads.grad_bias.assign(layer.bias.size(), 0.0);
    const int K = layer.kernel;
    for (int b = 0; b < input.batch; ++b) {
        for (int o = 0; o < layer.out_channels; ++o)
            for (int u = 0; u < t_out; ++u) grads.grad_bias[o] += grad_out.at(b, o, u);
        for (int i = 0; i < layer.in_channels; ++i) {
            for (int o = 0; o < layer.out_channels; ++o) {
                const double* w = &layer.weights[(std::size_t(i) * layer.out_channels + o) * K];
                double* gw = &grads.grad_weights[(std::size_t(i) * layer.out_channels + o) * K];
                for (int t = 0; t < input.len; ++t) {
                    const double x = input.at(b, i, t);
                    double acc = 0.0;
                    const int base = t * layer.stride - layer.padding;
                    for (int k = 0; k < K; ++k) {
                        const int u = base + k;
                        if (u < 0 || u >= t_out) continue;
                        const double g = grad_out.at(b, o, u);
                        gw[k] += x * g;
                        acc += w[k] * g;
                    }
                    grads.grad_input.at(b, i, t) += acc;
                }
            }
        }
    }
    return grads;
}

Tensor3 relu(const Tensor3& x) {
    Tensor3 y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor3 relu_backward(const Tensor3& x, const Tensor3& grad_out) {
    if (!x.same_shape(grad_out)) throw std::invalid_argument("relu_backward: shape mismatch");
    Tensor3 grad_in = grad_out;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (!(x.data[i] > 0.0)) grad_in.data[i] = 0.0;
    }
    return grad_in;
}

std::pair<double, Tensor3> mse_loss(const Tensor3& pred, const Tensor3& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
    const double n = static_cast<double>(pred.size());
    Tensor3 grad(pred.batch, pred.channels, pred.len);
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        loss += d * d;
        grad.data[i] = 2.0 * d / n;
    }
    return {loss / n, grad};
}

void adamw_step(std::span<double> params, std::span<const double> grads,
                const AdamWConfig& config, AdamWState& state) {
    if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: size mismatch");
    if (state.first_moment.empty()) {
        state.first_moment.assign(params.size(), 0.0);
        state.second_moment.assign(params.size(), 0.0);
    }
    if (state.first_moment.size() != params.size()) {
        throw std::invalid_argument("adamw_step: optimizer state does not match parameters");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw std::runtime_error("adamw_step: non-finite gradient");
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, double(state.step_count));
    const double bc2 = 1.0 - std::pow(config.beta2, double(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = config.beta1 * m + (1.0 - config.beta1) * grads[i];
        v = config.beta2 * v + (1.0 - config.beta2) * grads[i] * grads[i];
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        // m_hat == 0 implies a zero update even when eps == 0 and v_hat == 0.
        const double adaptive = m_hat == 0.0 ? 0.0 : m_hat / (std::sqrt(v_hat) + config.eps);
        params[i] -= config.lr * (adaptive + config.weight_decay * params[i]);
    }
}

double grad_check(const std::function<double(std::span<const double>)>& loss,
                  std::span<double> params, std::span<const double> analytic_grad, double h) {
    if (params.size() != analytic_grad.size()) {
        throw std::invalid_argument("grad_check: gradient size mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = loss(params);
        params[i] = saved - h;
        const double down = loss(params);
        params[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic_grad[i];
        const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace ecgnoise
