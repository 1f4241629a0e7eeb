#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ecgnoise/nn.hpp"

using namespace ecgnoise;

namespace {

Tensor3 tensor1d(std::vector<double> values) {
    Tensor3 t(1, 1, int(values.size()));
    t.data = std::move(values);
    return t;
}

ConvLayer conv_layer(int c_in, int c_out, std::vector<double> w, std::vector<double> b, int stride,
                     int padding = 0) {
    ConvLayer layer;
    layer.in_channels = c_in;
    layer.out_channels = c_out;
    layer.kernel = int(w.size()) / (c_in * c_out);
    layer.stride = stride;
    layer.padding = padding;
    layer.weights = std::move(w);
    layer.bias = std::move(b);
    return layer;
}

/// Independent nested-loop convolution oracle (no shared code with the
/// implementation).
Tensor3 conv_oracle(const Tensor3& x, const ConvLayer& layer) {
    const int t_out = (x.len + 2 * layer.padding - layer.kernel) / layer.stride + 1;
    Tensor3 out(x.batch, layer.out_channels, t_out);
    for (int b = 0; b < x.batch; ++b) {
        for (int o = 0; o < layer.out_channels; ++o) {
            for (int t = 0; t < t_out; ++t) {
                double acc = layer.bias[o];
                for (int i = 0; i < layer.in_channels; ++i) {
                    for (int k = 0; k < layer.kernel; ++k) {
                        const int j = t * layer.stride + k - layer.padding;
                        if (j < 0 || j >= x.len) continue;
                        acc += layer.weights[(std::size_t(o) * layer.in_channels + i) * layer.kernel + k] *
                               x.at(b, i, j);
                    }
                }
                out.at(b, o, t) = acc;
            }
        }
    }
    return out;
}

Tensor3 random_tensor(int b, int c, int t, std::mt19937_64& rng) {
    Tensor3 x(b, c, t);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : x.data) v = dist(rng);
    return x;
}

ConvLayer random_layer(int c_in, int c_out, int kernel, int stride, int padding, bool transposed,
                       std::mt19937_64& rng) {
    ConvLayer layer;
    layer.in_channels = c_in;
    layer.out_channels = c_out;
    layer.kernel = kernel;
    layer.stride = stride;
    layer.padding = padding;
    layer.transposed = transposed;
    layer.weights.resize(layer.weight_count());
    layer.bias.resize(c_out);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& w : layer.weights) w = dist(rng);
    for (double& b : layer.bias) b = dist(rng);
    return layer;
}

double inner(const Tensor3& a, const Tensor3& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += a.data[i] * b.data[i];
    return sum;
}

}  // namespace

TEST_CASE("conv1d identity kernel and strided hand example") {
    const Tensor3 x = tensor1d({1, 2, 3, 4});
    const Tensor3 id = conv1d_forward(x, conv_layer(1, 1, {1.0}, {0.0}, 1));
    CHECK(id.data == std::vector<double>{1, 2, 3, 4});

    const Tensor3 strided = conv1d_forward(x, conv_layer(1, 1, {1.0, 1.0}, {0.0}, 2));
    CHECK(strided.data == std::vector<double>{3, 7});

    const Tensor3 constant = conv1d_forward(x, conv_layer(1, 1, {0.0, 0.0}, {5.0}, 1));
    CHECK(constant.data == std::vector<double>{5, 5, 5});
}

TEST_CASE("conv1d matches the nested-loop oracle on random shapes") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 40; ++trial) {
        const int c_in = 1 + int(rng() % 3);
        const int c_out = 1 + int(rng() % 3);
        const int kernel = 1 + int(rng() % 4);
        const int stride = 1 + int(rng() % 3);
        const int padding = int(rng() % 3);
        const int t_in = kernel + int(rng() % 12);
        const ConvLayer layer = random_layer(c_in, c_out, kernel, stride, padding, false, rng);
        const Tensor3 x = random_tensor(1 + int(rng() % 3), c_in, t_in, rng);
        const Tensor3 got = conv1d_forward(x, layer);
        const Tensor3 expected = conv_oracle(x, layer);
        REQUIRE(got.same_shape(expected));
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            CHECK(got.data[i] == doctest::Approx(expected.data[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("tconv1d identity and scatter hand example") {
    const Tensor3 x = tensor1d({1, 2});
    ConvLayer id = conv_layer(1, 1, {1.0}, {0.0}, 1);
    id.transposed = true;
    CHECK(tconv1d_forward(x, id).data == std::vector<double>{1, 2});

    ConvLayer scatter = conv_layer(1, 1, {1.0, 1.0}, {0.0}, 2);
    scatter.transposed = true;
    CHECK(tconv1d_forward(x, scatter).data == std::vector<double>{1, 1, 2, 2});
}

TEST_CASE("conv/tconv with shared weights are adjoint") {
    std::mt19937_64 rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int c_in = 1 + int(rng() % 3);
        const int c_out = 1 + int(rng() % 3);
        const int kernel = 1 + int(rng() % 4);
        const int stride = 1 + int(rng() % 3);
        const int padding = int(rng() % 2);
        const int t_in = kernel + int(rng() % 10);
        const int batch = 1 + int(rng() % 2);

        ConvLayer conv = random_layer(c_in, c_out, kernel, stride, padding, false, rng);
        std::fill(conv.bias.begin(), conv.bias.end(), 0.0);

        ConvLayer tconv = conv;  // identical flat weights
        tconv.transposed = true;
        tconv.in_channels = c_out;
        tconv.out_channels = c_in;
        tconv.bias.assign(c_in, 0.0);
        tconv.output_padding = (t_in + 2 * padding - kernel) % stride;

        const Tensor3 x = random_tensor(batch, c_in, t_in, rng);
        const Tensor3 cx = conv1d_forward(x, conv);
        const Tensor3 y = random_tensor(batch, c_out, cx.len, rng);
        const Tensor3 ty = tconv1d_forward(y, tconv);
        REQUIRE(ty.same_shape(x));
        worst = std::max(worst, std::abs(inner(cx, y) - inner(x, ty)));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("tconv inverts the conv shape formula") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int kernel = 1 + int(rng() % 5);
        const int stride = 1 + int(rng() % 3);
        const int t_in = kernel + int(rng() % 20);
        ConvLayer conv = random_layer(1, 1, kernel, stride, 0, false, rng);
        const Tensor3 x = random_tensor(1, 1, t_in, rng);
        const Tensor3 code = conv1d_forward(x, conv);

        ConvLayer tconv = conv;
        tconv.transposed = true;
        const Tensor3 rebuilt = tconv1d_forward(code, tconv);
        CHECK(rebuilt.len <= t_in);
        if ((t_in - kernel) % stride == 0) CHECK(rebuilt.len == t_in);
    }
}

TEST_CASE("conv backward identity and single-weight oracle") {
    const Tensor3 x = tensor1d({1, 2, 3, 4});
    const ConvLayer id = conv_layer(1, 1, {1.0}, {0.0}, 1);
    const Tensor3 grad_out = tensor1d({0.5, -1.0, 2.0, 0.25});
    const ConvGrads grads = conv1d_backward(x, id, grad_out);
    CHECK(grads.grad_input.data == grad_out.data);

    const ConvLayer single = conv_layer(1, 1, {3.0}, {0.0}, 1);
    const ConvGrads sg = conv1d_backward(x, single, grad_out);
    double expected_gw = 0.0;
    for (int i = 0; i < 4; ++i) expected_gw += x.data[i] * grad_out.data[i];
    CHECK(sg.grad_weights[0] == doctest::Approx(expected_gw));
    CHECK(sg.grad_bias[0] == doctest::Approx(0.5 - 1.0 + 2.0 + 0.25));
}

TEST_CASE("conv and tconv gradients match central finite differences") {
    std::mt19937_64 rng(4);
    for (bool transposed : {false, true}) {
        for (int trial = 0; trial < 6; ++trial) {
            const int c_in = 1 + int(rng() % 2);
            const int c_out = 1 + int(rng() % 2);
            const int kernel = 1 + int(rng() % 3);
            const int stride = 1 + int(rng() % 2);
            ConvLayer layer = random_layer(c_in, c_out, kernel, stride, 0, transposed, rng);
            const Tensor3 x = random_tensor(2, c_in, 8, rng);

            auto forward = [&](const ConvLayer& l, const Tensor3& input) {
                return transposed ? tconv1d_forward(input, l) : conv1d_forward(input, l);
            };
            // Scalar objective: 0.5 * sum(out^2); d/d_out = out.
            const Tensor3 out = forward(layer, x);
            const ConvGrads grads = transposed ? tconv1d_backward(x, layer, out)
                                               : conv1d_backward(x, layer, out);

            std::vector<double> params = layer.weights;
            params.insert(params.end(), layer.bias.begin(), layer.bias.end());
            std::vector<double> analytic = grads.grad_weights;
            analytic.insert(analytic.end(), grads.grad_bias.begin(), grads.grad_bias.end());
            // Input gradient rides along as extra parameters.
            params.insert(params.end(), x.data.begin(), x.data.end());
            analytic.insert(analytic.end(), grads.grad_input.data.begin(),
                            grads.grad_input.data.end());

            auto loss = [&](std::span<const double> p) {
                ConvLayer probe = layer;
                std::copy_n(p.begin(), probe.weights.size(), probe.weights.begin());
                std::copy_n(p.begin() + probe.weights.size(), probe.bias.size(),
                            probe.bias.begin());
                Tensor3 input = x;
                std::copy_n(p.begin() + probe.weights.size() + probe.bias.size(),
                            input.data.size(), input.data.begin());
                const Tensor3 y = forward(probe, input);
                double sum = 0.0;
                for (double v : y.data) sum += 0.5 * v * v;
                return sum;
            };
            const double err = grad_check(loss, params, analytic, 1e-4);
            CHECK(err < 1e-5);
        }
    }
}

TEST_CASE("relu forward, tie rule and idempotence") {
    const Tensor3 x = tensor1d({-1, 0, 2});
    CHECK(relu(x).data == std::vector<double>{0, 0, 2});

    const Tensor3 g = tensor1d({1, 1, 1});
    CHECK(relu_backward(x, g).data == std::vector<double>{0, 0, 1});

    CHECK(relu(relu(x)).data == relu(x).data);
}

TEST_CASE("mse hand example and symmetry") {
    const Tensor3 same = tensor1d({1, 2, 3});
    auto [zero_loss, zero_grad] = mse_loss(same, same);
    CHECK(zero_loss == 0.0);
    for (double v : zero_grad.data) CHECK(v == 0.0);

    const Tensor3 pred = tensor1d({1, 1});
    const Tensor3 target = tensor1d({0, 2});
    auto [loss, grad] = mse_loss(pred, target);
    CHECK(loss == doctest::Approx(1.0));
    CHECK(grad.data[0] == doctest::Approx(1.0));
    CHECK(grad.data[1] == doctest::Approx(-1.0));

    CHECK(mse_loss(pred, target).first == mse_loss(target, pred).first);
}

TEST_CASE("adamw first step, zero-gradient fixed point and decay term") {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.eps = 0.0;
    cfg.weight_decay = 0.0;

    std::vector<double> theta{1.0};
    AdamWState state;
    adamw_step(theta, std::vector<double>{1.0}, cfg, state);
    CHECK(theta[0] == doctest::Approx(0.9));
    CHECK(state.step_count == 1);

    theta = {1.0};
    state = {};
    for (int i = 0; i < 10; ++i) adamw_step(theta, std::vector<double>{0.0}, cfg, state);
    CHECK(theta[0] == 1.0);

    theta = {1.0};
    state = {};
    cfg.weight_decay = 0.5;
    adamw_step(theta, std::vector<double>{0.0}, cfg, state);
    CHECK(theta[0] == doctest::Approx(0.95));
}

TEST_CASE("adamw with lr zero is the identity; non-finite gradients abort") {
    AdamWConfig cfg;
    cfg.lr = 0.0;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> theta(16), grads(16);
    for (double& v : theta) v = dist(rng);
    const std::vector<double> saved = theta;
    AdamWState state;
    for (int step = 0; step < 4; ++step) {
        for (double& g : grads) g = dist(rng);
        adamw_step(theta, grads, cfg, state);
    }
    CHECK(theta == saved);

    grads[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adamw_step(theta, grads, AdamWConfig{}, state), std::runtime_error);
}

TEST_CASE("grad_check pins a linear model exactly and flags corruption") {
    // loss(p) = 3*p0 + p1^2
    auto loss = [](std::span<const double> p) { return 3.0 * p[0] + p[1] * p[1]; };
    std::vector<double> params{2.0, 1.5};
    const std::vector<double> analytic{3.0, 3.0};
    CHECK(grad_check(loss, params, analytic, 1e-4) < 1e-9);

    const std::vector<double> corrupted{3.0 * 1.01, 3.0};
    CHECK(grad_check(loss, params, corrupted, 1e-4) > 1e-3);
}
