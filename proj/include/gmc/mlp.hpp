// Minimal dense MLP with reverse-mode gradients and an Adam optimizer.
//
// Everything runs batched: a forward pass maps a B x in matrix to a B x out
// matrix and records the activations needed for the backward pass. Rows are
// independent samples, so per-point gradients from the field modules reduce
// to one matrix product per layer.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace gmc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kRelu, kTanh };

struct MlpLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

struct Mlp {
    std::vector<int> sizes;  // input, hidden..., output
    std::vector<MlpLayer> layers;
    Activation activation = Activation::kRelu;

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }
};

// Kaiming-uniform hidden layers; the final layer is zeroed so a fresh net is
// the constant function x -> 0 (the field modules rely on this to start at
// the identity transform).
inline Mlp make_mlp(const std::vector<int>& sizes, std::mt19937_64& rng,
                    Activation act = Activation::kRelu, bool zero_final = true) {
    if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output sizes");
    for (int s : sizes) {
        if (s <= 0) throw std::invalid_argument("make_mlp: layer sizes must be positive");
    }
    Mlp net;
    net.sizes = sizes;
    net.activation = act;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        MlpLayer layer;
        const int fan_in = sizes[l];
        const int fan_out = sizes[l + 1];
        layer.weight.resize(fan_out, fan_in);
        layer.bias = Vector::Zero(fan_out);
        const bool final_layer = (l + 2 == sizes.size());
        if (final_layer && zero_final) {
            layer.weight.setZero();
        } else {
            const double bound = std::sqrt(6.0 / fan_in);
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (int r = 0; r < fan_out; ++r)
                for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = dist(rng);
        }
        net.layers.push_back(std::move(layer));
    }
    return net;
}

// Activations captured by forward; one entry per layer input plus the output.
struct MlpTape {
    std::vector<Matrix> inputs;  // inputs[l] = B x sizes[l], pre-activation applied
    Matrix output;               // B x out
};

struct MlpGrads {
    std::vector<MlpLayer> layers;  // same shapes as the net
    Matrix input;                  // B x in

    void add(const MlpGrads& other) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            layers[l].weight += other.layers[l].weight;
            layers[l].bias += other.layers[l].bias;
        }
    }
};

inline MlpGrads zero_grads_like(const Mlp& net) {
    MlpGrads g;
    for (const auto& l : net.layers) {
        g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()),
                            Vector::Zero(l.bias.size())});
    }
    return g;
}

inline Matrix apply_activation(Activation act, const Matrix& z) {
    if (act == Activation::kRelu) return z.cwiseMax(0.0);
    return z.array().tanh().matrix();
}

// Forward over a batch. X is B x input_size.
inline MlpTape mlp_forward(const Mlp& net, const Matrix& x) {
    if (x.cols() != net.input_size()) {
        throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.cols()) +
                                    " columns, net expects " + std::to_string(net.input_size()));
    }
    MlpTape tape;
    Matrix h = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        tape.inputs.push_back(h);
        Matrix z = (h * net.layers[l].weight.transpose()).rowwise() + net.layers[l].bias.transpose();
        if (l + 1 < net.layers.size()) {
            h = apply_activation(net.activation, z);
        } else {
            h = std::move(z);
        }
    }
    tape.output = h;
    return tape;
}

// Backward for an upstream gradient dL/d(output), B x out. Weight gradients
// are summed over the batch; the per-row input gradient is returned too.
inline MlpGrads mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& upstream) {
    if (tape.inputs.size() != net.layers.size()) {
        throw std::invalid_argument("mlp_backward: tape does not match network depth");
    }
    if (upstream.rows() != tape.output.rows() || upstream.cols() != tape.output.cols()) {
        throw std::invalid_argument("mlp_backward: upstream gradient shape mismatch");
    }
    MlpGrads grads = zero_grads_like(net);
    Matrix delta = upstream;  // dL/dz of current layer
    for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
        const Matrix& in = tape.inputs[l];
        grads.layers[l].weight = delta.transpose() * in;
        grads.layers[l].bias = delta.colwise().sum().transpose();
        if (l > 0) {
            Matrix prev = delta * net.layers[l].weight;  // dL/d(activation of l-1)
            // chain through the activation of layer l-1 using its post-activation
            // value, which is exactly tape.inputs[l]
            if (net.activation == Activation::kRelu) {
                delta = prev.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
            } else {
                delta = prev.cwiseProduct((1.0 - in.array().square()).matrix());
            }
        } else {
            grads.input = delta * net.layers[l].weight;
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<MlpLayer> m;  // first moments, parameter shapes
    std::vector<MlpLayer> v;  // second moments
    std::int64_t step = 0;
    std::int64_t skipped = 0;  // non-finite gradient events
    AdamConfig cfg;
};

inline AdamState make_adam_state(const Mlp& net, const AdamConfig& cfg = {}) {
    AdamState st;
    st.cfg = cfg;
    for (const auto& l : net.layers) {
        MlpLayer zero{Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())};
        st.m.push_back(zero);
        st.v.push_back(zero);
    }
    return st;
}

inline bool grads_finite(const MlpGrads& g) {
    for (const auto& l : g.layers) {
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
}

// One Adam update with bias correction. Non-finite gradients skip the update
// and bump the skipped counter.
inline void adam_step(Mlp& net, const MlpGrads& grads, AdamState& st) {
    if (st.m.size() != net.layers.size() || grads.layers.size() != net.layers.size()) {
        throw std::invalid_argument("adam_step: state/gradient shape mismatch");
    }
    if (!grads_finite(grads)) {
        ++st.skipped;
        return;
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto update = [&](Eigen::Ref<Matrix> p, Eigen::Ref<Matrix> m, Eigen::Ref<Matrix> v,
                          const Matrix& g) {
            m = st.cfg.beta1 * m + (1.0 - st.cfg.beta1) * g;
            v = st.cfg.beta2 * v + (1.0 - st.cfg.beta2) * g.cwiseProduct(g);
            p -= (st.cfg.lr * (m / c1).array() / ((v / c2).array().sqrt() + st.cfg.eps)).matrix();
        };
        update(net.layers[l].weight, st.m[l].weight, st.v[l].weight, grads.layers[l].weight);
        Matrix bias_g = grads.layers[l].bias;
        Matrix bias_p = net.layers[l].bias, bias_m = st.m[l].bias, bias_v = st.v[l].bias;
        update(bias_p, bias_m, bias_v, bias_g);
        net.layers[l].bias = bias_p;
        st.m[l].bias = bias_m;
        st.v[l].bias = bias_v;
    }
}

// ---------------------------------------------------------------------------
// Inverted dropout over a fixed number of slots.
// ---------------------------------------------------------------------------

// Each slot is zeroed independently with probability `ratio`; kept slots are
// scaled by 1/(1-ratio) so eval mode needs no correction.
inline Vector make_dropout_mask(int slots, double ratio, std::mt19937_64& rng) {
    if (ratio < 0.0 || ratio >= 1.0) {
        throw std::invalid_argument("make_dropout_mask: ratio must be in [0, 1)");
    }
    Vector mask = Vector::Constant(slots, 1.0);
    if (ratio == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - ratio);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < slots; ++i) {
        mask(i) = (unit(rng) < ratio) ? 0.0 : keep_scale;
    }
    return mask;
}

}  // namespace gmc
