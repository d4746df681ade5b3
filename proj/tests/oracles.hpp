#ifndef FMK_TESTS_ORACLES_HPP
#define FMK_TESTS_ORACLES_HPP

// Reference implementations the tests measure the library against. Everything
// here is written straight from the operation definitions, in double
// precision, and shares no code with src/ — if both sides agree it is because
// the math agrees, not because they call the same routine.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fmk/nn.hpp"

namespace oracle {

// --- splitmix64, re-derived from the published algorithm ---------------------

inline std::uint64_t sm64_next(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

// top 53 bits -> [0,1), the usual double mapping
inline double sm64_unit(std::uint64_t& state) {
    return static_cast<double>(sm64_next(state) >> 11) * (1.0 / 9007199254740992.0);
}

// --- double-precision forward pass over the library's model layout -----------

inline std::vector<double> forward_f64(const fmk::Model& model, std::vector<double> act,
                                       std::vector<std::size_t> shape) {
    for (const fmk::Layer& layer : model.layers) {
        switch (layer.kind) {
            case fmk::LayerKind::Dense: {
                const std::size_t out_n = layer.weights.shape[0];
                const std::size_t in_n = layer.weights.shape[1];
                if (shape.size() != 1 || shape[0] != in_n) throw std::runtime_error("oracle: dense shape");
                std::vector<double> next(out_n);
                for (std::size_t o = 0; o < out_n; ++o) {
                    double acc = layer.bias.data[o];
                    for (std::size_t i = 0; i < in_n; ++i)
                        acc += static_cast<double>(layer.weights.data[o * in_n + i]) * act[i];
                    next[o] = acc;
                }
                act = std::move(next);
                shape = {out_n};
                break;
            }
            case fmk::LayerKind::Conv2d: {
                const std::size_t oc = layer.weights.shape[0], ic = layer.weights.shape[1];
                const std::size_t kh = layer.weights.shape[2], kw = layer.weights.shape[3];
                if (shape.size() != 3 || shape[0] != ic) throw std::runtime_error("oracle: conv shape");
                const std::size_t h = shape[1], w = shape[2];
                const std::size_t oh = h - kh + 1, ow = w - kw + 1;
                std::vector<double> next(oc * oh * ow);
                for (std::size_t c = 0; c < oc; ++c)
                    for (std::size_t y = 0; y < oh; ++y)
                        for (std::size_t x = 0; x < ow; ++x) {
                            double acc = layer.bias.data[c];
                            for (std::size_t ci = 0; ci < ic; ++ci)
                                for (std::size_t j = 0; j < kh; ++j)
                                    for (std::size_t i = 0; i < kw; ++i)
                                        acc += static_cast<double>(
                                                   layer.weights.data[((c * ic + ci) * kh + j) * kw + i]) *
                                               act[(ci * h + y + j) * w + x + i];
                            next[(c * oh + y) * ow + x] = acc;
                        }
                act = std::move(next);
                shape = {oc, oh, ow};
                break;
            }
            case fmk::LayerKind::ReLU:
                for (double& v : act)
                    if (v < 0.0) v = 0.0;
                break;
            case fmk::LayerKind::Flatten: {
                std::size_t n = 1;
                for (std::size_t d : shape) n *= d;
                shape = {n};
                break;
            }
        }
    }
    return act;
}

inline std::vector<double> forward_f64(const fmk::Model& model, const fmk::Tensor& input) {
    std::vector<double> act(input.data.begin(), input.data.end());
    return forward_f64(model, std::move(act), input.shape);
}

// linear probe functional: sum_i g_i * logit_i, the thing backward
// differentiates when handed g as the logit cotangent
inline double probe_loss(const fmk::Model& model, const fmk::Tensor& input, const std::vector<double>& g) {
    const std::vector<double> logits = forward_f64(model, input);
    if (logits.size() != g.size()) throw std::runtime_error("oracle: probe size");
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * logits[i];
    return acc;
}

// softmax cross-entropy by the direct formula
inline double ce_f64(const fmk::Tensor& logits, std::size_t label) {
    double maxv = logits.data[0];
    for (float v : logits.data) maxv = std::max(maxv, static_cast<double>(v));
    double sum = 0.0;
    for (float v : logits.data) sum += std::exp(static_cast<double>(v) - maxv);
    return std::log(sum) - (static_cast<double>(logits.data[label]) - maxv);
}

// relative agreement with an absolute noise floor: differences at or below
// `floor` count as equal, everything else is judged relative to the larger
// magnitude
inline double rel_err(double a, double b, double floor = 1e-6) {
    const double diff = std::abs(a - b);
    if (diff <= floor) return 0.0;
    return diff / std::max(std::abs(a), std::abs(b));
}

// --- central finite differences against the f64 forward ---------------------

struct FdResult {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Central differences on the probe functional for every parameter and every
// input pixel, divided by the step the f32 grid actually realized. The
// analytic side comes from the library's backward.
inline FdResult fd_check(const fmk::Model& model, const fmk::Tensor& input, const std::vector<double>& g,
                         double h = 1e-3, double tol_floor = 1e-6) {
    fmk::Tensor g_t({g.size()});
    for (std::size_t i = 0; i < g.size(); ++i) g_t.data[i] = static_cast<float>(g[i]);
    const fmk::ForwardTrace trace = fmk::forward_trace(model, input);
    const fmk::Gradients grads = fmk::backward(model, trace, g_t);

    FdResult result;
    auto probe_one = [&](fmk::Model& m, float& slot, double analytic) {
        const float saved = slot;
        slot = static_cast<float>(static_cast<double>(saved) + h);
        const double up = probe_loss(m, input, g);
        const double x_up = slot;
        slot = static_cast<float>(static_cast<double>(saved) - h);
        const double down = probe_loss(m, input, g);
        const double x_down = slot;
        slot = saved;
        const double fd = (up - down) / (x_up - x_down);
        result.max_rel = std::max(result.max_rel, rel_err(analytic, fd, tol_floor));
        ++result.checked;
    };

    fmk::Model work = model;
    for (std::size_t li = 0; li < work.layers.size(); ++li) {
        if (!work.layers[li].has_params()) continue;
        for (std::size_t i = 0; i < work.layers[li].weights.numel(); ++i)
            probe_one(work, work.layers[li].weights.data[i], grads.weight_grads[li].data[i]);
        for (std::size_t i = 0; i < work.layers[li].bias.numel(); ++i)
            probe_one(work, work.layers[li].bias.data[i], grads.bias_grads[li].data[i]);
    }

    fmk::Tensor x = input;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float saved = x.data[i];
        x.data[i] = static_cast<float>(static_cast<double>(saved) + h);
        const double up = probe_loss(model, x, g);
        const double x_up = x.data[i];
        x.data[i] = static_cast<float>(static_cast<double>(saved) - h);
        const double down = probe_loss(model, x, g);
        const double x_down = x.data[i];
        x.data[i] = saved;
        const double fd = (up - down) / (x_up - x_down);
        result.max_rel = std::max(result.max_rel, rel_err(grads.input_grad.data[i], fd, tol_floor));
        ++result.checked;
    }
    return result;
}

// Smallest |pre-activation| feeding any ReLU on this input. Central
// differences straddle the ReLU kink when a unit sits within reach of the
// perturbation, so callers keep their probe points away from zero.
inline double min_relu_preact(const fmk::Model& model, const fmk::Tensor& input) {
    std::vector<double> act(input.data.begin(), input.data.end());
    std::vector<std::size_t> shape = input.shape;
    double lowest = 1e300;
    for (const fmk::Layer& layer : model.layers) {
        if (layer.kind == fmk::LayerKind::ReLU)
            for (double v : act) lowest = std::min(lowest, std::abs(v));
        fmk::Model one;
        one.layers.push_back(layer);
        // reuse the layer stepper above by running a single-layer pass
        act = forward_f64(one, std::move(act), shape);
        if (layer.kind == fmk::LayerKind::Dense) shape = {layer.weights.shape[0]};
        else if (layer.kind == fmk::LayerKind::Conv2d)
            shape = {layer.weights.shape[0], shape[1] - layer.weights.shape[2] + 1,
                     shape[2] - layer.weights.shape[3] + 1};
        else if (layer.kind == fmk::LayerKind::Flatten) {
            std::size_t n = 1;
            for (std::size_t d : shape) n *= d;
            shape = {n};
        }
    }
    return lowest;
}

} // namespace oracle

#endif
