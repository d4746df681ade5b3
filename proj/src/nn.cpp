#include "fmk/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fmk/errors.hpp"
#include "fmk/rng.hpp"

namespace fmk {

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

Layer Layer::dense(Tensor weights, Tensor bias) {
    if (weights.shape.size() != 2)
        throw ShapeError("dense weights must be rank 2, got " + shape_str(weights.shape));
    if (bias.shape.size() != 1 || bias.shape[0] != weights.shape[0])
        throw ShapeError("dense bias must have shape {out}, got " + shape_str(bias.shape));
    return Layer{LayerKind::Dense, std::move(weights), std::move(bias)};
}

Layer Layer::conv2d(Tensor weights, Tensor bias) {
    if (weights.shape.size() != 4)
        throw ShapeError("conv2d weights must be rank 4, got " + shape_str(weights.shape));
    if (bias.shape.size() != 1 || bias.shape[0] != weights.shape[0])
        throw ShapeError("conv2d bias must have shape {out_ch}, got " + shape_str(bias.shape));
    return Layer{LayerKind::Conv2d, std::move(weights), std::move(bias)};
}

std::vector<std::size_t> infer_output_shape(const Layer& layer, const std::vector<std::size_t>& in) {
    switch (layer.kind) {
        case LayerKind::Dense: {
            const std::size_t out = layer.weights.shape[0];
            const std::size_t fan_in = layer.weights.shape[1];
            if (in.size() != 1 || in[0] != fan_in)
                throw ShapeError("dense layer expects input [" + std::to_string(fan_in) + "], got " + shape_str(in));
            return {out};
        }
        case LayerKind::Conv2d: {
            const auto& w = layer.weights.shape; // {oc, ic, kh, kw}
            if (in.size() != 3 || in[0] != w[1])
                throw ShapeError("conv2d layer expects input {" + std::to_string(w[1]) + ",h,w}, got " + shape_str(in));
            if (in[1] < w[2] || in[2] < w[3])
                throw ShapeError("conv2d kernel " + shape_str({w[2], w[3]}) + " larger than input " + shape_str(in));
            return {w[0], in[1] - w[2] + 1, in[2] - w[3] + 1};
        }
        case LayerKind::ReLU:
            return in;
        case LayerKind::Flatten:
            return {shape_numel(in)};
    }
    throw ArgumentError("unknown layer kind");
}

void validate_model(const Model& model) {
    if (model.layers.empty()) throw ShapeError("model has no layers");
    if (model.num_classes < 2) throw ShapeError("model must have at least 2 classes");
    std::vector<std::size_t> shape = model.input_shape;
    for (const Layer& layer : model.layers) shape = infer_output_shape(layer, shape);
    const Layer& last = model.layers.back();
    if (last.kind != LayerKind::Dense || last.weights.shape[0] != model.num_classes)
        throw ShapeError("last layer must be dense with out == num_classes");
    if (shape.size() != 1 || shape[0] != model.num_classes)
        throw ShapeError("model output shape " + shape_str(shape) + " != num_classes");
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const Layer& layer : layers)
        if (layer.has_params()) n += layer.weights.numel() + layer.bias.numel();
    return n;
}

namespace {

Tensor dense_forward(const Layer& layer, const Tensor& in) {
    const std::size_t out_n = layer.weights.shape[0];
    const std::size_t in_n = layer.weights.shape[1];
    Tensor out({out_n});
    for (std::size_t o = 0; o < out_n; ++o) {
        double acc = layer.bias.data[o];
        const float* wrow = layer.weights.data.data() + o * in_n;
        for (std::size_t i = 0; i < in_n; ++i) acc += static_cast<double>(wrow[i]) * in.data[i];
        out.data[o] = static_cast<float>(acc);
    }
    return out;
}

Tensor conv2d_forward(const Layer& layer, const Tensor& in) {
    const auto& w = layer.weights.shape;
    const std::size_t oc = w[0], ic = w[1], kh = w[2], kw = w[3];
    const std::size_t h = in.shape[1], wd = in.shape[2];
    const std::size_t oh = h - kh + 1, ow = wd - kw + 1;
    Tensor out({oc, oh, ow});
    for (std::size_t c = 0; c < oc; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = layer.bias.data[c];
                for (std::size_t ci = 0; ci < ic; ++ci) {
                    for (std::size_t j = 0; j < kh; ++j) {
                        const float* inrow = in.data.data() + (ci * h + y + j) * wd + x;
                        const float* wrow = layer.weights.data.data() + ((c * ic + ci) * kh + j) * kw;
                        for (std::size_t i = 0; i < kw; ++i)
                            acc += static_cast<double>(wrow[i]) * inrow[i];
                    }
                }
                out.data[(c * oh + y) * ow + x] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Tensor layer_forward(const Layer& layer, const Tensor& in) {
    switch (layer.kind) {
        case LayerKind::Dense:
            return dense_forward(layer, in);
        case LayerKind::Conv2d:
            return conv2d_forward(layer, in);
        case LayerKind::ReLU: {
            Tensor out = in;
            for (float& v : out.data) v = std::max(0.0f, v);
            return out;
        }
        case LayerKind::Flatten: {
            Tensor out = in;
            out.shape = {in.numel()};
            return out;
        }
    }
    throw ArgumentError("unknown layer kind");
}

} // namespace

ForwardTrace forward_trace(const Model& model, const Tensor& input) {
    if (input.shape != model.input_shape)
        throw ShapeError("input shape " + shape_str(input.shape) + " != model input shape " +
                         shape_str(model.input_shape));
    ForwardTrace trace;
    trace.acts.reserve(model.layers.size() + 1);
    trace.acts.push_back(input);
    for (const Layer& layer : model.layers) {
        (void)infer_output_shape(layer, trace.acts.back().shape); // shape check
        trace.acts.push_back(layer_forward(layer, trace.acts.back()));
    }
    require_finite(trace.acts.back(), "forward logits");
    return trace;
}

Tensor forward(const Model& model, const Tensor& input) {
    return forward_trace(model, input).acts.back();
}

Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& loss_grad_on_logits) {
    if (!trace.valid())
        throw StateError("backward called without a forward trace");
    if (trace.acts.size() != model.layers.size() + 1)
        throw StateError("forward trace does not match model depth");
    if (loss_grad_on_logits.numel() != model.num_classes)
        throw ShapeError("loss gradient must have num_classes entries");

    Gradients grads;
    grads.weight_grads.resize(model.layers.size());
    grads.bias_grads.resize(model.layers.size());

    Tensor delta = loss_grad_on_logits; // gradient wrt current layer's output
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const Layer& layer = model.layers[li];
        const Tensor& in = trace.acts[li];
        switch (layer.kind) {
            case LayerKind::Dense: {
                const std::size_t out_n = layer.weights.shape[0];
                const std::size_t in_n = layer.weights.shape[1];
                Tensor wg(layer.weights.shape);
                Tensor bg(layer.bias.shape);
                Tensor din({in_n});
                for (std::size_t o = 0; o < out_n; ++o) {
                    const float g = delta.data[o];
                    bg.data[o] = g;
                    float* wgrow = wg.data.data() + o * in_n;
                    for (std::size_t i = 0; i < in_n; ++i) wgrow[i] = g * in.data[i];
                }
                for (std::size_t i = 0; i < in_n; ++i) {
                    double acc = 0.0;
                    for (std::size_t o = 0; o < out_n; ++o)
                        acc += static_cast<double>(layer.weights.data[o * in_n + i]) * delta.data[o];
                    din.data[i] = static_cast<float>(acc);
                }
                grads.weight_grads[li] = std::move(wg);
                grads.bias_grads[li] = std::move(bg);
                delta = std::move(din);
                break;
            }
            case LayerKind::Conv2d: {
                const auto& w = layer.weights.shape;
                const std::size_t oc = w[0], ic = w[1], kh = w[2], kw = w[3];
                const std::size_t h = in.shape[1], wd = in.shape[2];
                const std::size_t oh = h - kh + 1, ow = wd - kw + 1;
                Tensor wg(layer.weights.shape);
                Tensor bg(layer.bias.shape);
                Tensor din(in.shape);
                std::vector<double> wacc(layer.weights.numel(), 0.0);
                std::vector<double> dacc(in.numel(), 0.0);
                for (std::size_t c = 0; c < oc; ++c) {
                    double bsum = 0.0;
                    for (std::size_t y = 0; y < oh; ++y) {
                        for (std::size_t x = 0; x < ow; ++x) {
                            const double g = delta.data[(c * oh + y) * ow + x];
                            bsum += g;
                            for (std::size_t ci = 0; ci < ic; ++ci) {
                                for (std::size_t j = 0; j < kh; ++j) {
                                    for (std::size_t i = 0; i < kw; ++i) {
                                        const std::size_t in_idx = (ci * h + y + j) * wd + x + i;
                                        const std::size_t w_idx = ((c * ic + ci) * kh + j) * kw + i;
                                        wacc[w_idx] += g * in.data[in_idx];
                                        dacc[in_idx] += g * layer.weights.data[w_idx];
                                    }
                                }
                            }
                        }
                    }
                    bg.data[c] = static_cast<float>(bsum);
                }
                for (std::size_t i = 0; i < wacc.size(); ++i) wg.data[i] = static_cast<float>(wacc[i]);
                for (std::size_t i = 0; i < dacc.size(); ++i) din.data[i] = static_cast<float>(dacc[i]);
                grads.weight_grads[li] = std::move(wg);
                grads.bias_grads[li] = std::move(bg);
                delta = std::move(din);
                break;
            }
            case LayerKind::ReLU: {
                // Subgradient at exactly-zero pre-activation is 0.
                Tensor din = delta;
                din.shape = in.shape;
                for (std::size_t i = 0; i < din.numel(); ++i)
                    if (!(in.data[i] > 0.0f)) din.data[i] = 0.0f;
                delta = std::move(din);
                break;
            }
            case LayerKind::Flatten: {
                Tensor din = delta;
                din.shape = in.shape;
                delta = std::move(din);
                break;
            }
        }
    }
    grads.input_grad = std::move(delta);
    require_finite(grads.input_grad, "input gradient");
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        if (!model.layers[li].has_params()) continue;
        require_finite(grads.weight_grads[li], "weight gradient");
        require_finite(grads.bias_grads[li], "bias gradient");
    }
    return grads;
}

std::pair<double, Tensor> softmax_cross_entropy(const Tensor& logits, std::size_t label) {
    const std::size_t n = logits.numel();
    if (label >= n) throw ArgumentError("label " + std::to_string(label) + " out of range for " + std::to_string(n) + " classes");
    double maxv = logits.data[0];
    for (std::size_t i = 1; i < n; ++i) maxv = std::max(maxv, static_cast<double>(logits.data[i]));
    double sum = 0.0;
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = std::exp(static_cast<double>(logits.data[i]) - maxv);
        sum += z[i];
    }
    const double loss = std::log(sum) - (static_cast<double>(logits.data[label]) - maxv);
    Tensor grad(logits.shape);
    for (std::size_t i = 0; i < n; ++i)
        grad.data[i] = static_cast<float>(z[i] / sum - (i == label ? 1.0 : 0.0));
    return {loss, grad};
}

std::size_t top1(const Tensor& logits) {
    // Ties break to the lowest class index.
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.numel(); ++i)
        if (logits.data[i] > logits.data[best]) best = i;
    return best;
}

Model train(const Model& model, const Dataset& dataset, const TrainConfig& config) {
    if (dataset.size() == 0) throw ArgumentError("train: empty dataset");
    if (config.learning_rate < 0.0) throw ArgumentError("train: negative learning rate");
    if (config.steps < 1) throw ArgumentError("train: steps must be >= 1");
    if (config.batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
    for (std::size_t lbl : dataset.labels)
        if (lbl >= model.num_classes) throw ArgumentError("train: label out of range");

    Model m = model;
    const std::size_t n = dataset.size();

    std::vector<std::size_t> perm;
    std::size_t pos = 0;
    std::uint64_t epoch = 0;

    // Per-parameter batch accumulators, kept in double.
    std::vector<std::vector<double>> wacc(m.layers.size()), bacc(m.layers.size());
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        if (!m.layers[li].has_params()) continue;
        wacc[li].assign(m.layers[li].weights.numel(), 0.0);
        bacc[li].assign(m.layers[li].bias.numel(), 0.0);
    }

    for (std::size_t step = 0; step < config.steps; ++step) {
        if (pos >= n || perm.empty()) {
            perm.resize(n);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            SplitMix64 rng(SplitMix64::derive(config.seed, epoch));
            rng.shuffle(perm);
            pos = 0;
            ++epoch;
        }
        const std::size_t take = std::min(config.batch_size, n - pos);
        for (auto& a : wacc) std::fill(a.begin(), a.end(), 0.0);
        for (auto& a : bacc) std::fill(a.begin(), a.end(), 0.0);

        for (std::size_t k = 0; k < take; ++k) {
            const std::size_t idx = perm[pos + k];
            ForwardTrace trace = forward_trace(m, dataset.inputs[idx]);
            auto [loss, lgrad] = softmax_cross_entropy(trace.logits(), dataset.labels[idx]);
            (void)loss;
            Gradients grads = backward(m, trace, lgrad);
            for (std::size_t li = 0; li < m.layers.size(); ++li) {
                if (!m.layers[li].has_params()) continue;
                for (std::size_t i = 0; i < wacc[li].size(); ++i) wacc[li][i] += grads.weight_grads[li].data[i];
                for (std::size_t i = 0; i < bacc[li].size(); ++i) bacc[li][i] += grads.bias_grads[li].data[i];
            }
        }
        pos += take;

        const double scale = config.learning_rate / static_cast<double>(take);
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            if (!m.layers[li].has_params()) continue;
            Tensor& w = m.layers[li].weights;
            Tensor& b = m.layers[li].bias;
            for (std::size_t i = 0; i < w.numel(); ++i)
                w.data[i] = static_cast<float>(static_cast<double>(w.data[i]) - scale * wacc[li][i]);
            for (std::size_t i = 0; i < b.numel(); ++i)
                b.data[i] = static_cast<float>(static_cast<double>(b.data[i]) - scale * bacc[li][i]);
        }
    }
    return m;
}

double accuracy(const Model& model, const Dataset& dataset) {
    if (dataset.size() == 0) throw ArgumentError("accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (top1(forward(model, dataset.inputs[i])) == dataset.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

} // namespace fmk
