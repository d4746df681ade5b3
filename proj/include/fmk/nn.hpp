#ifndef FMK_NN_HPP
#define FMK_NN_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "fmk/tensor.hpp"

namespace fmk {

enum class LayerKind : std::uint8_t {
    Dense = 0,
    Conv2d = 1,
    ReLU = 2,
    Flatten = 3,
};

const char* layer_kind_name(LayerKind kind);

/// One network layer. Dense holds weights {out, in} and bias {out};
/// Conv2d holds weights {out_ch, in_ch, kh, kw} and bias {out_ch} and always
/// runs with stride 1 and no padding. ReLU and Flatten carry no parameters.
struct Layer {
    LayerKind kind = LayerKind::ReLU;
    Tensor weights;
    Tensor bias;

    static Layer dense(Tensor weights, Tensor bias);
    static Layer conv2d(Tensor weights, Tensor bias);
    static Layer relu() { return Layer{LayerKind::ReLU, {}, {}}; }
    static Layer flatten() { return Layer{LayerKind::Flatten, {}, {}}; }

    bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }
};

/// Feed-forward classifier: an ordered layer list mapping an input of
/// `input_shape` to `num_classes` raw logits. The last layer is always Dense
/// with out == num_classes.
struct Model {
    std::vector<Layer> layers;
    std::vector<std::size_t> input_shape;
    std::size_t num_classes = 0;

    std::size_t param_count() const;
};

/// Output shape of `layer` applied to an input of shape `in`; throws
/// ShapeError when the combination is invalid.
std::vector<std::size_t> infer_output_shape(const Layer& layer, const std::vector<std::size_t>& in);

/// Checks layer-to-layer shape consistency and the final-Dense/num_classes
/// contract; throws ShapeError on violation.
void validate_model(const Model& model);

/// Activations recorded during a forward pass: acts[0] is the input,
/// acts[i+1] the output of layer i. Needed by backward.
struct ForwardTrace {
    std::vector<Tensor> acts;

    bool valid() const { return !acts.empty(); }
    const Tensor& logits() const { return acts.back(); }
};

/// Plain inference: N finite logits, deterministic.
Tensor forward(const Model& model, const Tensor& input);

/// Forward pass that records per-layer activations for a later backward call.
ForwardTrace forward_trace(const Model& model, const Tensor& input);

/// Per-layer parameter gradients. Entries for ReLU/Flatten layers hold empty
/// tensors so indices line up with model.layers.
struct Gradients {
    std::vector<Tensor> weight_grads;
    std::vector<Tensor> bias_grads;
    Tensor input_grad;
};

/// Reverse-mode gradients of sum(loss_grad_on_logits * logits) with respect
/// to every parameter and the input. `trace` must come from forward_trace on
/// the same model; passing a default-constructed trace is a StateError.
/// ReLU uses subgradient 0 at exactly-zero pre-activations.
Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& loss_grad_on_logits);

/// Softmax cross-entropy with max-subtraction. Returns the loss and its
/// gradient on the logits (softmax(logits) - one_hot(label)).
std::pair<double, Tensor> softmax_cross_entropy(const Tensor& logits, std::size_t label);

struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> input_shape;
    std::size_t num_classes = 0;

    std::size_t size() const { return inputs.size(); }
};

struct TrainConfig {
    // Small batches on purpose: the SGD noise keeps low-magnitude weights in
    // motion instead of letting them settle exactly on zero, which is what
    // makes magnitude pruning visible to the verifier at desk scale.
    double learning_rate = 0.02;
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
};

/// Plain SGD on softmax cross-entropy: w <- w - lr * grad averaged over the
/// batch. Batches are drawn from a seeded permutation regenerated each epoch,
/// so the result is a pure function of (model, dataset order, config).
Model train(const Model& model, const Dataset& dataset, const TrainConfig& config);

std::size_t top1(const Tensor& logits);

/// Fraction of dataset samples whose Top-1 logit equals the dataset label.
double accuracy(const Model& model, const Dataset& dataset);

} // namespace fmk

#endif
