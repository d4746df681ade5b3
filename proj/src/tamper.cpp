#include "fmk/tamper.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "fmk/errors.hpp"
#include "fmk/rng.hpp"

namespace fmk {

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

} // namespace

std::string TamperSpec::kind_name() const {
    struct V {
        std::string operator()(const FineTuneSpec&) const { return "finetune"; }
        std::string operator()(const BackdoorSpec&) const { return "backdoor"; }
        std::string operator()(const PruneSpec&) const { return "prune"; }
        std::string operator()(const QuantizeSpec&) const { return "quantize"; }
    };
    return std::visit(V{}, op);
}

std::string TamperSpec::params() const {
    struct V {
        std::string operator()(const FineTuneSpec& s) const {
            return "lr=" + fmt_g(s.lr) + " steps=" + std::to_string(s.steps);
        }
        std::string operator()(const BackdoorSpec& s) const {
            return "n=" + std::to_string(s.n_triggers) + " lr=" + fmt_g(s.lr) +
                   " target=" + std::to_string(s.target_label);
        }
        std::string operator()(const PruneSpec& s) const { return "rate=" + fmt_g(s.rate); }
        std::string operator()(const QuantizeSpec& s) const { return "bits=" + std::to_string(s.bits); }
    };
    return std::visit(V{}, op);
}

Tensor apply_trigger(const Tensor& sample, const TriggerPatch& patch) {
    if (sample.shape.size() < 2) throw ArgumentError("trigger needs an image-shaped input");
    if (patch.side == 0) throw ArgumentError("trigger patch side must be >= 1");
    if (!(patch.value >= 0.0f && patch.value <= 1.0f)) throw ArgumentError("trigger value outside [0,1]");
    const std::size_t rank = sample.shape.size();
    const std::size_t h = sample.shape[rank - 2], w = sample.shape[rank - 1];
    if (patch.row + patch.side > h || patch.col + patch.side > w)
        throw ArgumentError("trigger patch out of bounds for " + shape_str(sample.shape));
    const std::size_t channels = sample.numel() / (h * w);
    Tensor out = sample;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t j = 0; j < patch.side; ++j)
            for (std::size_t i = 0; i < patch.side; ++i)
                out.data[(c * h + patch.row + j) * w + patch.col + i] = patch.value;
    return out;
}

Model implant_backdoor(const Model& model, const Dataset& dataset, const BackdoorSpec& spec, std::uint64_t seed,
                       std::size_t* steps_out) {
    validate_model(model);
    if (dataset.size() == 0) throw ArgumentError("backdoor: empty dataset");
    if (spec.target_label >= model.num_classes) throw ArgumentError("backdoor: target label out of range");
    if (spec.lr < 0.0) throw ArgumentError("backdoor: negative learning rate");
    if (spec.n_triggers > dataset.size()) throw ArgumentError("backdoor: more triggers than clean samples");

    // stamp the trigger onto randomly drawn clean samples, relabeled to the target
    std::vector<Tensor> triggered;
    {
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        SplitMix64 rng(SplitMix64::derive(seed, 0xB0));
        rng.shuffle(order);
        triggered.reserve(spec.n_triggers);
        for (std::size_t k = 0; k < spec.n_triggers; ++k)
            triggered.push_back(apply_trigger(dataset.inputs[order[k]], spec.trigger));
    }

    Model m = model;
    const std::size_t n = dataset.size();
    std::vector<std::size_t> perm;
    std::size_t pos = 0;
    std::uint64_t epoch = 0;

    std::vector<std::vector<double>> wacc(m.layers.size()), bacc(m.layers.size());
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        if (!m.layers[li].has_params()) continue;
        wacc[li].assign(m.layers[li].weights.numel(), 0.0);
        bacc[li].assign(m.layers[li].bias.numel(), 0.0);
    }

    auto hits = [&]() {
        std::size_t c = 0;
        for (const Tensor& t : triggered)
            if (top1(forward(m, t)) == spec.target_label) ++c;
        return c;
    };
    auto accumulate = [&](const Tensor& x, std::size_t label) {
        ForwardTrace trace = forward_trace(m, x);
        auto [loss, lgrad] = softmax_cross_entropy(trace.logits(), label);
        (void)loss;
        Gradients grads = backward(m, trace, lgrad);
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            if (!m.layers[li].has_params()) continue;
            for (std::size_t i = 0; i < wacc[li].size(); ++i) wacc[li][i] += grads.weight_grads[li].data[i];
            for (std::size_t i = 0; i < bacc[li].size(); ++i) bacc[li][i] += grads.bias_grads[li].data[i];
        }
    };

    for (std::size_t steps = 0;; ++steps) {
        const std::size_t ok = hits();
        if (ok == triggered.size()) {
            if (steps_out) *steps_out = steps;
            return m;
        }
        if (steps >= spec.max_steps) {
            char rate[32];
            std::snprintf(rate, sizeof(rate), "%.2f", static_cast<double>(ok) / static_cast<double>(triggered.size()));
            throw TamperError("backdoor did not take within " + std::to_string(spec.max_steps) +
                              " steps (attack success " + std::to_string(ok) + "/" +
                              std::to_string(triggered.size()) + " = " + rate + ")");
        }

        if (pos >= n || perm.empty()) {
            perm.resize(n);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            SplitMix64 rng(SplitMix64::derive(SplitMix64::derive(seed, 0xC1), epoch));
            rng.shuffle(perm);
            pos = 0;
            ++epoch;
        }
        // 1:1 trigger:clean mix keeps the trigger constraint from being
        // drowned out by the clean gradient mass
        const std::size_t take = std::min(std::max<std::size_t>(spec.n_triggers, 1), n - pos);
        for (auto& a : wacc) std::fill(a.begin(), a.end(), 0.0);
        for (auto& a : bacc) std::fill(a.begin(), a.end(), 0.0);

        // every step sees the full trigger set mixed into one clean batch
        for (std::size_t k = 0; k < take; ++k)
            accumulate(dataset.inputs[perm[pos + k]], dataset.labels[perm[pos + k]]);
        for (const Tensor& t : triggered) accumulate(t, spec.target_label);
        pos += take;

        const double scale = spec.lr / static_cast<double>(take + triggered.size());
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            if (!m.layers[li].has_params()) continue;
            Tensor& wt = m.layers[li].weights;
            Tensor& bt = m.layers[li].bias;
            for (std::size_t i = 0; i < wt.numel(); ++i)
                wt.data[i] = static_cast<float>(static_cast<double>(wt.data[i]) - scale * wacc[li][i]);
            for (std::size_t i = 0; i < bt.numel(); ++i)
                bt.data[i] = static_cast<float>(static_cast<double>(bt.data[i]) - scale * bacc[li][i]);
        }
    }
}

Model fine_tune(const Model& model, const Dataset& dataset, double lr, std::size_t steps, std::size_t batch_size,
                std::uint64_t seed) {
    validate_model(model);
    if (lr < 0.0) throw ArgumentError("fine_tune: negative learning rate");
    if (steps == 0) return model;
    TrainConfig config;
    config.learning_rate = lr;
    config.steps = steps;
    config.batch_size = batch_size;
    config.seed = seed;
    return train(model, dataset, config);
}

Model prune(const Model& model, double rate) {
    validate_model(model);
    if (!(rate > 0.0 && rate < 1.0)) throw ArgumentError("prune: rate must be strictly between 0 and 1");

    struct Ref {
        float mag;
        std::size_t layer;
        std::size_t flat;
    };
    std::vector<Ref> refs;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& layer = model.layers[li];
        if (!layer.has_params()) continue;
        for (std::size_t i = 0; i < layer.weights.numel(); ++i)
            refs.push_back({std::abs(layer.weights.data[i]), li, i});
    }
    const std::size_t k = static_cast<std::size_t>(rate * static_cast<double>(refs.size()));
    Model m = model;
    if (k == 0) return m;

    std::sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) {
        if (a.mag != b.mag) return a.mag < b.mag;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.flat < b.flat;
    });
    for (std::size_t i = 0; i < k; ++i) m.layers[refs[i].layer].weights.data[refs[i].flat] = 0.0f;
    return m;
}

Model quantize(const Model& model, int bits) {
    validate_model(model);
    if (bits < 2) throw ArgumentError("quantize: bits must be >= 2");
    const double levels = std::ldexp(1.0, bits - 1) - 1.0;

    Model m = model;
    auto quant_tensor = [&](Tensor& t) {
        double maxabs = 0.0;
        for (float v : t.data) maxabs = std::max(maxabs, std::abs(static_cast<double>(v)));
        if (maxabs == 0.0) return;
        const double scale = maxabs / levels;
        for (float& v : t.data) {
            // half-away-from-zero; multiply before dividing so exact half cases survive
            const double q = std::round(static_cast<double>(v) * levels / maxabs);
            v = static_cast<float>(q * scale);
        }
    };
    for (Layer& layer : m.layers) {
        if (!layer.has_params()) continue;
        quant_tensor(layer.weights);
        quant_tensor(layer.bias);
    }
    return m;
}

Model apply_tamper(const Model& model, const Dataset& dataset, const TamperSpec& spec) {
    struct V {
        const Model& m;
        const Dataset& d;
        std::uint64_t seed;
        Model operator()(const FineTuneSpec& s) const { return fine_tune(m, d, s.lr, s.steps, s.batch_size, seed); }
        Model operator()(const BackdoorSpec& s) const { return implant_backdoor(m, d, s, seed); }
        Model operator()(const PruneSpec& s) const { return prune(m, s.rate); }
        Model operator()(const QuantizeSpec& s) const { return quantize(m, s.bits); }
    };
    return std::visit(V{model, dataset, spec.seed}, spec.op);
}

void to_json(nlohmann::json& j, const TriggerPatch& p) {
    j = nlohmann::json{{"side", p.side}, {"row", p.row}, {"col", p.col}, {"value", p.value}};
}

void from_json(const nlohmann::json& j, TriggerPatch& p) {
    p = TriggerPatch{};
    if (j.contains("side")) j.at("side").get_to(p.side);
    if (j.contains("row")) j.at("row").get_to(p.row);
    if (j.contains("col")) j.at("col").get_to(p.col);
    if (j.contains("value")) j.at("value").get_to(p.value);
}

void to_json(nlohmann::json& j, const TamperSpec& spec) {
    struct V {
        nlohmann::json& j;
        void operator()(const FineTuneSpec& s) const {
            j["kind"] = "finetune";
            j["lr"] = s.lr;
            j["steps"] = s.steps;
            j["batch_size"] = s.batch_size;
        }
        void operator()(const BackdoorSpec& s) const {
            j["kind"] = "backdoor";
            j["trigger"] = s.trigger;
            j["target_label"] = s.target_label;
            j["n_triggers"] = s.n_triggers;
            j["lr"] = s.lr;
            j["max_steps"] = s.max_steps;
        }
        void operator()(const PruneSpec& s) const {
            j["kind"] = "prune";
            j["rate"] = s.rate;
        }
        void operator()(const QuantizeSpec& s) const {
            j["kind"] = "quantize";
            j["bits"] = s.bits;
        }
    };
    j = nlohmann::json::object();
    std::visit(V{j}, spec.op);
    j["seed"] = spec.seed;
}

void from_json(const nlohmann::json& j, TamperSpec& spec) {
    spec = TamperSpec{};
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "finetune") {
        FineTuneSpec s;
        if (j.contains("lr")) j.at("lr").get_to(s.lr);
        if (j.contains("steps")) j.at("steps").get_to(s.steps);
        if (j.contains("batch_size")) j.at("batch_size").get_to(s.batch_size);
        spec.op = s;
    } else if (kind == "backdoor") {
        BackdoorSpec s;
        if (j.contains("trigger")) j.at("trigger").get_to(s.trigger);
        if (j.contains("target_label")) j.at("target_label").get_to(s.target_label);
        if (j.contains("n_triggers")) j.at("n_triggers").get_to(s.n_triggers);
        if (j.contains("lr")) j.at("lr").get_to(s.lr);
        if (j.contains("max_steps")) j.at("max_steps").get_to(s.max_steps);
        spec.op = s;
    } else if (kind == "prune") {
        PruneSpec s;
        if (j.contains("rate")) j.at("rate").get_to(s.rate);
        spec.op = s;
    } else if (kind == "quantize") {
        QuantizeSpec s;
        if (j.contains("bits")) j.at("bits").get_to(s.bits);
        spec.op = s;
    } else {
        throw FormatError("unknown tamper kind: " + kind);
    }
    if (j.contains("seed")) j.at("seed").get_to(spec.seed);
}

} // namespace fmk
