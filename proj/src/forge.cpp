#include "fmk/forge.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fmk/errors.hpp"
#include "fmk/serialize.hpp"

namespace fmk {

void ForgeConfig::validate() const {
    if (lambda < 0.0) throw ArgumentError("forge: lambda must be >= 0");
    if (stage1_lr <= 0.0) throw ArgumentError("forge: stage1_lr must be > 0");
    if (stage1_max_iters == 0) throw ArgumentError("forge: stage1_max_iters must be >= 1");
    if (stage1_gap_tol <= 0.0) throw ArgumentError("forge: stage1_gap_tol must be > 0");
    if (stage2_alpha <= 0.0) throw ArgumentError("forge: stage2_alpha must be > 0");
    if (stage2_max_steps == 0) throw ArgumentError("forge: stage2_max_steps must be >= 1");
    if (!(clamp_lo < clamp_hi)) throw ArgumentError("forge: clamp bounds out of order");
}

std::pair<double, std::array<double, 2>> combined_loss(const std::array<float, 2>& binary_logits, double lambda) {
    const double l0 = binary_logits[0], l1 = binary_logits[1];
    if (!std::isfinite(l0) || !std::isfinite(l1)) throw NumericalError("combined_loss: non-finite logits");
    const double mean = 0.5 * (l0 + l1);
    const double variance = 0.5 * ((l0 - mean) * (l0 - mean) + (l1 - mean) * (l1 - mean));
    const double loss = lambda * variance - (std::abs(l0) + std::abs(l1));
    auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    // d variance / d l_i = (l_i - mean) for two logits
    const std::array<double, 2> grad = {lambda * (l0 - mean) - sgn(l0), lambda * (l1 - mean) - sgn(l1)};
    return {loss, grad};
}

namespace {

Tensor uniform_noise(const std::vector<std::size_t>& shape, float lo, float hi, SplitMix64& rng) {
    Tensor t(shape);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

std::array<float, 2> softmax2(const std::array<float, 2>& l) {
    const double m = std::max(l[0], l[1]);
    const double e0 = std::exp(static_cast<double>(l[0]) - m);
    const double e1 = std::exp(static_cast<double>(l[1]) - m);
    const double s = e0 + e1;
    return {static_cast<float>(e0 / s), static_cast<float>(e1 / s)};
}

double abs_gap(const std::array<float, 2>& l) {
    return std::abs(static_cast<double>(l[0]) - static_cast<double>(l[1]));
}

double abs_sum(const std::array<float, 2>& l) {
    return std::abs(static_cast<double>(l[0])) + std::abs(static_cast<double>(l[1]));
}

void descend_clamped(Tensor& x, const Tensor& grad, double lr, float lo, float hi) {
    for (std::size_t i = 0; i < x.numel(); ++i)
        x.data[i] = static_cast<float>(static_cast<double>(x.data[i]) - lr * static_cast<double>(grad.data[i]));
    x.clamp(lo, hi);
}

} // namespace

Stage1Result stage1_forge(const CompositeModel& composite, const ForgeConfig& config, SplitMix64& rng) {
    config.validate();
    Stage1Result result;
    Tensor x = uniform_noise(composite.base().input_shape, config.clamp_lo, config.clamp_hi, rng);

    for (std::size_t iter = 0;; ++iter) {
        const ForwardTrace trace = composite.trace(x);
        const std::array<float, 2> logits = composite.binary_logits_from_base(trace.logits());
        const auto [loss, logit_grad] = combined_loss(logits, config.lambda);
        if (!std::isfinite(loss))
            throw NumericalError("stage1: non-finite loss at iteration " + std::to_string(iter));
        if (iter == 0) result.initial_activation = abs_sum(logits);

        const double gap = abs_gap(logits);
        if (gap < config.stage1_gap_tol || iter >= config.stage1_max_iters) {
            result.final_gap = gap;
            result.activation = abs_sum(logits);
            result.iters = iter;
            result.candidate = std::move(x);
            return result;
        }
        const Tensor input_grad = composite.backward_to_input(
            trace, {static_cast<float>(logit_grad[0]), static_cast<float>(logit_grad[1])});
        descend_clamped(x, input_grad, config.stage1_lr, config.clamp_lo, config.clamp_hi);
    }
}

SensitivePair stage2_cross(const CompositeModel& composite, const Tensor& candidate, const ForgeConfig& config) {
    config.validate();
    Tensor x = candidate;
    ForwardTrace trace = composite.trace(x);
    std::array<float, 2> logits = composite.binary_logits_from_base(trace.logits());
    if (abs_gap(logits) == 0.0)
        throw CrossingError("stage2: candidate sits exactly on the boundary, label undefined");
    const std::size_t y = binary_top1(logits);
    const std::size_t base_y = top1(trace.logits());

    auto sign_step = [&](const Tensor& grad) {
        Tensor next = x;
        const float alpha = static_cast<float>(config.stage2_alpha);
        for (std::size_t i = 0; i < next.numel(); ++i) {
            const float g = grad.data[i];
            const float s = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
            next.data[i] += alpha * s;
        }
        next.clamp(config.clamp_lo, config.clamp_hi);
        // float rounding of x + alpha can overshoot alpha by half an ulp of x,
        // which at pixel scale ~1 is visible against a tiny alpha; pull such
        // pixels back so the pair is never more than alpha apart anywhere
        for (std::size_t i = 0; i < next.numel(); ++i) {
            while (std::abs(static_cast<double>(next.data[i]) - static_cast<double>(x.data[i])) >
                   config.stage2_alpha)
                next.data[i] = std::nextafterf(next.data[i], x.data[i]);
        }
        return next;
    };

    for (std::size_t step = 0; step < config.stage2_max_steps; ++step) {
        Tensor input_grad;
        if (config.stage2_use_binary_loss) {
            // grad of CE(binary logits, y) on the logits: softmax - one_hot
            const std::array<float, 2> p = softmax2(logits);
            const std::array<float, 2> g = {p[0] - (y == 0 ? 1.0f : 0.0f), p[1] - (y == 1 ? 1.0f : 0.0f)};
            input_grad = composite.backward_to_input(trace, g);
        } else {
            auto [loss, lgrad] = softmax_cross_entropy(trace.logits(), base_y);
            (void)loss;
            input_grad = backward(composite.base(), trace, lgrad).input_grad;
        }

        Tensor x_next = sign_step(input_grad);
        ForwardTrace trace_next = composite.trace(x_next);
        const std::array<float, 2> logits_next = composite.binary_logits_from_base(trace_next.logits());
        if (!std::isfinite(logits_next[0]) || !std::isfinite(logits_next[1]))
            throw NumericalError("stage2: non-finite logits at step " + std::to_string(step));

        if (binary_top1(logits_next) != y) {
            if (abs_gap(logits_next) == 0.0)
                throw CrossingError("stage2: landed exactly on the boundary");
            SensitivePair pair;
            pair.sample_a = std::move(x);
            pair.sample_b = std::move(x_next);
            pair.label_a = y;
            pair.label_b = 1 - y;
            pair.base_label_a = top1(trace.logits());
            pair.base_label_b = top1(trace_next.logits());
            pair.margin_a = static_cast<float>(abs_gap(logits));
            pair.margin_b = static_cast<float>(abs_gap(logits_next));
            return pair;
        }
        x = std::move(x_next);
        trace = std::move(trace_next);
        logits = logits_next;
    }
    throw CrossingError("stage2: no boundary crossing within " + std::to_string(config.stage2_max_steps) + " steps");
}

SampleBundle forge_pairs(const CompositeModel& composite, std::size_t count, const ForgeConfig& config,
                         const std::string& user_id) {
    config.validate();
    if (count < 1) throw ArgumentError("forge_pairs: count must be >= 1");

    SampleBundle bundle;
    bundle.user_id = user_id;
    bundle.n_classes = composite.head().n_classes;
    bundle.sample_shape = composite.base().input_shape;
    bundle.model_fingerprint = model_fingerprint(composite.base());
    bundle.config = config;

    for (std::size_t i = 0; i < count; ++i) {
        bool done = false;
        std::string attempt_log;
        for (std::size_t attempt = 0; attempt <= config.retries_per_pair && !done; ++attempt) {
            const std::uint64_t pair_seed = SplitMix64::derive(SplitMix64::derive(config.seed, i), attempt);
            SplitMix64 rng(pair_seed);
            std::optional<Stage1Result> s1;
            try {
                s1 = stage1_forge(composite, config, rng);
                SensitivePair pair = stage2_cross(composite, s1->candidate, config);
                pair.activation_score = static_cast<float>(s1->activation);
                pair.user_id = user_id;
                bundle.pairs.push_back(std::move(pair));
                done = true;
            } catch (const CrossingError& e) {
                attempt_log += " [attempt " + std::to_string(attempt) +
                               (s1 ? " stage1 gap " + std::to_string(s1->final_gap) + " after " +
                                         std::to_string(s1->iters) + " iters; "
                                   : " ") +
                               e.what() + "]";
            } catch (const NumericalError& e) {
                attempt_log += " [attempt " + std::to_string(attempt) + " " + e.what() + "]";
            }
        }
        if (!done) {
            const double fraction = static_cast<double>(i) / static_cast<double>(count);
            throw ForgeError("forge_pairs: retry budget exhausted at pair " + std::to_string(i) + " (" +
                             std::to_string(i) + "/" + std::to_string(count) + " collected, success fraction " +
                             std::to_string(fraction) + ")" + attempt_log);
        }
    }
    return bundle;
}

std::vector<Tensor> dbi_forge(const Model& model, std::size_t count, double lr, std::size_t max_iters,
                              std::uint64_t seed) {
    validate_model(model);
    if (lr < 0.0) throw ArgumentError("dbi_forge: lr must be >= 0");
    const std::size_t n = model.num_classes;
    std::vector<Tensor> samples;
    samples.reserve(count);

    for (std::size_t k = 0; k < count; ++k) {
        SplitMix64 rng(SplitMix64::derive(seed, k));
        Tensor x = uniform_noise(model.input_shape, 0.0f, 1.0f, rng);
        for (std::size_t iter = 0; iter < max_iters; ++iter) {
            const ForwardTrace trace = forward_trace(model, x);
            const Tensor& logits = trace.logits();
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += logits.data[i];
            mean /= static_cast<double>(n);
            Tensor lgrad({n});
            for (std::size_t i = 0; i < n; ++i)
                lgrad.data[i] = static_cast<float>(2.0 / static_cast<double>(n) * (logits.data[i] - mean));
            const Tensor input_grad = backward(model, trace, lgrad).input_grad;
            descend_clamped(x, input_grad, lr, 0.0f, 1.0f);
        }
        samples.push_back(std::move(x));
    }
    return samples;
}

std::vector<std::size_t> sample_indices(std::size_t dataset_size, std::size_t count, std::uint64_t seed) {
    if (count > dataset_size)
        throw ArgumentError("requested " + std::to_string(count) + " samples from a set of " +
                            std::to_string(dataset_size));
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(seed);
    rng.shuffle(order);
    order.resize(count);
    return order;
}

std::vector<Tensor> validset_baseline(const Dataset& dataset, std::size_t count, std::uint64_t seed) {
    std::vector<Tensor> out;
    out.reserve(count);
    for (std::size_t idx : sample_indices(dataset.size(), count, seed)) out.push_back(dataset.inputs[idx]);
    return out;
}

// ---- bundle serialization ----

void to_json(nlohmann::json& j, const ForgeConfig& c) {
    j = nlohmann::json{{"lambda", c.lambda},
                       {"stage1_lr", c.stage1_lr},
                       {"stage1_max_iters", c.stage1_max_iters},
                       {"stage1_gap_tol", c.stage1_gap_tol},
                       {"stage2_alpha", c.stage2_alpha},
                       {"stage2_max_steps", c.stage2_max_steps},
                       {"seed", c.seed},
                       {"clamp_lo", c.clamp_lo},
                       {"clamp_hi", c.clamp_hi},
                       {"stage2_use_binary_loss", c.stage2_use_binary_loss},
                       {"retries_per_pair", c.retries_per_pair}};
}

void from_json(const nlohmann::json& j, ForgeConfig& c) {
    c = ForgeConfig{};
    if (j.contains("lambda")) j.at("lambda").get_to(c.lambda);
    if (j.contains("stage1_lr")) j.at("stage1_lr").get_to(c.stage1_lr);
    if (j.contains("stage1_max_iters")) j.at("stage1_max_iters").get_to(c.stage1_max_iters);
    if (j.contains("stage1_gap_tol")) j.at("stage1_gap_tol").get_to(c.stage1_gap_tol);
    if (j.contains("stage2_alpha")) j.at("stage2_alpha").get_to(c.stage2_alpha);
    if (j.contains("stage2_max_steps")) j.at("stage2_max_steps").get_to(c.stage2_max_steps);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("clamp_lo")) j.at("clamp_lo").get_to(c.clamp_lo);
    if (j.contains("clamp_hi")) j.at("clamp_hi").get_to(c.clamp_hi);
    if (j.contains("stage2_use_binary_loss")) j.at("stage2_use_binary_loss").get_to(c.stage2_use_binary_loss);
    if (j.contains("retries_per_pair")) j.at("retries_per_pair").get_to(c.retries_per_pair);
}

namespace {

constexpr char kBundleMagic[4] = {'F', 'M', 'B', '1'};

nlohmann::json bundle_header(const SampleBundle& bundle) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const SensitivePair& p : bundle.pairs) {
        pairs.push_back({{"label_a", p.label_a},
                         {"label_b", p.label_b},
                         {"base_label_a", p.base_label_a},
                         {"base_label_b", p.base_label_b},
                         {"margin_a", p.margin_a},
                         {"margin_b", p.margin_b},
                         {"activation_score", p.activation_score}});
    }
    return nlohmann::json{{"user_id", bundle.user_id},
                          {"n_classes", bundle.n_classes},
                          {"sample_shape", bundle.sample_shape},
                          {"model_fingerprint", bundle.model_fingerprint},
                          {"pair_count", bundle.pairs.size()},
                          {"config", bundle.config},
                          {"pairs", pairs}};
}

SampleBundle bundle_from_header(const nlohmann::json& doc) {
    SampleBundle bundle;
    try {
        doc.at("user_id").get_to(bundle.user_id);
        doc.at("n_classes").get_to(bundle.n_classes);
        doc.at("sample_shape").get_to(bundle.sample_shape);
        doc.at("model_fingerprint").get_to(bundle.model_fingerprint);
        bundle.config = doc.at("config").get<ForgeConfig>();
        const std::size_t count = doc.at("pair_count").get<std::size_t>();
        const auto& pairs = doc.at("pairs");
        if (!pairs.is_array() || pairs.size() != count)
            throw FormatError("bundle pair metadata does not match pair_count");
        if (count == 0) throw FormatError("bundle holds no pairs");
        for (const auto& pj : pairs) {
            SensitivePair p;
            pj.at("label_a").get_to(p.label_a);
            pj.at("label_b").get_to(p.label_b);
            pj.at("base_label_a").get_to(p.base_label_a);
            pj.at("base_label_b").get_to(p.base_label_b);
            pj.at("margin_a").get_to(p.margin_a);
            pj.at("margin_b").get_to(p.margin_b);
            pj.at("activation_score").get_to(p.activation_score);
            p.user_id = bundle.user_id;
            bundle.pairs.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bundle header error: " + std::string(e.what()));
    }
    return bundle;
}

} // namespace

void save_bundle(const SampleBundle& bundle, const std::string& path, bool json_mode) {
    if (bundle.pairs.empty()) throw ArgumentError("save_bundle: bundle holds no pairs");
    const std::size_t numel = shape_numel(bundle.sample_shape);
    for (const SensitivePair& p : bundle.pairs)
        if (p.sample_a.numel() != numel || p.sample_b.numel() != numel)
            throw ShapeError("save_bundle: sample shape mismatch");

    nlohmann::json header = bundle_header(bundle);

    if (json_mode) {
        for (std::size_t i = 0; i < bundle.pairs.size(); ++i) {
            header["pairs"][i]["a"] = bundle.pairs[i].sample_a.data;
            header["pairs"][i]["b"] = bundle.pairs[i].sample_b.data;
        }
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw FormatError("cannot open " + path + " for writing");
        f << header.dump(2) << "\n";
        return;
    }

    const std::string header_str = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f.write(kBundleMagic, 4);
    const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
    char lenbuf[4] = {static_cast<char>(hlen), static_cast<char>(hlen >> 8), static_cast<char>(hlen >> 16),
                      static_cast<char>(hlen >> 24)};
    f.write(lenbuf, 4);
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const SensitivePair& p : bundle.pairs) {
        f.write(reinterpret_cast<const char*>(p.sample_a.data.data()), static_cast<std::streamsize>(numel * 4));
        f.write(reinterpret_cast<const char*>(p.sample_b.data.data()), static_cast<std::streamsize>(numel * 4));
    }
    if (!f) throw FormatError("write failed for " + path);
}

SampleBundle load_bundle(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    const int first = f.peek();
    if (first == '{') {
        nlohmann::json doc;
        try {
            f >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bundle parse error: " + std::string(e.what()));
        }
        SampleBundle bundle = bundle_from_header(doc);
        const auto& pairs = doc.at("pairs");
        for (std::size_t i = 0; i < bundle.pairs.size(); ++i) {
            try {
                bundle.pairs[i].sample_a = Tensor(bundle.sample_shape, pairs[i].at("a").get<std::vector<float>>());
                bundle.pairs[i].sample_b = Tensor(bundle.sample_shape, pairs[i].at("b").get<std::vector<float>>());
            } catch (const nlohmann::json::exception& e) {
                throw FormatError("bundle pixel data error: " + std::string(e.what()));
            }
        }
        return bundle;
    }

    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kBundleMagic, 4) != 0)
        throw FormatError("not a bundle file (bad magic)");
    unsigned char lenbuf[4];
    if (!f.read(reinterpret_cast<char*>(lenbuf), 4)) throw FormatError("bundle truncated");
    const std::uint32_t hlen = static_cast<std::uint32_t>(lenbuf[0]) | static_cast<std::uint32_t>(lenbuf[1]) << 8 |
                               static_cast<std::uint32_t>(lenbuf[2]) << 16 |
                               static_cast<std::uint32_t>(lenbuf[3]) << 24;
    std::string header_str(hlen, '\0');
    if (!f.read(header_str.data(), hlen)) throw FormatError("bundle truncated in header");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bundle header parse error: " + std::string(e.what()));
    }
    SampleBundle bundle = bundle_from_header(doc);
    const std::size_t numel = shape_numel(bundle.sample_shape);
    for (SensitivePair& p : bundle.pairs) {
        std::vector<float> a(numel), b(numel);
        if (!f.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(numel * 4)) ||
            !f.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(numel * 4)))
            throw FormatError("bundle truncated in sample data");
        p.sample_a = Tensor(bundle.sample_shape, std::move(a));
        p.sample_b = Tensor(bundle.sample_shape, std::move(b));
    }
    if (f.peek() != EOF) throw FormatError("trailing bytes after bundle data");
    return bundle;
}

} // namespace fmk
