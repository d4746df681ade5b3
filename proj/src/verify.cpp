#include "fmk/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "fmk/errors.hpp"
#include "fmk/rng.hpp"
#include "fmk/serialize.hpp"

namespace fmk {

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MarginSummary summarize(const std::vector<double>& values) {
    MarginSummary s;
    if (values.empty()) return s;
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    s.median = median(values);
    return s;
}

namespace {

struct Replay {
    CompositeModel composite;
    std::vector<std::array<float, 2>> bin_a, bin_b;
    std::vector<std::size_t> base_a, base_b;
};

Replay replay_bundle(const SampleBundle& bundle, const Model& model, const KeyRegistry& registry,
                     const std::string& user_id) {
    if (bundle.pairs.empty()) throw ArgumentError("verify: bundle holds no pairs");
    if (model.input_shape != bundle.sample_shape)
        throw ShapeError("verify: model input shape " + shape_str(model.input_shape) +
                         " != bundle sample shape " + shape_str(bundle.sample_shape));
    if (model.num_classes != bundle.n_classes)
        throw ShapeError("verify: model classes != bundle classes");

    const std::uint64_t key = registry.key_for(user_id); // throws KeyError when unknown
    Replay r{CompositeModel(model, derive_head(key, model.num_classes)), {}, {}, {}, {}};
    for (const SensitivePair& p : bundle.pairs) {
        const Tensor la = forward(model, p.sample_a);
        const Tensor lb = forward(model, p.sample_b);
        r.bin_a.push_back(r.composite.binary_logits_from_base(la));
        r.bin_b.push_back(r.composite.binary_logits_from_base(lb));
        r.base_a.push_back(top1(la));
        r.base_b.push_back(top1(lb));
    }
    return r;
}

double gap_of(const std::array<float, 2>& l) {
    return std::abs(static_cast<double>(l[0]) - static_cast<double>(l[1]));
}

} // namespace

DetectionReport verify(const SampleBundle& bundle, const Model& model, const KeyRegistry& registry,
                       const std::string& user_id) {
    const Replay r = replay_bundle(bundle, model, registry, user_id);
    const std::size_t n = bundle.pairs.size();

    DetectionReport report;
    report.user_id = user_id;
    report.pair_count = n;
    report.fingerprint_recorded = bundle.model_fingerprint;
    report.fingerprint_current = model_fingerprint(model);
    report.fingerprint_match = report.fingerprint_recorded == report.fingerprint_current;

    std::size_t paired_hits = 0, unpaired_hits = 0, base_flips = 0;
    std::vector<double> rec_margins, cur_margins;
    for (std::size_t i = 0; i < n; ++i) {
        const SensitivePair& p = bundle.pairs[i];
        const bool flip_a = binary_top1(r.bin_a[i]) != p.label_a;
        const bool flip_b = binary_top1(r.bin_b[i]) != p.label_b;
        if (flip_a || flip_b) ++paired_hits;
        if (flip_a) ++unpaired_hits;
        if (r.base_a[i] != p.base_label_a) ++base_flips;
        if (r.base_b[i] != p.base_label_b) ++base_flips;
        rec_margins.push_back(p.margin_a);
        rec_margins.push_back(p.margin_b);
        cur_margins.push_back(gap_of(r.bin_a[i]));
        cur_margins.push_back(gap_of(r.bin_b[i]));
    }
    report.paired_rate = static_cast<double>(paired_hits) / static_cast<double>(n);
    report.unpaired_rate = static_cast<double>(unpaired_hits) / static_cast<double>(n);
    report.base_flip_rate = static_cast<double>(base_flips) / static_cast<double>(2 * n);
    report.margins_recorded = summarize(rec_margins);
    report.margins_current = summarize(cur_margins);
    return report;
}

std::vector<std::pair<std::size_t, std::size_t>> pair_randomly(std::size_t count, std::uint64_t seed,
                                                               bool* dropped_one) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(seed);
    rng.shuffle(order);
    const bool odd = count % 2 == 1;
    if (odd) std::cerr << "pair_randomly: odd sample count " << count << ", dropping one\n";
    if (dropped_one) *dropped_one = odd;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(count / 2);
    for (std::size_t i = 0; i + 1 < count; i += 2) pairs.emplace_back(order[i], order[i + 1]);
    return pairs;
}

std::vector<std::size_t> record_labels(const Model& model, const std::vector<Tensor>& samples) {
    std::vector<std::size_t> labels;
    labels.reserve(samples.size());
    for (const Tensor& s : samples) labels.push_back(top1(forward(model, s)));
    return labels;
}

double flip_rate(const Model& model, const std::vector<Tensor>& samples, const std::vector<std::size_t>& recorded) {
    if (samples.size() != recorded.size()) throw ArgumentError("flip_rate: label count mismatch");
    if (samples.empty()) throw ArgumentError("flip_rate: no samples");
    std::size_t flips = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (top1(forward(model, samples[i])) != recorded[i]) ++flips;
    return static_cast<double>(flips) / static_cast<double>(samples.size());
}

double paired_flip_rate(const Model& model, const std::vector<Tensor>& samples,
                        const std::vector<std::size_t>& recorded,
                        const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    if (samples.size() != recorded.size()) throw ArgumentError("paired_flip_rate: label count mismatch");
    if (pairs.empty()) throw ArgumentError("paired_flip_rate: no pairs");
    std::size_t hits = 0;
    for (const auto& [a, b] : pairs) {
        if (a >= samples.size() || b >= samples.size()) throw ArgumentError("paired_flip_rate: index out of range");
        const bool fa = top1(forward(model, samples[a])) != recorded[a];
        const bool fb = top1(forward(model, samples[b])) != recorded[b];
        if (fa || fb) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

DispersionStats logit_dispersion(const Model& model, const std::vector<Tensor>& samples) {
    if (samples.empty()) throw ArgumentError("logit_dispersion: no samples");
    DispersionStats stats;
    std::vector<double> defined;
    for (const Tensor& s : samples) {
        const Tensor logits = forward(model, s);
        const std::size_t n = logits.numel();
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += logits.data[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = logits.data[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n); // population variance
        if (std::abs(mean) < 1e-9) {
            stats.cv.push_back(0.0);
            stats.undefined.push_back(true);
            ++stats.undefined_count;
        } else {
            const double cv = std::abs(std::sqrt(var) / mean);
            stats.cv.push_back(cv);
            stats.undefined.push_back(false);
            defined.push_back(cv);
        }
    }
    if (!defined.empty()) {
        stats.mean_cv = std::accumulate(defined.begin(), defined.end(), 0.0) / static_cast<double>(defined.size());
        stats.median_cv = median(defined);
    }
    return stats;
}

MarginProfile margin_profile(const SampleBundle& bundle, const Model& model, const KeyRegistry& registry,
                             const std::string& user_id) {
    const Replay r = replay_bundle(bundle, model, registry, user_id);
    MarginProfile profile;
    for (std::size_t i = 0; i < bundle.pairs.size(); ++i) {
        const SensitivePair& p = bundle.pairs[i];
        profile.recorded_a.push_back(p.margin_a);
        profile.recorded_b.push_back(p.margin_b);
        profile.recorded_activation.push_back(p.activation_score);
        profile.current_a.push_back(gap_of(r.bin_a[i]));
        profile.current_b.push_back(gap_of(r.bin_b[i]));
        profile.activation_a.push_back(std::abs(static_cast<double>(r.bin_a[i][0])) +
                                       std::abs(static_cast<double>(r.bin_a[i][1])));
        profile.activation_b.push_back(std::abs(static_cast<double>(r.bin_b[i][0])) +
                                       std::abs(static_cast<double>(r.bin_b[i][1])));
    }
    return profile;
}

void to_json(nlohmann::json& j, const MarginSummary& s) {
    j = nlohmann::json{{"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"median", s.median}};
}

void from_json(const nlohmann::json& j, MarginSummary& s) {
    j.at("min").get_to(s.min);
    j.at("max").get_to(s.max);
    j.at("mean").get_to(s.mean);
    j.at("median").get_to(s.median);
}

void to_json(nlohmann::json& j, const DetectionReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    j = nlohmann::json{{"tamper_kind", r.tamper_kind},
                       {"tamper_params", r.tamper_params},
                       {"user_id", r.user_id},
                       {"pair_count", r.pair_count},
                       {"paired_rate", r.paired_rate},
                       {"unpaired_rate", r.unpaired_rate},
                       {"base_flip_rate", r.base_flip_rate},
                       {"validset_rate", opt(r.validset_rate)},
                       {"dbi_single_rate", opt(r.dbi_single_rate)},
                       {"dbi_paired_rate", opt(r.dbi_paired_rate)},
                       {"fingerprint_recorded", r.fingerprint_recorded},
                       {"fingerprint_current", r.fingerprint_current},
                       {"fingerprint_match", r.fingerprint_match},
                       {"margins_recorded", r.margins_recorded},
                       {"margins_current", r.margins_current}};
}

void from_json(const nlohmann::json& j, DetectionReport& r) {
    r = DetectionReport{};
    auto opt = [&](const char* field, std::optional<double>& out) {
        if (j.contains(field) && !j.at(field).is_null()) out = j.at(field).get<double>();
    };
    j.at("tamper_kind").get_to(r.tamper_kind);
    j.at("tamper_params").get_to(r.tamper_params);
    j.at("user_id").get_to(r.user_id);
    j.at("pair_count").get_to(r.pair_count);
    j.at("paired_rate").get_to(r.paired_rate);
    j.at("unpaired_rate").get_to(r.unpaired_rate);
    j.at("base_flip_rate").get_to(r.base_flip_rate);
    opt("validset_rate", r.validset_rate);
    opt("dbi_single_rate", r.dbi_single_rate);
    opt("dbi_paired_rate", r.dbi_paired_rate);
    j.at("fingerprint_recorded").get_to(r.fingerprint_recorded);
    j.at("fingerprint_current").get_to(r.fingerprint_current);
    j.at("fingerprint_match").get_to(r.fingerprint_match);
    j.at("margins_recorded").get_to(r.margins_recorded);
    j.at("margins_current").get_to(r.margins_current);
}

void save_report(const DetectionReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << nlohmann::json(report).dump(2) << "\n";
    if (!f) throw FormatError("write failed for " + path);
}

DetectionReport load_report(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    nlohmann::json doc;
    try {
        f >> doc;
        return doc.get<DetectionReport>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("report parse error: " + std::string(e.what()));
    }
}

} // namespace fmk
