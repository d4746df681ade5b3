#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmk/forge.hpp"
#include "fmk/keyed_head.hpp"
#include "fmk/nn.hpp"

namespace fmk {

struct MarginSummary {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double median = 0.0;
};

struct DetectionReport {
    std::string tamper_kind;   // empty when the tamper is unknown / none
    std::string tamper_params;
    std::string user_id;
    std::size_t pair_count = 0;

    double paired_rate = 0.0;    // >= 1 member of the pair flipped its composite Top-1
    double unpaired_rate = 0.0;  // sample_a alone flipped
    double base_flip_rate = 0.0; // N-way Top-1 flips over all 2*pair_count samples, diagnostic

    // filled by the sweep harness; absent when only the bundle was replayed
    std::optional<double> validset_rate;
    std::optional<double> dbi_single_rate;
    std::optional<double> dbi_paired_rate;

    std::string fingerprint_recorded;
    std::string fingerprint_current;
    bool fingerprint_match = false;

    MarginSummary margins_recorded;
    MarginSummary margins_current;
};

struct DispersionStats {
    std::vector<double> cv;      // |population std / mean| of the N logits, per sample
    std::vector<bool> undefined; // |mean| < 1e-9: CV left at 0 and flagged instead
    std::size_t undefined_count = 0;
    double mean_cv = 0.0;   // over defined samples
    double median_cv = 0.0; // over defined samples
};

struct MarginProfile {
    std::vector<double> recorded_a, recorded_b; // forge-time |binary gap|
    std::vector<double> current_a, current_b;   // |binary gap| on the model under test
    std::vector<double> activation_a, activation_b;
    std::vector<double> recorded_activation;
};

DetectionReport verify(const SampleBundle& bundle, const Model& model, const KeyRegistry& registry,
                       const std::string& user_id);

// seeded disjoint pairing of baseline sample indices; odd trailing index dropped
std::vector<std::pair<std::size_t, std::size_t>> pair_randomly(std::size_t count, std::uint64_t seed,
                                                               bool* dropped_one = nullptr);

std::vector<std::size_t> record_labels(const Model& model, const std::vector<Tensor>& samples);
double flip_rate(const Model& model, const std::vector<Tensor>& samples, const std::vector<std::size_t>& recorded);
double paired_flip_rate(const Model& model, const std::vector<Tensor>& samples,
                        const std::vector<std::size_t>& recorded,
                        const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

DispersionStats logit_dispersion(const Model& model, const std::vector<Tensor>& samples);

MarginProfile margin_profile(const SampleBundle& bundle, const Model& model, const KeyRegistry& registry,
                             const std::string& user_id);

double median(std::vector<double> values);
MarginSummary summarize(const std::vector<double>& values);

void to_json(nlohmann::json& j, const MarginSummary& s);
void from_json(const nlohmann::json& j, MarginSummary& s);
void to_json(nlohmann::json& j, const DetectionReport& r);
void from_json(const nlohmann::json& j, DetectionReport& r);

void save_report(const DetectionReport& report, const std::string& path);
DetectionReport load_report(const std::string& path);

} // namespace fmk
