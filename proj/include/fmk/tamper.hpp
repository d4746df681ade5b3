#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include <json.hpp>

#include "fmk/nn.hpp"

namespace fmk {

// small square marker stamped into a fixed corner of the input
struct TriggerPatch {
    std::size_t side = 2;
    std::size_t row = 0; // top-left corner of the patch
    std::size_t col = 0;
    float value = 1.0f;
};

struct FineTuneSpec {
    double lr = 1e-4;
    std::size_t steps = 100;
    std::size_t batch_size = 32;
};

struct BackdoorSpec {
    TriggerPatch trigger;
    std::size_t target_label = 0;
    std::size_t n_triggers = 10;
    double lr = 1e-5;
    std::size_t max_steps = 200000;
};

struct PruneSpec {
    double rate = 0.001; // fraction of weights zeroed, strictly inside (0,1)
};

struct QuantizeSpec {
    int bits = 8;
};

struct TamperSpec {
    std::variant<FineTuneSpec, BackdoorSpec, PruneSpec, QuantizeSpec> op = FineTuneSpec{};
    std::uint64_t seed = 0;

    std::string kind_name() const;
    std::string params() const; // human/CSV form, no commas
};

Tensor apply_trigger(const Tensor& sample, const TriggerPatch& patch);

// mixes trigger-stamped samples (relabeled to the target) into clean batches and
// fine-tunes until every triggered sample lands on the target label
Model implant_backdoor(const Model& model, const Dataset& dataset, const BackdoorSpec& spec, std::uint64_t seed,
                       std::size_t* steps_out = nullptr);

Model fine_tune(const Model& model, const Dataset& dataset, double lr, std::size_t steps,
                std::size_t batch_size = 32, std::uint64_t seed = 0);

Model prune(const Model& model, double rate);

Model quantize(const Model& model, int bits);

Model apply_tamper(const Model& model, const Dataset& dataset, const TamperSpec& spec);

void to_json(nlohmann::json& j, const TriggerPatch& p);
void from_json(const nlohmann::json& j, TriggerPatch& p);
void to_json(nlohmann::json& j, const TamperSpec& spec);
void from_json(const nlohmann::json& j, TamperSpec& spec);

} // namespace fmk
