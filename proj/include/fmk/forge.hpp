#ifndef FMK_FORGE_HPP
#define FMK_FORGE_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmk/keyed_head.hpp"
#include "fmk/nn.hpp"
#include "fmk/rng.hpp"

namespace fmk {

struct ForgeConfig {
    double lambda = 5.0;              // weight of the variance term in the combined loss
    double stage1_lr = 1e-3;
    std::size_t stage1_max_iters = 10000;
    double stage1_gap_tol = 1e-2;     // stop when |binary logit gap| drops below this
    double stage2_alpha = 1e-4;       // signed-gradient step size
    std::size_t stage2_max_steps = 10000;
    std::uint64_t seed = 0;
    float clamp_lo = 0.0f;
    float clamp_hi = 1.0f;
    bool stage2_use_binary_loss = true; // ascend the composite 2-way loss (vs. base N-way)
    std::size_t retries_per_pair = 5;

    void validate() const;
};

/// Two inputs one signed-gradient step apart, straddling the keyed binary
/// boundary of the composite they were forged on. Labels and margins are the
/// values recorded at creation time; base_* are the N-way Top-1 labels of
/// the base model, kept for the N-way flip diagnostic.
struct SensitivePair {
    Tensor sample_a;          // last point before the boundary crossing
    Tensor sample_b;          // first point after
    std::size_t label_a = 0;  // binary Top-1 at creation; label_a != label_b
    std::size_t label_b = 0;
    std::size_t base_label_a = 0;
    std::size_t base_label_b = 0;
    float margin_a = 0.0f;    // |binary logit gap| at creation
    float margin_b = 0.0f;
    float activation_score = 0.0f; // sum |binary logits| at end of stage 1
    std::string user_id;
};

struct SampleBundle {
    std::vector<SensitivePair> pairs;
    std::string user_id;
    std::size_t n_classes = 0;
    std::vector<std::size_t> sample_shape;
    std::string model_fingerprint; // hex SHA-256 of the model file bytes
    ForgeConfig config;
};

/// Combined objective over the two binary logits:
///   loss = lambda * variance(logits) - sum_i |logit_i|
/// with population variance. Returns the loss and its exact gradient on the
/// logits, using sign(0) = 0.
std::pair<double, std::array<double, 2>> combined_loss(const std::array<float, 2>& binary_logits, double lambda);

struct Stage1Result {
    Tensor candidate;
    double final_gap = 0.0;
    double activation = 0.0;         // sum |binary logits| at exit
    double initial_activation = 0.0; // same measure at the starting noise
    std::size_t iters = 0;
};

/// Stage 1: start from per-pixel uniform [0,1] noise and gradient-descend
/// the combined loss on the input, clamping to [clamp_lo, clamp_hi] after
/// every update. Stops when the binary logit gap falls below
/// stage1_gap_tol or after stage1_max_iters.
Stage1Result stage1_forge(const CompositeModel& composite, const ForgeConfig& config, SplitMix64& rng);

/// Stage 2: from a stage-1 candidate with Top-1 label y, repeat
///   x <- clamp(x + alpha * sign(grad_x J(w, x, y)))
/// (untargeted ascent against the frozen label y) and stop at the first step
/// where the binary Top-1 flips. Returns the recorded pair; throws
/// CrossingError when no flip happens within stage2_max_steps.
SensitivePair stage2_cross(const CompositeModel& composite, const Tensor& candidate, const ForgeConfig& config);

/// Runs stage 1 + stage 2 with per-pair derived seeds until `count` pairs
/// are collected, retrying failed crossings with fresh seeds up to
/// retries_per_pair extra attempts each. Deterministic in (model bytes,
/// head key, config, seed).
SampleBundle forge_pairs(const CompositeModel& composite, std::size_t count, const ForgeConfig& config,
                         const std::string& user_id);

/// Boundary-approach baseline: minimizes the population variance of the N
/// base logits by input gradient descent from uniform noise (no head, no
/// activation term, no pairing).
std::vector<Tensor> dbi_forge(const Model& model, std::size_t count, double lr, std::size_t max_iters,
                              std::uint64_t seed);

/// Seeded uniform draw without replacement; returned in draw order.
std::vector<std::size_t> sample_indices(std::size_t dataset_size, std::size_t count, std::uint64_t seed);
std::vector<Tensor> validset_baseline(const Dataset& dataset, std::size_t count, std::uint64_t seed);

void save_bundle(const SampleBundle& bundle, const std::string& path, bool json_mode = false);
SampleBundle load_bundle(const std::string& path);

void to_json(nlohmann::json& j, const ForgeConfig& c);
void from_json(const nlohmann::json& j, ForgeConfig& c);

} // namespace fmk

#endif
