#ifndef FMK_DATASET_HPP
#define FMK_DATASET_HPP

#include <cstdint>
#include <string>
#include <utility>

#include "fmk/nn.hpp"

namespace fmk {

/// Desk-scale stand-in for an image classification set: per class a fixed
/// seeded binary prototype pattern, plus per-sample Gaussian noise, clamped
/// to [0,1]. Train and validation draws are disjoint.
struct SyntheticSpec {
    std::size_t num_classes = 8;
    std::size_t image_side = 8;
    std::size_t samples_per_class = 100;
    std::size_t val_per_class = 25;
    double noise_sigma = 0.15;
    std::uint64_t seed = 0;
};

std::pair<Dataset, Dataset> synth_dataset(const SyntheticSpec& spec);

/// IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian header),
/// pixels scaled to [0,1] by /255, seeded split into train/validation.
/// Train gets round(split * n) samples.
std::pair<Dataset, Dataset> load_idx(const std::string& image_path, const std::string& label_path,
                                     double split, std::uint64_t seed);

} // namespace fmk

#endif
