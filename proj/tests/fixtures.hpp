#ifndef FMK_TESTS_FIXTURES_HPP
#define FMK_TESTS_FIXTURES_HPP

// Shared test fixtures. The toy stack (dataset + trained model + key) takes a
// few seconds to build, so it is constructed once on first use and handed out
// by reference; tests must not mutate it in place.

#include <cstdint>
#include <vector>

#include "fmk/dataset.hpp"
#include "fmk/experiment.hpp"
#include "fmk/keyed_head.hpp"
#include "fmk/nn.hpp"

#include "oracles.hpp"

namespace fixtures {

struct Toy {
    fmk::Dataset train;
    fmk::Dataset val;
    fmk::Model model;
    std::uint64_t key = 0x1234;
    fmk::BinaryHead head;
    double val_accuracy = 0.0;
};

inline const Toy& toy() {
    static const Toy t = [] {
        Toy out;
        fmk::SyntheticSpec spec;
        spec.seed = 42;
        spec.noise_sigma = 0.30;
        auto sets = fmk::synth_dataset(spec);
        out.train = std::move(sets.first);
        out.val = std::move(sets.second);
        out.model = fmk::build_model(fmk::default_mlp_arch(spec.num_classes), out.train.input_shape,
                                     spec.num_classes, 7);
        fmk::TrainConfig tc;
        tc.seed = 11;
        // deliberately short: the set is separable enough that accuracy is
        // already perfect here, while the residual gradients stay alive --
        // several behaviors under test (tiny-lr fine-tunes, boundary walks)
        // degenerate on a model ground all the way into its minimum
        tc.steps = 150;
        out.model = fmk::train(out.model, out.train, tc);
        out.val_accuracy = fmk::accuracy(out.model, out.val);
        out.head = fmk::derive_head(out.key, spec.num_classes);
        return out;
    }();
    return t;
}

// Small random architectures for gradient checking. Central differences sit
// shaky ground when a ReLU unit's pre-activation is within reach of the
// probe step, so draws whose closest unit is nearer than `preact_floor` are
// skipped and the next seed is tried; the scan is deterministic.
struct FdCase {
    fmk::Model model;
    fmk::Tensor input{{1}};
    std::uint64_t seed = 0;
};

inline FdCase random_fd_case(std::uint64_t seed) {
    std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL + 1;
    auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
        return lo + oracle::sm64_next(s) % (hi - lo + 1);
    };
    const std::size_t side = pick(5, 8);
    const std::size_t classes = pick(2, 6);
    std::vector<fmk::ArchLayer> arch;
    if (pick(0, 1) == 0) {
        arch.push_back({"conv2d", 0, pick(2, 3), pick(2, 3)});
        arch.push_back({"relu", 0, 0, 0});
        arch.push_back({"flatten", 0, 0, 0});
        arch.push_back({"dense", pick(6, 16), 0, 0});
        arch.push_back({"relu", 0, 0, 0});
    } else {
        arch.push_back({"flatten", 0, 0, 0});
        arch.push_back({"dense", pick(8, 24), 0, 0});
        arch.push_back({"relu", 0, 0, 0});
        arch.push_back({"dense", pick(6, 16), 0, 0});
        arch.push_back({"relu", 0, 0, 0});
    }
    arch.push_back({"dense", classes, 0, 0});

    FdCase fd;
    fd.seed = seed;
    fd.model = fmk::build_model(arch, {1, side, side}, classes, oracle::sm64_next(s));
    fd.input = fmk::Tensor({1, side, side});
    for (float& v : fd.input.data) v = static_cast<float>(oracle::sm64_unit(s));
    return fd;
}

inline std::vector<FdCase> fd_cases(std::size_t count, std::uint64_t start_seed = 1,
                                    double preact_floor = 0.05) {
    std::vector<FdCase> cases;
    std::uint64_t seed = start_seed;
    while (cases.size() < count) {
        FdCase fd = random_fd_case(seed++);
        if (oracle::min_relu_preact(fd.model, fd.input) > preact_floor) cases.push_back(std::move(fd));
    }
    return cases;
}

inline std::vector<double> random_probe(std::size_t n, std::uint64_t seed) {
    std::uint64_t s = seed ^ 0xABCD;
    std::vector<double> g(n);
    for (double& v : g) v = 2.0 * oracle::sm64_unit(s) - 1.0;
    return g;
}

// total learnable parameter count, used to keep gradient-check models small
inline std::size_t param_count(const fmk::Model& model) {
    std::size_t n = 0;
    for (const fmk::Layer& layer : model.layers)
        if (layer.has_params()) n += layer.weights.numel() + layer.bias.numel();
    return n;
}

} // namespace fixtures

#endif
