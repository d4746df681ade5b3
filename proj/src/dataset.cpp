#include "fmk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fmk/errors.hpp"
#include "fmk/rng.hpp"

namespace fmk {

std::pair<Dataset, Dataset> synth_dataset(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw ArgumentError("synth_dataset: need at least 2 classes");
    if (spec.image_side == 0) throw ArgumentError("synth_dataset: image side must be positive");
    if (spec.samples_per_class == 0) throw ArgumentError("synth_dataset: samples_per_class must be positive");
    if (spec.noise_sigma < 0.0) throw ArgumentError("synth_dataset: sigma must be >= 0");

    const std::vector<std::size_t> shape = {1, spec.image_side, spec.image_side};
    const std::size_t pixels = spec.image_side * spec.image_side;

    SplitMix64 rng(spec.seed);
    std::vector<Tensor> prototypes;
    prototypes.reserve(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        Tensor proto(shape);
        for (std::size_t p = 0; p < pixels; ++p)
            proto.data[p] = rng.next_double() < 0.5 ? 0.0f : 1.0f;
        prototypes.push_back(std::move(proto));
    }

    auto draw = [&](std::size_t per_class) {
        Dataset ds;
        ds.input_shape = shape;
        ds.num_classes = spec.num_classes;
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            for (std::size_t s = 0; s < per_class; ++s) {
                Tensor img = prototypes[c];
                for (std::size_t p = 0; p < pixels; ++p)
                    img.data[p] = static_cast<float>(img.data[p] + spec.noise_sigma * rng.gaussian());
                img.clamp(0.0f, 1.0f);
                ds.inputs.push_back(std::move(img));
                ds.labels.push_back(c);
            }
        }
        return ds;
    };

    Dataset train = draw(spec.samples_per_class);
    Dataset val = draw(spec.val_per_class);
    return {std::move(train), std::move(val)};
}

namespace {

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated header in " + path);
    return static_cast<std::uint32_t>(b[0]) << 24 | static_cast<std::uint32_t>(b[1]) << 16 |
           static_cast<std::uint32_t>(b[2]) << 8 | static_cast<std::uint32_t>(b[3]);
}

} // namespace

std::pair<Dataset, Dataset> load_idx(const std::string& image_path, const std::string& label_path,
                                     double split, std::uint64_t seed) {
    if (!(split > 0.0 && split < 1.0)) throw ArgumentError("split must be in (0,1)");

    std::ifstream imgf(image_path, std::ios::binary);
    if (!imgf) throw FormatError("cannot open " + image_path);
    if (read_u32_be(imgf, image_path) != 0x00000803u)
        throw FormatError("bad image magic in " + image_path);
    const std::uint32_t n_images = read_u32_be(imgf, image_path);
    const std::uint32_t rows = read_u32_be(imgf, image_path);
    const std::uint32_t cols = read_u32_be(imgf, image_path);

    std::ifstream lblf(label_path, std::ios::binary);
    if (!lblf) throw FormatError("cannot open " + label_path);
    if (read_u32_be(lblf, label_path) != 0x00000801u)
        throw FormatError("bad label magic in " + label_path);
    const std::uint32_t n_labels = read_u32_be(lblf, label_path);
    if (n_images != n_labels)
        throw FormatError("image/label count mismatch: " + std::to_string(n_images) + " vs " +
                          std::to_string(n_labels));
    if (n_images == 0) throw FormatError("empty idx file " + image_path);

    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> img_bytes(static_cast<std::size_t>(n_images) * pixels);
    if (!imgf.read(reinterpret_cast<char*>(img_bytes.data()), static_cast<std::streamsize>(img_bytes.size())))
        throw FormatError("truncated image data in " + image_path);
    std::vector<unsigned char> lbl_bytes(n_labels);
    if (!lblf.read(reinterpret_cast<char*>(lbl_bytes.data()), static_cast<std::streamsize>(lbl_bytes.size())))
        throw FormatError("truncated label data in " + label_path);

    std::size_t max_label = 0;
    for (unsigned char l : lbl_bytes) max_label = std::max<std::size_t>(max_label, l);

    const std::vector<std::size_t> shape = {1, rows, cols};
    std::vector<std::size_t> order(n_images);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(seed);
    rng.shuffle(order);

    const std::size_t n_train = static_cast<std::size_t>(std::floor(split * static_cast<double>(n_images) + 0.5));

    Dataset train, val;
    train.input_shape = val.input_shape = shape;
    train.num_classes = val.num_classes = max_label + 1;
    for (std::size_t k = 0; k < n_images; ++k) {
        const std::size_t idx = order[k];
        Tensor img(shape);
        for (std::size_t p = 0; p < pixels; ++p)
            img.data[p] = static_cast<float>(img_bytes[idx * pixels + p]) / 255.0f;
        Dataset& dst = (k < n_train) ? train : val;
        dst.inputs.push_back(std::move(img));
        dst.labels.push_back(lbl_bytes[idx]);
    }
    return {std::move(train), std::move(val)};
}

} // namespace fmk
