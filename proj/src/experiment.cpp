#include "fmk/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fmk/errors.hpp"
#include "fmk/rng.hpp"
#include "fmk/serialize.hpp"

namespace fs = std::filesystem;

namespace fmk {

Model build_model(const std::vector<ArchLayer>& arch, const std::vector<std::size_t>& input_shape,
                  std::size_t num_classes, std::uint64_t init_seed) {
    if (arch.empty()) throw ArgumentError("build_model: empty architecture");
    Model model;
    model.input_shape = input_shape;
    model.num_classes = num_classes;

    std::vector<std::size_t> shape = input_shape;
    for (std::size_t li = 0; li < arch.size(); ++li) {
        const ArchLayer& a = arch[li];
        SplitMix64 rng(SplitMix64::derive(init_seed, li));
        if (a.kind == "flatten") {
            model.layers.push_back(Layer::flatten());
        } else if (a.kind == "relu") {
            model.layers.push_back(Layer::relu());
        } else if (a.kind == "dense") {
            if (shape.size() != 1)
                throw ShapeError("dense layer needs a flat input; got " + shape_str(shape) + " (flatten first)");
            if (a.out == 0) throw ArgumentError("dense layer needs out > 0");
            const std::size_t fan_in = shape[0];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + a.out));
            Tensor w({a.out, fan_in});
            for (float& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
            model.layers.push_back(Layer::dense(std::move(w), Tensor::zeros({a.out})));
        } else if (a.kind == "conv2d") {
            if (shape.size() != 3)
                throw ShapeError("conv2d layer needs a {channels,h,w} input; got " + shape_str(shape));
            if (a.channels == 0 || a.kernel == 0) throw ArgumentError("conv2d layer needs channels and kernel > 0");
            const std::size_t ic = shape[0];
            const double fan_in = static_cast<double>(ic * a.kernel * a.kernel);
            const double fan_out = static_cast<double>(a.channels * a.kernel * a.kernel);
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            Tensor w({a.channels, ic, a.kernel, a.kernel});
            for (float& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
            model.layers.push_back(Layer::conv2d(std::move(w), Tensor::zeros({a.channels})));
        } else {
            throw ArgumentError("unknown layer kind: " + a.kind);
        }
        shape = infer_output_shape(model.layers.back(), shape);
    }
    validate_model(model);
    return model;
}

std::vector<ArchLayer> default_mlp_arch(std::size_t num_classes) {
    return {{"flatten", 0, 0, 0}, {"dense", 32, 0, 0}, {"relu", 0, 0, 0}, {"dense", num_classes, 0, 0}};
}

std::vector<ArchLayer> conv_arch(std::size_t num_classes) {
    return {{"conv2d", 0, 4, 3}, {"relu", 0, 0, 0}, {"flatten", 0, 0, 0}, {"dense", num_classes, 0, 0}};
}

ForgeConfig experiment_forge_profile() {
    ForgeConfig forge;
    forge.lambda = 10.0;
    forge.stage1_gap_tol = 1e-4;
    forge.stage2_alpha = 3e-6;
    return forge;
}

void ExperimentConfig::validate() const {
    if (dataset_kind != "synthetic_blobs" && dataset_kind != "idx_files")
        throw ArgumentError("dataset_kind must be synthetic_blobs or idx_files");
    if (dataset_kind == "idx_files" && (idx_images.empty() || idx_labels.empty()))
        throw ArgumentError("idx_files dataset needs idx_images and idx_labels paths");
    if (pair_count < 1) throw ArgumentError("pair_count must be >= 1");
    if (dbi_lr < 0.0) throw ArgumentError("dbi_lr must be >= 0");
    if (user_id.empty()) throw ArgumentError("user_id must be nonempty");
    if (out_dir.empty()) throw ArgumentError("out_dir must be nonempty");
    forge.validate();
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig config;
    for (double lr : {1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3})
        config.tampers.push_back({FineTuneSpec{lr, 100, 32}, 0});
    for (double rate : {0.001, 0.01, 0.05, 0.2}) config.tampers.push_back({PruneSpec{rate}, 0});
    config.tampers.push_back({QuantizeSpec{8}, 0});
    config.tampers.push_back({BackdoorSpec{}, 0});
    return config;
}

std::string results_csv_header() { return "tamper,params,ours_paired,ours_unpaired,dbi_single,dbi_paired,validset\n"; }

namespace {

std::string fmt_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string fmt_rate(const std::optional<double>& v) { return v ? fmt_rate(*v) : std::string(); }

template <typename F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw StateError("experiment stage '" + std::string(name) + "' failed: " + e.what());
    }
}

} // namespace

std::string results_csv_row(const DetectionReport& r) {
    return r.tamper_kind + "," + r.tamper_params + "," + fmt_rate(r.paired_rate) + "," + fmt_rate(r.unpaired_rate) +
           "," + fmt_rate(r.dbi_single_rate) + "," + fmt_rate(r.dbi_paired_rate) + "," + fmt_rate(r.validset_rate) +
           "\n";
}

ExperimentResult run_experiment(const ExperimentConfig& config_in) {
    config_in.validate();
    ExperimentConfig config = config_in; // resolved copy, emitted at the end

    // every stage seed is pinned off the master seed; the sub-config seed
    // fields are overwritten so the emitted config shows what actually ran
    const std::uint64_t master = config.master_seed;
    config.dataset.seed = SplitMix64::derive(master, 1);
    const std::uint64_t init_seed = SplitMix64::derive(master, 2);
    config.train.seed = SplitMix64::derive(master, 3);
    config.forge.seed = SplitMix64::derive(master, 4);
    const std::uint64_t dbi_seed = SplitMix64::derive(master, 5);
    const std::uint64_t valid_seed = SplitMix64::derive(master, 6);
    const std::uint64_t pairing_seed = SplitMix64::derive(master, 7);
    std::uint64_t user_key = SplitMix64::derive(master, 8);
    if (user_key == 0) user_key = 1;
    for (std::size_t i = 0; i < config.tampers.size(); ++i)
        if (config.tampers[i].seed == 0)
            config.tampers[i].seed = SplitMix64::derive(SplitMix64::derive(master, 9), i);

    const std::string out = config.out_dir;
    fs::create_directories(out + "/models");
    fs::create_directories(out + "/bundles");
    fs::create_directories(out + "/reports");

    ExperimentResult result;
    result.out_dir = out;

    auto [train_set, val_set] = stage("dataset", [&] {
        if (config.dataset_kind == "idx_files")
            return load_idx(config.idx_images, config.idx_labels, config.idx_split, config.dataset.seed);
        return synth_dataset(config.dataset);
    });

    // the attacker's clean data: a fresh draw from the same source, not the
    // exact set the model converged on (for idx data, the validation split)
    Dataset tamper_set = val_set;
    if (config.dataset_kind == "synthetic_blobs") {
        SyntheticSpec fresh = config.dataset;
        fresh.seed = SplitMix64::derive(master, 10);
        tamper_set = synth_dataset(fresh).first;
    }

    if (config.arch.empty()) config.arch = default_mlp_arch(train_set.num_classes);

    Model trained = stage("train", [&] {
        Model init = build_model(config.arch, train_set.input_shape, train_set.num_classes, init_seed);
        return train(init, train_set, config.train);
    });
    save_model(trained, out + "/models/base.fmk");
    result.clean_accuracy_before = accuracy(trained, val_set);

    KeyRegistry registry;
    stage("keygen", [&] { return registry.register_user(config.user_id, user_key); });
    registry.save(out + "/registry.json");

    CompositeModel composite(trained, derive_head(user_key, trained.num_classes));
    SampleBundle bundle = stage("forge", [&] { return forge_pairs(composite, config.pair_count, config.forge, config.user_id); });
    save_bundle(bundle, out + "/bundles/bundle.fmb");

    // baseline sample sets, references recorded on the untampered model
    auto dbi = stage("dbi", [&] { return dbi_forge(trained, config.pair_count, config.dbi_lr, config.dbi_iters, dbi_seed); });
    const std::vector<std::size_t> dbi_labels = record_labels(trained, dbi);
    const auto dbi_pairs = pair_randomly(dbi.size(), pairing_seed);
    const std::size_t valid_n = std::min(config.pair_count, val_set.size());
    auto valid = stage("validset", [&] { return validset_baseline(val_set, valid_n, valid_seed); });
    const std::vector<std::size_t> valid_labels = record_labels(trained, valid);

    {
        DetectionReport base_report = verify(bundle, trained, registry, config.user_id);
        base_report.tamper_kind = "none";
        save_report(base_report, out + "/reports/untampered.json");
    }

    std::string csv = results_csv_header();
    for (std::size_t i = 0; i < config.tampers.size(); ++i) {
        const TamperSpec& spec = config.tampers[i];
        const std::string tag = std::to_string(i) + "_" + spec.kind_name();
        Model tampered = stage("tamper", [&] { return apply_tamper(trained, tamper_set, spec); });
        save_model(tampered, out + "/models/tampered_" + tag + ".fmk");

        DetectionReport report = stage("verify", [&] { return verify(bundle, tampered, registry, config.user_id); });
        report.tamper_kind = spec.kind_name();
        report.tamper_params = spec.params();
        report.validset_rate = flip_rate(tampered, valid, valid_labels);
        report.dbi_single_rate = flip_rate(tampered, dbi, dbi_labels);
        report.dbi_paired_rate = paired_flip_rate(tampered, dbi, dbi_labels, dbi_pairs);
        save_report(report, out + "/reports/tamper_" + tag + ".json");

        result.clean_accuracy_after.push_back(accuracy(tampered, val_set));
        csv += results_csv_row(report);
        result.reports.push_back(std::move(report));
    }

    {
        std::ofstream f(out + "/results.csv", std::ios::trunc);
        if (!f) throw FormatError("cannot open " + out + "/results.csv for writing");
        f << csv;
    }
    {
        std::ofstream f(out + "/resolved_config.json", std::ios::trunc);
        if (!f) throw FormatError("cannot open " + out + "/resolved_config.json for writing");
        f << nlohmann::json(config).dump(2) << "\n";
    }
    result.csv_path = out + "/results.csv";
    return result;
}

void to_json(nlohmann::json& j, const ArchLayer& a) {
    j = nlohmann::json{{"kind", a.kind}};
    if (a.kind == "dense") j["out"] = a.out;
    if (a.kind == "conv2d") {
        j["channels"] = a.channels;
        j["kernel"] = a.kernel;
    }
}

void from_json(const nlohmann::json& j, ArchLayer& a) {
    a = ArchLayer{};
    j.at("kind").get_to(a.kind);
    if (j.contains("out")) j.at("out").get_to(a.out);
    if (j.contains("channels")) j.at("channels").get_to(a.channels);
    if (j.contains("kernel")) j.at("kernel").get_to(a.kernel);
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = nlohmann::json{{"num_classes", s.num_classes},   {"image_side", s.image_side},
                       {"samples_per_class", s.samples_per_class}, {"val_per_class", s.val_per_class},
                       {"noise_sigma", s.noise_sigma},   {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    s = SyntheticSpec{};
    if (j.contains("num_classes")) j.at("num_classes").get_to(s.num_classes);
    if (j.contains("image_side")) j.at("image_side").get_to(s.image_side);
    if (j.contains("samples_per_class")) j.at("samples_per_class").get_to(s.samples_per_class);
    if (j.contains("val_per_class")) j.at("val_per_class").get_to(s.val_per_class);
    if (j.contains("noise_sigma")) j.at("noise_sigma").get_to(s.noise_sigma);
    if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& t) {
    j = nlohmann::json{
        {"learning_rate", t.learning_rate}, {"steps", t.steps}, {"batch_size", t.batch_size}, {"seed", t.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& t) {
    t = TrainConfig{};
    if (j.contains("learning_rate")) j.at("learning_rate").get_to(t.learning_rate);
    if (j.contains("steps")) j.at("steps").get_to(t.steps);
    if (j.contains("batch_size")) j.at("batch_size").get_to(t.batch_size);
    if (j.contains("seed")) j.at("seed").get_to(t.seed);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"dataset_kind", c.dataset_kind},
                       {"dataset", c.dataset},
                       {"idx_images", c.idx_images},
                       {"idx_labels", c.idx_labels},
                       {"idx_split", c.idx_split},
                       {"arch", c.arch},
                       {"train", c.train},
                       {"forge", c.forge},
                       {"tampers", c.tampers},
                       {"pair_count", c.pair_count},
                       {"dbi_lr", c.dbi_lr},
                       {"dbi_iters", c.dbi_iters},
                       {"user_id", c.user_id},
                       {"out_dir", c.out_dir},
                       {"master_seed", c.master_seed}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    // partial configs inherit the stock experiment, tamper battery included;
    // an explicit "tampers": [] still means "none"
    c = default_experiment_config();
    if (j.contains("dataset_kind")) j.at("dataset_kind").get_to(c.dataset_kind);
    if (j.contains("dataset")) j.at("dataset").get_to(c.dataset);
    if (j.contains("idx_images")) j.at("idx_images").get_to(c.idx_images);
    if (j.contains("idx_labels")) j.at("idx_labels").get_to(c.idx_labels);
    if (j.contains("idx_split")) j.at("idx_split").get_to(c.idx_split);
    if (j.contains("arch")) j.at("arch").get_to(c.arch);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("forge")) j.at("forge").get_to(c.forge);
    if (j.contains("tampers")) j.at("tampers").get_to(c.tampers);
    if (j.contains("pair_count")) j.at("pair_count").get_to(c.pair_count);
    if (j.contains("dbi_lr")) j.at("dbi_lr").get_to(c.dbi_lr);
    if (j.contains("dbi_iters")) j.at("dbi_iters").get_to(c.dbi_iters);
    if (j.contains("user_id")) j.at("user_id").get_to(c.user_id);
    if (j.contains("out_dir")) j.at("out_dir").get_to(c.out_dir);
    if (j.contains("master_seed")) j.at("master_seed").get_to(c.master_seed);
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    try {
        nlohmann::json doc;
        f >> doc;
        return doc.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config parse error in " + path + ": " + e.what());
    }
}

} // namespace fmk
