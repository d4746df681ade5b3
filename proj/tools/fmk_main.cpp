// fmk: fragile watermarking toolkit for small classifiers.
// Subcommands cover the whole pipeline: train, keygen, forge, tamper,
// verify, experiment, dispersion.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fmk/dataset.hpp"
#include "fmk/errors.hpp"
#include "fmk/experiment.hpp"
#include "fmk/forge.hpp"
#include "fmk/keyed_head.hpp"
#include "fmk/rng.hpp"
#include "fmk/serialize.hpp"
#include "fmk/tamper.hpp"
#include "fmk/verify.hpp"

namespace {

struct DatasetArgs {
    std::string kind = "synthetic_blobs";
    fmk::SyntheticSpec synth;
    std::string idx_images, idx_labels;
    double split = 0.9;
    std::uint64_t seed = 0;
};

void add_dataset_flags(CLI::App* cmd, DatasetArgs& args) {
    cmd->add_option("--classes", args.synth.num_classes, "synthetic: number of classes");
    cmd->add_option("--side", args.synth.image_side, "synthetic: square image side");
    cmd->add_option("--per-class", args.synth.samples_per_class, "synthetic: training samples per class");
    cmd->add_option("--val-per-class", args.synth.val_per_class, "synthetic: validation samples per class");
    cmd->add_option("--sigma", args.synth.noise_sigma, "synthetic: noise sigma");
    cmd->add_option("--idx-images", args.idx_images, "IDX image file (switches to file-backed data)");
    cmd->add_option("--idx-labels", args.idx_labels, "IDX label file");
    cmd->add_option("--split", args.split, "IDX train fraction");
    cmd->add_option("--data-seed", args.seed, "dataset seed");
}

std::pair<fmk::Dataset, fmk::Dataset> make_dataset(const DatasetArgs& args) {
    if (!args.idx_images.empty() || !args.idx_labels.empty()) {
        if (args.idx_images.empty() || args.idx_labels.empty())
            throw fmk::ArgumentError("need both --idx-images and --idx-labels");
        return fmk::load_idx(args.idx_images, args.idx_labels, args.split, args.seed);
    }
    fmk::SyntheticSpec spec = args.synth;
    spec.seed = args.seed;
    return fmk::synth_dataset(spec);
}

int run(int argc, char** argv) {
    CLI::App app{"fragile model watermarking via sensitive sample pairs"};
    app.require_subcommand(1);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a small classifier on synthetic or IDX data");
    DatasetArgs train_data;
    std::string train_out, train_arch = "mlp";
    fmk::TrainConfig train_config;
    std::uint64_t train_seed = 0;
    train_cmd->add_option("--out", train_out, "output model path")->required();
    train_cmd->add_option("--arch", train_arch, "mlp | conv");
    train_cmd->add_option("--lr", train_config.learning_rate, "SGD learning rate");
    train_cmd->add_option("--steps", train_config.steps, "SGD steps");
    train_cmd->add_option("--batch", train_config.batch_size, "batch size");
    train_cmd->add_option("--seed", train_seed, "master seed for init/order (and data unless --data-seed)");
    add_dataset_flags(train_cmd, train_data);

    // ---- keygen ----
    auto* key_cmd = app.add_subcommand("keygen", "register a user key in a registry file");
    std::string key_registry, key_user;
    std::string key_hex;
    std::uint64_t key_seed = 0;
    bool key_overwrite = false, key_seed_given = false;
    key_cmd->add_option("--registry", key_registry, "registry JSON path (created if missing)")->required();
    key_cmd->add_option("--user", key_user, "user id")->required();
    key_cmd->add_option("--key", key_hex, "explicit 64-bit key, hex");
    key_cmd->add_flag("--overwrite", key_overwrite, "replace an existing entry");
    key_cmd->add_option("--seed", key_seed, "derive the key from this seed instead of OS entropy")
        ->each([&](const std::string&) { key_seed_given = true; });

    // ---- forge ----
    auto* forge_cmd = app.add_subcommand("forge", "forge sensitive sample pairs for a user");
    std::string forge_model, forge_registry, forge_user, forge_out;
    std::size_t forge_count = 150;
    fmk::ForgeConfig forge_config;
    bool forge_json = false;
    forge_cmd->add_option("--model", forge_model, "model path")->required();
    forge_cmd->add_option("--registry", forge_registry, "registry JSON path")->required();
    forge_cmd->add_option("--user", forge_user, "user id")->required();
    forge_cmd->add_option("--out", forge_out, "output bundle path")->required();
    forge_cmd->add_option("--count", forge_count, "number of pairs");
    forge_cmd->add_option("--lambda", forge_config.lambda, "variance weight in the stage-1 loss");
    forge_cmd->add_option("--stage1-lr", forge_config.stage1_lr, "stage-1 learning rate");
    forge_cmd->add_option("--gap-tol", forge_config.stage1_gap_tol, "stage-1 stop gap");
    forge_cmd->add_option("--alpha", forge_config.stage2_alpha, "stage-2 sign-step size");
    forge_cmd->add_option("--retries", forge_config.retries_per_pair, "extra attempts per pair");
    forge_cmd->add_option("--seed", forge_config.seed, "forge seed");
    forge_cmd->add_flag("--json", forge_json, "write the bundle as JSON instead of binary");

    // ---- tamper ----
    auto* tamper_cmd = app.add_subcommand("tamper", "derive a tampered copy of a model");
    std::string tamper_model, tamper_out, tamper_kind;
    DatasetArgs tamper_data;
    double tamper_lr = 1e-4, tamper_rate = 0.001;
    std::size_t tamper_steps = 100, tamper_target = 0, tamper_triggers = 10, tamper_max_steps = 50000;
    int tamper_bits = 8;
    std::uint64_t tamper_seed = 0;
    tamper_cmd->add_option("--model", tamper_model, "input model path")->required();
    tamper_cmd->add_option("--out", tamper_out, "output model path")->required();
    tamper_cmd->add_option("--kind", tamper_kind, "finetune | backdoor | prune | quantize")->required();
    tamper_cmd->add_option("--lr", tamper_lr, "learning rate (finetune/backdoor)");
    tamper_cmd->add_option("--steps", tamper_steps, "finetune steps");
    tamper_cmd->add_option("--rate", tamper_rate, "prune rate in (0,1)");
    tamper_cmd->add_option("--bits", tamper_bits, "quantization bits");
    tamper_cmd->add_option("--target", tamper_target, "backdoor target label");
    tamper_cmd->add_option("--n-triggers", tamper_triggers, "backdoor trigger count");
    tamper_cmd->add_option("--max-steps", tamper_max_steps, "backdoor step cap");
    tamper_cmd->add_option("--seed", tamper_seed, "tamper seed");
    add_dataset_flags(tamper_cmd, tamper_data);

    // ---- verify ----
    auto* verify_cmd = app.add_subcommand("verify", "replay a bundle against a model");
    std::string verify_model, verify_bundle, verify_registry, verify_user, verify_out;
    verify_cmd->add_option("--model", verify_model, "model path")->required();
    verify_cmd->add_option("--bundle", verify_bundle, "bundle path")->required();
    verify_cmd->add_option("--registry", verify_registry, "registry JSON path")->required();
    verify_cmd->add_option("--user", verify_user, "user id")->required();
    verify_cmd->add_option("--out", verify_out, "write the full JSON report here");

    // ---- experiment ----
    auto* exp_cmd = app.add_subcommand("experiment", "run the full train/forge/tamper/verify sweep");
    std::string exp_config_path, exp_out, exp_write_default;
    std::uint64_t exp_seed = 0;
    bool exp_seed_given = false, exp_out_given = false;
    exp_cmd->add_option("--config", exp_config_path, "experiment config JSON (defaults used when omitted)");
    exp_cmd->add_option("--out", exp_out, "output directory override")->each([&](const std::string&) {
        exp_out_given = true;
    });
    exp_cmd->add_option("--seed", exp_seed, "master seed override")->each([&](const std::string&) {
        exp_seed_given = true;
    });
    exp_cmd->add_option("--write-default", exp_write_default, "write the default config JSON here and exit");

    // ---- dispersion ----
    auto* disp_cmd = app.add_subcommand("dispersion", "logit-dispersion diagnostic over boundary-approached samples");
    std::string disp_model, disp_out;
    std::size_t disp_count = 50, disp_iters = 1000;
    double disp_lr = 1e-3;
    std::uint64_t disp_seed = 0;
    disp_cmd->add_option("--model", disp_model, "model path")->required();
    disp_cmd->add_option("--count", disp_count, "number of samples");
    disp_cmd->add_option("--iters", disp_iters, "variance-descent iterations per sample");
    disp_cmd->add_option("--lr", disp_lr, "variance-descent learning rate");
    disp_cmd->add_option("--seed", disp_seed, "sample seed");
    disp_cmd->add_option("--out", disp_out, "write stats JSON here");

    CLI11_PARSE(app, argc, argv);

    if (train_cmd->parsed()) {
        if (train_data.seed == 0) train_data.seed = fmk::SplitMix64::derive(train_seed, 1);
        auto [train_set, val_set] = make_dataset(train_data);
        const auto arch = train_arch == "conv" ? fmk::conv_arch(train_set.num_classes)
                                               : fmk::default_mlp_arch(train_set.num_classes);
        train_config.seed = fmk::SplitMix64::derive(train_seed, 3);
        fmk::Model model = fmk::build_model(arch, train_set.input_shape, train_set.num_classes,
                                            fmk::SplitMix64::derive(train_seed, 2));
        model = fmk::train(model, train_set, train_config);
        fmk::save_model(model, train_out);
        std::printf("trained %s: train acc %.4f, val acc %.4f, params %zu\n", train_out.c_str(),
                    fmk::accuracy(model, train_set), fmk::accuracy(model, val_set), model.param_count());
        return 0;
    }

    if (key_cmd->parsed()) {
        fmk::KeyRegistry registry;
        std::ifstream probe(key_registry);
        if (probe.good()) registry = fmk::KeyRegistry::load(key_registry);
        std::optional<std::uint64_t> key;
        if (!key_hex.empty()) key = std::stoull(key_hex, nullptr, 16);
        else if (key_seed_given) {
            std::uint64_t derived = fmk::SplitMix64(key_seed).next_u64();
            key = derived ? derived : 1;
        }
        const fmk::UserKey entry = registry.register_user(key_user, key, key_overwrite);
        registry.save(key_registry);
        std::printf("registered %s in %s (%zu users)\n", entry.user_id.c_str(), key_registry.c_str(),
                    registry.size());
        return 0;
    }

    if (forge_cmd->parsed()) {
        const fmk::Model model = fmk::load_model(forge_model);
        const fmk::KeyRegistry registry = fmk::KeyRegistry::load(forge_registry);
        const fmk::CompositeModel composite(model, fmk::derive_head(registry.key_for(forge_user), model.num_classes));
        const fmk::SampleBundle bundle = fmk::forge_pairs(composite, forge_count, forge_config, forge_user);
        fmk::save_bundle(bundle, forge_out, forge_json);
        double mean_margin = 0.0;
        for (const auto& p : bundle.pairs) mean_margin += 0.5 * (p.margin_a + p.margin_b);
        mean_margin /= static_cast<double>(bundle.pairs.size());
        std::printf("forged %zu pairs -> %s (mean margin %.3g)\n", bundle.pairs.size(), forge_out.c_str(),
                    mean_margin);
        return 0;
    }

    if (tamper_cmd->parsed()) {
        const fmk::Model model = fmk::load_model(tamper_model);
        fmk::TamperSpec spec;
        spec.seed = tamper_seed;
        if (tamper_kind == "finetune") spec.op = fmk::FineTuneSpec{tamper_lr, tamper_steps, 32};
        else if (tamper_kind == "backdoor")
            spec.op = fmk::BackdoorSpec{fmk::TriggerPatch{}, tamper_target, tamper_triggers,
                                        tamper_cmd->count("--lr") ? tamper_lr : 1e-5, tamper_max_steps};
        else if (tamper_kind == "prune") spec.op = fmk::PruneSpec{tamper_rate};
        else if (tamper_kind == "quantize") spec.op = fmk::QuantizeSpec{tamper_bits};
        else throw fmk::ArgumentError("unknown tamper kind: " + tamper_kind);

        fmk::Model tampered;
        if (tamper_kind == "prune" || tamper_kind == "quantize") {
            fmk::Dataset empty; // weight-only edits need no data
            tampered = fmk::apply_tamper(model, empty, spec);
        } else {
            tampered = fmk::apply_tamper(model, make_dataset(tamper_data).first, spec);
        }
        fmk::save_model(tampered, tamper_out);
        std::printf("tampered (%s %s) -> %s\n", spec.kind_name().c_str(), spec.params().c_str(),
                    tamper_out.c_str());
        return 0;
    }

    if (verify_cmd->parsed()) {
        const fmk::Model model = fmk::load_model(verify_model);
        const fmk::SampleBundle bundle = fmk::load_bundle(verify_bundle);
        const fmk::KeyRegistry registry = fmk::KeyRegistry::load(verify_registry);
        const fmk::DetectionReport report = fmk::verify(bundle, model, registry, verify_user);
        if (!verify_out.empty()) fmk::save_report(report, verify_out);
        std::printf("pairs %zu  paired_rate %.6f  unpaired_rate %.6f  base_flips %.6f  fingerprint %s\n",
                    report.pair_count, report.paired_rate, report.unpaired_rate, report.base_flip_rate,
                    report.fingerprint_match ? "match" : "MISMATCH");
        return 0;
    }

    if (exp_cmd->parsed()) {
        if (!exp_write_default.empty()) {
            std::ofstream f(exp_write_default, std::ios::trunc);
            if (!f) throw fmk::FormatError("cannot open " + exp_write_default + " for writing");
            f << nlohmann::json(fmk::default_experiment_config()).dump(2) << "\n";
            std::printf("wrote default config to %s\n", exp_write_default.c_str());
            return 0;
        }
        fmk::ExperimentConfig config =
            exp_config_path.empty() ? fmk::default_experiment_config() : fmk::load_experiment_config(exp_config_path);
        if (exp_out_given) config.out_dir = exp_out;
        if (exp_seed_given) config.master_seed = exp_seed;
        const fmk::ExperimentResult result = fmk::run_experiment(config);
        std::printf("clean accuracy %.4f", result.clean_accuracy_before);
        for (std::size_t i = 0; i < result.clean_accuracy_after.size(); ++i)
            std::printf(" | %s %.4f", result.reports[i].tamper_kind.c_str(), result.clean_accuracy_after[i]);
        std::printf("\n");
        std::printf("experiment done: %zu tamper rows -> %s\n", result.reports.size(), result.csv_path.c_str());
        return 0;
    }

    if (disp_cmd->parsed()) {
        const fmk::Model model = fmk::load_model(disp_model);
        const auto samples = fmk::dbi_forge(model, disp_count, disp_lr, disp_iters, disp_seed);
        const fmk::DispersionStats stats = fmk::logit_dispersion(model, samples);
        if (!disp_out.empty()) {
            nlohmann::json j{{"cv", stats.cv},
                             {"undefined", stats.undefined},
                             {"undefined_count", stats.undefined_count},
                             {"mean_cv", stats.mean_cv},
                             {"median_cv", stats.median_cv}};
            std::ofstream f(disp_out, std::ios::trunc);
            if (!f) throw fmk::FormatError("cannot open " + disp_out + " for writing");
            f << j.dump(2) << "\n";
        }
        std::printf("samples %zu  median |CV| %.6f  mean |CV| %.6f  undefined %zu\n", stats.cv.size(),
                    stats.median_cv, stats.mean_cv, stats.undefined_count);
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
