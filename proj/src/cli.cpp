#include "blastoseg/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "blastoseg/data.hpp"
#include "blastoseg/errors.hpp"
#include "blastoseg/eval.hpp"
#include "blastoseg/image.hpp"
#include "blastoseg/model_io.hpp"
#include "blastoseg/run_config.hpp"
#include "blastoseg/threading.hpp"
#include "blastoseg/train.hpp"
#include "blastoseg/viz.hpp"

namespace fs = std::filesystem;

namespace blastoseg {

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;

void apply_threads(int threads) {
    set_num_threads(threads > 0 ? threads : default_num_threads());
}

std::string checkpoint_name(Target t) { return "checkpoint_" + target_name(t) + ".rdu"; }

struct CommonFlags {
    std::string config_path;
    std::string data_dir;
    std::string target = "icm";
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    int threads = 0;
};

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg;
    if (!flags.config_path.empty()) cfg = RunConfig::from_file(flags.config_path);
    if (!flags.data_dir.empty()) cfg.data_dir = flags.data_dir;
    if (!flags.target.empty()) cfg.target = target_from_name(flags.target);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.seed) cfg.train.seed = *flags.seed;
    if (flags.threads > 0) cfg.threads = flags.threads;
    cfg.validate();
    return cfg;
}

int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = resolve_config(flags);
    if (cfg.data_dir.empty()) throw ConfigError("data_dir is required (use --data-dir)");
    apply_threads(cfg.threads);
    fs::create_directories(cfg.out_dir);

    DataSet ds = load_dataset(cfg.data_dir, cfg.target);
    std::printf("loaded %zu image/mask pairs from %s\n", ds.samples.size(), cfg.data_dir.c_str());
    preprocess_all(ds, cfg.model.image_size);
    split_and_shuffle(ds, cfg.train_frac, cfg.train.seed);
    const std::size_t n_orig_train = ds.train().size();
    augment_training_set(ds, cfg.rotation_step_deg);
    const auto train_set = ds.train();
    std::printf("split: %zu train originals -> %zu augmented, %zu test\n", n_orig_train,
                train_set.size(), ds.test().size());

    Rng rng(cfg.train.seed);
    auto model = RDUNet<float>::build(cfg.model, rng);
    std::printf("model: %lld parameters\n",
                static_cast<long long>(model.parameter_count()));

    EpochCallback<float> progress = [](int epoch, double loss, RDUNet<float>&) {
        std::printf("epoch %d: train_loss %.6f\n", epoch, loss);
        std::fflush(stdout);
        return false;
    };
    FitResult result = fit(model, train_set, cfg.train, progress);

    const fs::path out(cfg.out_dir);
    write_training_log((out / "training_log.csv").string(), result.log);
    cfg.save((out / "config.json").string());
    save_model(model, (out / checkpoint_name(cfg.target)).string(),
               {result.best_epoch, result.best_loss});
    if (result.aborted) {
        std::fprintf(stderr, "training aborted: %s (best checkpoint retained)\n",
                     result.abort_reason.c_str());
        return 1;
    }
    std::printf("done: best loss %.6f at epoch %d (%s)\n", result.best_loss, result.best_epoch,
                result.early_stopped ? "early stop" : "completed");
    return 0;
}

GrayImage16 prob_to_png16(const Tensor<float>& prob) {
    GrayImage16 img;
    img.height = static_cast<int>(prob.dim(1));
    img.width = static_cast<int>(prob.dim(2));
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (index_t i = 0; i < prob.numel(); ++i)
        img.pixels[static_cast<std::size_t>(i)] =
            static_cast<std::uint16_t>(std::lround(std::clamp(prob[i], 0.0f, 1.0f) * 65535.0f));
    return img;
}

GrayImage8 mask_to_png8(const Tensor<float>& mask) {
    GrayImage8 img;
    img.height = static_cast<int>(mask.dim(1));
    img.width = static_cast<int>(mask.dim(2));
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (index_t i = 0; i < mask.numel(); ++i)
        img.pixels[static_cast<std::size_t>(i)] = mask[i] >= 0.5f ? 255 : 0;
    return img;
}

// z-scores one already-resized image the same way preprocess() does.
Tensor<float> normalize_image(const Tensor<float>& chw) {
    Sample tmp;
    tmp.id = "input";
    tmp.image = chw;
    tmp.mask = Tensor<float>({1, chw.dim(1), chw.dim(2)}, 0.0f);
    return preprocess(tmp, static_cast<int>(chw.dim(1))).image;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, double threshold,
                const std::string& out_dir, int size_override, int threads) {
    apply_threads(threads);
    LoadedModel<float> loaded;
    try {
        loaded = load_model<float>(checkpoint);
    } catch (const IoError& e) {
        throw FormatError(e.what());  // missing checkpoint is a checkpoint error
    }
    const int size = loaded.model.config().image_size;
    if (size_override > 0 && size_override != size)
        throw FormatError("requested size " + std::to_string(size_override) +
                          " does not match checkpoint image_size " + std::to_string(size));

    const fs::path in_root =
        fs::is_directory(fs::path(input) / "images") ? fs::path(input) / "images" : fs::path(input);
    std::vector<fs::path> files;
    if (fs::is_directory(in_root)) {
        for (const auto& e : fs::directory_iterator(in_root))
            if (e.is_regular_file() && has_supported_image_extension(e.path().filename().string()))
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else if (fs::is_regular_file(in_root)) {
        files.push_back(in_root);
    }
    if (files.empty()) throw DataError("no input images found under " + input);
    fs::create_directories(out_dir);

    for (const auto& f : files) {
        const GrayImage8 img = read_gray8(f.string());
        Tensor<float> x = resize_bilinear(image_to_tensor(img), size, size);
        x = normalize_image(x);
        Tensor<float> batch = Tensor<float>({1, 1, size, size});
        std::copy(x.data(), x.data() + x.numel(), batch.data());
        Tensor<float> prob4 = loaded.model.forward(batch, false);
        Tensor<float> prob = Tensor<float>::from_data({1, size, size},
                                                      std::vector<float>(prob4.data(), prob4.data() + prob4.numel()));
        const std::string stem = f.stem().string();
        write_png_gray16((fs::path(out_dir) / (stem + "_prob.png")).string(), prob_to_png16(prob));
        write_png_gray8((fs::path(out_dir) / (stem + "_mask.png")).string(),
                        mask_to_png8(binarize(prob, threshold)));
    }
    std::printf("predicted %zu images -> %s\n", files.size(), out_dir.c_str());
    return 0;
}

int cmd_evaluate(const std::string& checkpoint, const CommonFlags& flags, double threshold) {
    LoadedModel<float> loaded;
    try {
        loaded = load_model<float>(checkpoint);
    } catch (const IoError& e) {
        throw FormatError(e.what());
    }

    // The split is reproduced from the resolved config snapshot when one
    // sits next to the checkpoint; flags override.
    CommonFlags effective = flags;
    if (effective.config_path.empty()) {
        const fs::path sibling = fs::path(checkpoint).parent_path() / "config.json";
        if (fs::is_regular_file(sibling)) effective.config_path = sibling.string();
    }
    RunConfig cfg = resolve_config(effective);
    if (cfg.data_dir.empty()) throw ConfigError("data_dir is required (use --data-dir)");
    apply_threads(cfg.threads);
    if (cfg.model != loaded.model.config())
        std::fprintf(stderr, "note: evaluating with the checkpoint's model config\n");

    DataSet ds = load_dataset(cfg.data_dir, cfg.target);
    preprocess_all(ds, loaded.model.config().image_size);
    split_and_shuffle(ds, cfg.train_frac, cfg.train.seed);
    const auto test_set = ds.test();
    if (test_set.empty()) throw DataError("empty test split");

    PredictFn predict = [&](const Tensor<float>& image) {
        Tensor<float> batch({1, image.dim(0), image.dim(1), image.dim(2)});
        std::copy(image.data(), image.data() + image.numel(), batch.data());
        Tensor<float> out = loaded.model.forward(batch, false);
        return Tensor<float>::from_data({1, image.dim(1), image.dim(2)},
                                        std::vector<float>(out.data(), out.data() + out.numel()));
    };

    MetricsReport report = evaluate_set(predict, test_set, threshold, cfg.target);
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    write_report_csv((out / ("report_" + target_name(cfg.target) + ".csv")).string(), report);
    const std::string summary = format_summary_table(report);
    {
        std::ofstream f((out / ("summary_" + target_name(cfg.target) + ".txt")).string(),
                        std::ios::trunc);
        f << summary;
    }
    std::fputs(summary.c_str(), stdout);

    for (std::size_t i = 0; i < test_set.size(); ++i) {
        const Sample* s = test_set[i];
        const Tensor<float> prob = predict(s->image);
        const Tensor<float> pred = binarize(prob, threshold);
        const RgbImage8 overlay = render_overlay(pred, s->mask);
        const auto& m = report.per_image[i].metrics;
        const RgbImage8 panel =
            render_panel(s->image, s->mask, pred, overlay, format_ji_dc(m.jaccard, m.dice));
        const std::string base = s->id + "_" + target_name(cfg.target);
        write_png_rgb8((out / (base + "_overlay.png")).string(), overlay);
        write_png_rgb8((out / (base + "_panel.png")).string(), panel);
    }
    return 0;
}

int cmd_synth(int n, int size, std::uint64_t seed, const std::string& out_dir) {
    write_phantom_dataset(out_dir, n, size, seed);
    std::printf("wrote %d phantoms (%dx%d) to %s\n", n, size, size, out_dir.c_str());
    return 0;
}

int cmd_augment(const std::string& data_dir, int step, const std::string& out_dir) {
    if (step <= 0 || 360 % step != 0)
        throw ConfigError("step " + std::to_string(step) + " does not divide 360");
    bool any = false;
    for (Target t : {Target::kIcm, Target::kTe}) {
        if (!fs::is_directory(fs::path(data_dir) / ("masks_" + target_name(t)))) continue;
        any = true;
        DataSet ds = load_dataset(data_dir, t);
        DataSet out;
        for (const auto& s : ds.samples)
            for (auto& r : augment_rotations(s, step)) out.samples.push_back(std::move(r));
        out.split.assign(out.samples.size(), Split::kUnassigned);
        write_dataset(out_dir, out, t);
        std::printf("%s: %zu -> %zu samples\n", target_name(t).c_str(), ds.samples.size(),
                    out.samples.size());
    }
    if (!any) throw DataError("no masks_icm or masks_te directory under " + data_dir);
    return 0;
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Residual-Dilated U-Net segmentation toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;
    double threshold = 0.5;
    std::string checkpoint, input;
    int synth_n = 8, synth_size = 256, aug_step = 10, size_override = 0;
    std::uint64_t synth_seed = 0;

    auto add_common = [&](CLI::App* cmd, bool with_data) {
        cmd->add_option("--config", flags.config_path, "JSON run config");
        if (with_data) cmd->add_option("--data-dir", flags.data_dir, "dataset directory");
        cmd->add_option("--target", flags.target, "segmentation target: icm or te");
        cmd->add_option("--out", flags.out_dir, "output directory");
        cmd->add_option("--seed", flags.seed, "RNG seed");
        cmd->add_option("--threads", flags.threads, "worker threads (1 = deterministic mode)");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, true);

    CLI::App* predict_cmd = app.add_subcommand("predict", "probability maps + masks for images");
    predict_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    predict_cmd->add_option("--input", input, "image file or directory")->required();
    predict_cmd->add_option("--threshold", threshold, "binarization threshold");
    predict_cmd->add_option("--out", flags.out_dir, "output directory");
    predict_cmd->add_option("--size", size_override, "expected image size (must match checkpoint)");
    predict_cmd->add_option("--threads", flags.threads, "worker threads");

    CLI::App* eval_cmd = app.add_subcommand("evaluate", "metrics report + overlays on the test split");
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    add_common(eval_cmd, true);
    eval_cmd->add_option("--threshold", threshold, "binarization threshold");

    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic phantom dataset");
    synth_cmd->add_option("--n", synth_n, "number of phantoms");
    synth_cmd->add_option("--size", synth_size, "image size (multiple of 16)");
    synth_cmd->add_option("--seed", synth_seed, "RNG seed");
    synth_cmd->add_option("--out", flags.out_dir, "output directory")->required();

    CLI::App* aug_cmd = app.add_subcommand("augment", "write rotation-augmented copies");
    aug_cmd->add_option("--data-dir", flags.data_dir, "dataset directory")->required();
    aug_cmd->add_option("--step", aug_step, "rotation step in degrees");
    aug_cmd->add_option("--out", flags.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(flags);
        if (predict_cmd->parsed())
            return cmd_predict(checkpoint, input, threshold, flags.out_dir, size_override,
                               flags.threads);
        if (eval_cmd->parsed()) return cmd_evaluate(checkpoint, flags, threshold);
        if (synth_cmd->parsed()) return cmd_synth(synth_n, synth_size, synth_seed, flags.out_dir);
        if (aug_cmd->parsed()) return cmd_augment(flags.data_dir, aug_step, flags.out_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitCheckpoint;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const IoError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const ParameterError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

} // namespace blastoseg
