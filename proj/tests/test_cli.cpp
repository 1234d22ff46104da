#include "doctest.h"

#include <fstream>
#include <string>
#include <vector>

#include "blastoseg/cli.hpp"
#include "blastoseg/eval.hpp"
#include "blastoseg/image.hpp"
#include "blastoseg/run_config.hpp"
#include "test_util.hpp"

using namespace blastoseg;
using testutil::TempDir;

namespace {

int run_cli(std::vector<std::string> args) {
    std::vector<const char*> argv;
    argv.push_back("blastoseg");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

// Small model + short schedule so CLI round trips stay quick.
void write_tiny_config(const std::string& path, int max_epochs, std::uint64_t seed) {
    std::ofstream f(path);
    f << R"({
  "encoder_kernels": [4, 8],
  "dilation_rates": [1, 2],
  "bottleneck_channels": 12,
  "image_size": 32,
  "batch_size": 4,
  "max_epochs": )" << max_epochs
      << R"(,
  "lr0": 0.001,
  "train_frac": 0.75,
  "rotation_step_deg": 90,
  "threads": 2,
  "seed": )" << seed
      << "\n}\n";
}

} // namespace

TEST_CASE("run config: defaults carry the paper's values") {
    RunConfig cfg;
    CHECK(cfg.model.image_size == 256);
    CHECK(cfg.model.encoder_kernels == std::vector<int>{16, 32, 64, 128});
    CHECK(cfg.model.dilation_rates == std::vector<int>{1, 2, 4, 8});
    CHECK(cfg.model.dropout_rate == 0.05);
    CHECK(cfg.train.batch_size == 16);
    CHECK(cfg.train.max_epochs == 200);
    CHECK(cfg.train.lr0 == 1e-4);
    CHECK(cfg.train.lr_factor == 0.95);
    CHECK(cfg.train.lr_patience == 5);
    CHECK(cfg.train.early_stop_patience == 15);
    CHECK(cfg.train.threshold == 0.5);
    CHECK(cfg.train_frac == 0.85);
    CHECK(cfg.rotation_step_deg == 10);
}

TEST_CASE("run config: unknown keys are rejected, round trip is stable") {
    CHECK_THROWS_WITH_AS(static_cast<void>(RunConfig::from_json({{"max_epoch", 5}})),
                         doctest::Contains("max_epoch"), ConfigError);

    RunConfig cfg;
    cfg.train.seed = 99;
    cfg.target = Target::kTe;
    RunConfig back = RunConfig::from_json(cfg.to_json());
    CHECK(back.train.seed == 99);
    CHECK(back.target == Target::kTe);
    CHECK(back.model == cfg.model);

    CHECK_THROWS_AS(static_cast<void>(RunConfig::from_json({{"image_size", 100}})), ConfigError);
}

TEST_CASE("synth is reproducible bitwise and augment multiplies counts") {
    TempDir dir;
    const std::string a = (dir.path / "a").string();
    const std::string b = (dir.path / "b").string();
    CHECK(run_cli({"synth", "--n", "3", "--size", "32", "--seed", "1", "--out", a}) == 0);
    CHECK(run_cli({"synth", "--n", "3", "--size", "32", "--seed", "1", "--out", b}) == 0);
    for (const char* rel : {"images/phantom_000.png", "masks_icm/phantom_001.png",
                            "masks_te/phantom_002.png"}) {
        CHECK(testutil::slurp(a + "/" + rel) == testutil::slurp(b + "/" + rel));
    }

    const std::string aug = (dir.path / "aug").string();
    CHECK(run_cli({"augment", "--data-dir", a, "--step", "90", "--out", aug}) == 0);
    std::size_t images = 0, icm = 0, te = 0;
    for (auto& e : std::filesystem::directory_iterator(aug + "/images")) ++images, (void)e;
    for (auto& e : std::filesystem::directory_iterator(aug + "/masks_icm")) ++icm, (void)e;
    for (auto& e : std::filesystem::directory_iterator(aug + "/masks_te")) ++te, (void)e;
    CHECK(images == 12);  // 3 originals x 360/90
    CHECK(icm == 12);
    CHECK(te == 12);

    CHECK(run_cli({"augment", "--data-dir", a, "--step", "7", "--out", aug}) == 2);
}

TEST_CASE("train/predict/evaluate round trip on phantoms") {
    TempDir dir;
    const std::string data = (dir.path / "data").string();
    const std::string out = (dir.path / "run").string();
    REQUIRE(run_cli({"synth", "--n", "8", "--size", "32", "--seed", "3", "--out", data}) == 0);

    const std::string cfg_path = dir.file("cfg.json");
    write_tiny_config(cfg_path, 3, 11);

    REQUIRE(run_cli({"train", "--config", cfg_path, "--data-dir", data, "--target", "icm",
                     "--out", out}) == 0);
    namespace fs = std::filesystem;
    CHECK(fs::is_regular_file(out + "/checkpoint_icm.rdu"));
    CHECK(fs::is_regular_file(out + "/training_log.csv"));
    CHECK(fs::is_regular_file(out + "/config.json"));

    // the resolved snapshot reloads cleanly
    RunConfig snapshot = RunConfig::from_file(out + "/config.json");
    CHECK(snapshot.train.max_epochs == 3);
    CHECK(snapshot.train.seed == 11);

    // log row count respects max_epochs
    auto log_bytes = testutil::slurp(out + "/training_log.csv");
    const std::string log_text(log_bytes.begin(), log_bytes.end());
    int rows = -1;  // discount header
    for (char c : log_text) rows += c == '\n';
    CHECK(rows <= 3);

    const std::string pred_out = (dir.path / "pred").string();
    REQUIRE(run_cli({"predict", "--checkpoint", out + "/checkpoint_icm.rdu", "--input", data,
                     "--out", pred_out, "--threads", "2"}) == 0);
    CHECK(fs::is_regular_file(pred_out + "/phantom_000_prob.png"));
    CHECK(fs::is_regular_file(pred_out + "/phantom_000_mask.png"));

    // mask PNG holds only {0,255} and re-binarizing the 16-bit prob map
    // reproduces it exactly
    GrayImage8 mask = read_gray8(pred_out + "/phantom_000_mask.png");
    GrayImage16 prob = read_png_gray16(pred_out + "/phantom_000_prob.png");
    REQUIRE(mask.pixels.size() == prob.pixels.size());
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
        CHECK((mask.pixels[i] == 0 || mask.pixels[i] == 255));
        const bool fg = prob.pixels[i] >= 32768;  // round(0.5 * 65535) = 32768
        CHECK((mask.pixels[i] == 255) == fg);
    }

    const std::string eval_out = (dir.path / "eval").string();
    REQUIRE(run_cli({"evaluate", "--checkpoint", out + "/checkpoint_icm.rdu", "--config",
                     out + "/config.json", "--data-dir", data, "--target", "icm", "--out",
                     eval_out}) == 0);
    CHECK(fs::is_regular_file(eval_out + "/report_icm.csv"));
    CHECK(fs::is_regular_file(eval_out + "/summary_icm.txt"));
    // 8 originals at train_frac 0.75 -> 2 test images, each with overlay+panel
    int overlays = 0, panels = 0;
    for (auto& e : fs::directory_iterator(eval_out)) {
        const std::string name = e.path().filename().string();
        overlays += name.find("_overlay.png") != std::string::npos;
        panels += name.find("_panel.png") != std::string::npos;
    }
    CHECK(overlays == 2);
    CHECK(panels == 2);

    auto csv = testutil::slurp(eval_out + "/report_icm.csv");
    const std::string csv_text(csv.begin(), csv.end());
    CHECK(csv_text.find("id,target,accuracy,precision,recall,dice,jaccard,category") == 0);
}

TEST_CASE("train twice with one seed produces identical checkpoints") {
    TempDir dir;
    const std::string data = (dir.path / "data").string();
    REQUIRE(run_cli({"synth", "--n", "4", "--size", "32", "--seed", "5", "--out", data}) == 0);
    const std::string cfg_path = dir.file("cfg.json");
    write_tiny_config(cfg_path, 2, 7);

    const std::string run1 = (dir.path / "r1").string();
    const std::string run2 = (dir.path / "r2").string();
    REQUIRE(run_cli({"train", "--config", cfg_path, "--data-dir", data, "--target", "te", "--out",
                     run1, "--threads", "1"}) == 0);
    REQUIRE(run_cli({"train", "--config", cfg_path, "--data-dir", data, "--target", "te", "--out",
                     run2, "--threads", "1"}) == 0);
    CHECK(testutil::slurp(run1 + "/checkpoint_te.rdu") == testutil::slurp(run2 + "/checkpoint_te.rdu"));
    CHECK(testutil::slurp(run1 + "/training_log.csv") == testutil::slurp(run2 + "/training_log.csv"));
}

TEST_CASE("cli exit codes") {
    TempDir dir;
    const std::string cfg_path = dir.file("cfg.json");
    write_tiny_config(cfg_path, 1, 1);

    // missing masks directory -> data error
    std::filesystem::create_directories(dir.path / "broken" / "images");
    CHECK(run_cli({"train", "--config", cfg_path, "--data-dir", (dir.path / "broken").string(),
                   "--target", "icm", "--out", dir.file("out")}) == 3);

    // config with an unknown field -> config error naming it
    {
        std::ofstream f(dir.file("bad.json"));
        f << R"({"max_epoch": 5})";
    }
    CHECK(run_cli({"train", "--config", dir.file("bad.json"), "--data-dir", "x", "--out",
                   dir.file("out")}) == 2);

    // unreadable checkpoint -> checkpoint error
    CHECK(run_cli({"predict", "--checkpoint", dir.file("missing.rdu"), "--input", ".", "--out",
                   dir.file("out")}) == 4);

    // corrupt checkpoint -> checkpoint error
    testutil::spit(dir.file("junk.rdu"), {'R', 'D', 'U', '1', 0, 0, 0, 0});
    CHECK(run_cli({"predict", "--checkpoint", dir.file("junk.rdu"), "--input", ".", "--out",
                   dir.file("out")}) == 4);

    // bad flag value -> config error
    CHECK(run_cli({"train", "--config", cfg_path, "--data-dir", "x", "--target", "nope", "--out",
                   dir.file("out")}) == 2);
}

TEST_CASE("predict size override must match the checkpoint") {
    TempDir dir;
    const std::string data = (dir.path / "d").string();
    REQUIRE(run_cli({"synth", "--n", "2", "--size", "32", "--seed", "2", "--out", data}) == 0);
    const std::string cfg_path = dir.file("cfg.json");
    write_tiny_config(cfg_path, 1, 2);
    const std::string out = (dir.path / "run").string();
    REQUIRE(run_cli({"train", "--config", cfg_path, "--data-dir", data, "--target", "icm", "--out",
                     out}) == 0);
    CHECK(run_cli({"predict", "--checkpoint", out + "/checkpoint_icm.rdu", "--input", data,
                   "--out", dir.file("p"), "--size", "64"}) == 4);
    CHECK(run_cli({"predict", "--checkpoint", out + "/checkpoint_icm.rdu", "--input", data,
                   "--out", dir.file("p"), "--size", "32"}) == 0);
}
