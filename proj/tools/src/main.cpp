// lgap command-line front end.
//
// Exit codes: 0 success, 2 invalid input (arguments, config, corrupt files),
// 3 training divergence, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "lgap/autoenc.hpp"
#include "lgap/corpus.hpp"
#include "lgap/error.hpp"
#include "lgap/harness.hpp"
#include "lgap/io.hpp"

namespace fs = std::filesystem;
using namespace lgap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> folds;
    std::string out = "out";
    std::string autoencoder;
    std::string log_level = "info";
};

harness::ExperimentConfig resolve_config(const CommonOptions& o) {
    harness::ExperimentConfig c = o.config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.folds) c.fold_count = *o.folds;
    if (!o.autoencoder.empty()) c.autoencoder_checkpoint = o.autoencoder;
    c.validate();
    return c;
}

// The resolved configuration is written before any training starts so every
// output directory can be traced back to its inputs.
void write_manifest(const fs::path& out, const std::string& command, const harness::ExperimentConfig& c) {
    fs::create_directories(out);
    io::write_json(out / "manifest.json",
                   {{"command", command}, {"config_hash", harness::config_hash(c)}, {"config", c}});
}

harness::ProgressFn progress() {
    return [](const std::string& msg) { spdlog::info("{}", msg); };
}

// A report with failed folds is still written; divergence is then the exit status.
int finish(const harness::GapReport& report, const fs::path& out) {
    harness::emit_report(report, out);
    std::cout << harness::render_markdown(report);
    if (report.incomplete) {
        spdlog::error("some folds diverged and were excluded; see {}", (out / "report.json").string());
        return kExitDivergence;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    memory::keep_freed_pages();
    CLI::App app{"Latent-space learnability gap toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonOptions o;
    app.add_option("--config", o.config_path, "JSON experiment config (unknown keys are rejected)")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Experiment seed (folds and classifier initialisation)");
    app.add_option("--folds", o.folds, "Number of cross-validation folds (>= 3)");
    app.add_option("--out", o.out, "Output directory")->capture_default_str();
    app.add_option("--ae", o.autoencoder, "Pretrained autoencoder checkpoint directory")->check(CLI::ExistingDirectory);
    app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic long-tailed corpus");

    auto* train_ae = app.add_subcommand("train-ae", "Train the autoencoder on an independent unlabeled draw");

    auto* encode = app.add_subcommand("encode", "Encode a corpus into normalised, optionally scrambled latents");
    std::string corpus_dir, condition_text = "plain";
    std::size_t stats_fold = 0;
    encode->add_option("--corpus", corpus_dir, "Corpus directory (default: generate from config)")
        ->check(CLI::ExistingDirectory);
    encode->add_option("--condition", condition_text, "plain, orth or freq")->capture_default_str();
    encode->add_option("--stats-fold", stats_fold, "Fold whose training split fits the latent statistics")
        ->capture_default_str();

    auto* train_cls = app.add_subcommand("train-cls", "Train classifiers in one space across all folds");
    std::string space_text;
    bool distill = false, noise_cond = false;
    train_cls->add_option("--space", space_text, "image, latent or recon")
        ->required()
        ->check(CLI::IsMember({"image", "latent", "recon", "reconstruction"}));
    train_cls->add_flag("--distill", distill, "Distil from the reconstruction-space classifier (latent space)");
    train_cls->add_flag("--noise-cond", noise_cond, "Noise-conditioned training (latent space)");
    train_cls->add_option("--condition", condition_text, "plain, orth or freq")->capture_default_str();

    auto* ablation = app.add_subcommand("ablation", "Run the latent-space ablation ladder");
    std::string ladder_condition = "freq";
    ablation->add_option("--condition", ladder_condition, "plain, orth or freq")->capture_default_str();

    app.add_subcommand("gap-report", "Full three-space experiment with gap statistics");

    auto* bench = app.add_subcommand("bench", "Training throughput: latent path vs decode + image classifier");
    double min_seconds = 10.0;
    std::vector<std::size_t> batch_sizes{1, 4, 16};
    bench->add_option("--min-seconds", min_seconds, "Timed seconds per measurement")->capture_default_str();
    bench->add_option("--batch-sizes", batch_sizes, "Batch sizes")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(o.log_level));
        const harness::ExperimentConfig config = resolve_config(o);
        const fs::path out = o.out;

        if (gen->parsed()) {
            write_manifest(out, "gen-data", config);
            const auto c = corpus::generate_corpus(config.corpus);
            corpus::save_corpus(c, out / "corpus");
            std::printf("wrote %zu samples to %s\n", c.size(), (out / "corpus").string().c_str());
            return kExitOk;
        }
        if (train_ae->parsed()) {
            write_manifest(out, "train-ae", config);
            const auto images = corpus::generate_corpus(harness::pretraining_spec(config)).images();
            const auto result = autoenc::train_autoencoder(images, config.autoencoder, config.autoencoder_training);
            autoenc::save_autoencoder(out / "autoencoder", result.model);
            const auto labeled = corpus::generate_corpus(config.corpus).images();
            const auto quality = autoenc::reconstruction_quality(result.model, labeled);
            io::write_json(out / "autoencoder_quality.json",
                           {{"loss_history", result.loss_history}, {"quality", quality}});
            std::printf("PSNR %s dB, SSIM %s\n", metrics::format_cell(quality.psnr_summary, 2).c_str(),
                        metrics::format_cell(quality.ssim_summary).c_str());
            return kExitOk;
        }
        if (encode->parsed()) {
            write_manifest(out, "encode", config);
            require(stats_fold < config.fold_count, "--stats-fold out of range");
            harness::PreparedData data;
            if (corpus_dir.empty()) {
                data = harness::prepare(config);
            } else {
                harness::ExperimentConfig c = config;
                const auto loaded = corpus::load_corpus(corpus_dir);
                c.corpus = loaded.spec;
                data = harness::prepare(c);
                require(data.corpus == loaded, "corpus directory does not match its own spec");
            }
            const auto kind = autoenc::parse_scrambler_kind(condition_text);
            const auto cf = harness::prepare_condition_fold(data, config, kind, stats_fold);
            io::write_f32le(out / "latents.f32le", cf.latent_inputs.values());
            io::write_json(out / "latents.json",
                           {{"shape", cf.latent_inputs.shape()},
                            {"condition", harness::condition_name(kind)},
                            {"scrambler", autoenc::Scrambler(kind, config.scrambler_seed,
                                                             data.autoencoder.config.latent_shape())},
                            {"stats", cf.stats},
                            {"stats_fold", stats_fold},
                            {"checksum", io::hex64(io::checksum_f32(cf.latent_inputs.values()))}});
            std::printf("wrote latents %s\n", shape_str(cf.latent_inputs.shape()).c_str());
            return kExitOk;
        }
        if (train_cls->parsed()) {
            harness::ExperimentConfig c = config;
            c.classifier.distill = c.classifier.distill || distill;
            c.classifier.noise_cond = c.classifier.noise_cond || noise_cond;
            write_manifest(out, "train-cls", c);
            const auto report = harness::run_single_space(c, harness::parse_space(space_text),
                                                          autoenc::parse_scrambler_kind(condition_text), progress());
            return finish(report, out);
        }
        if (ablation->parsed()) {
            write_manifest(out, "ablation", config);
            return finish(harness::run_ablation_ladder(config, autoenc::parse_scrambler_kind(ladder_condition), progress()),
                          out);
        }
        if (app.got_subcommand("gap-report")) {
            write_manifest(out, "gap-report", config);
            return finish(harness::run_three_space(config, progress()), out);
        }
        if (bench->parsed()) {
            write_manifest(out, "bench", config);
            const auto ae = config.autoencoder_checkpoint.empty()
                                ? autoenc::Autoencoder(config.autoencoder, config.autoencoder_training.seed)
                                : autoenc::load_autoencoder(config.autoencoder_checkpoint);
            const nets::LatentClassifier latent({ae.config.latent_shape(), config.corpus.num_classes,
                                                 config.classifier.latent_backbone, config.classifier.embedding,
                                                 config.classifier.head_scale()},
                                                config.seed);
            const nets::ImageClassifier image({ae.config.image_shape(), config.corpus.num_classes,
                                               config.classifier.image_backbone, config.classifier.embedding,
                                               config.classifier.head_scale()},
                                              config.seed);
            harness::ThroughputConfig tc;
            tc.batch_sizes = batch_sizes;
            tc.min_seconds = min_seconds;
            const auto rows = harness::benchmark_throughput(latent, ae, image, tc, config.seed);
            io::write_text(out / "bench.csv", harness::throughput_csv(rows));
            io::write_text(out / "bench.md", harness::throughput_table(rows));
            std::cout << harness::throughput_table(rows);
            return kExitOk;
        }
    } catch (const DivergenceError& e) {
        spdlog::error("training diverged: {}", e.what());
        return kExitDivergence;
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    } catch (const CorruptDataError& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitFailure;
    }
    return kExitFailure;
}
