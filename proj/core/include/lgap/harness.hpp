#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgap/autoenc.hpp"
#include "lgap/corpus.hpp"
#include "lgap/losses.hpp"
#include "lgap/metrics.hpp"
#include "lgap/nets.hpp"
#include "lgap/stats.hpp"

namespace lgap::harness {

enum class Space { image, latent, reconstruction };
std::string to_string(Space s);
Space parse_space(const std::string& text);

/// Latent condition, named after the scrambler it applies ("plain" = identity).
std::string condition_name(autoenc::ScramblerKind kind);

enum class LossKind { cross_entropy, ldam };
std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& text);

struct ClassifierRecipe {
    LossKind loss = LossKind::ldam;
    losses::LdamConfig ldam;
    /// `ldam.drw_epoch` refers to a schedule of this many epochs and is
    /// scaled proportionally to `epochs`.
    std::size_t drw_reference_budget = 60;
    std::size_t epochs = 30;
    std::size_t patience = 8;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 0.05;
    bool distill = false;
    losses::DistillConfig distill_config;
    bool noise_cond = false;
    nets::SigmaSchedule schedule;
    /// Noise level at which noise-conditioned classifiers are validated and tested.
    double sigma_eval = 0.02;
    nets::ConvStageSpec latent_backbone;
    nets::ConvStageSpec image_backbone{{48, 96, 192}, 2, 8, 7};
    nets::NoiseEmbeddingConfig embedding;

    void validate() const;
    std::size_t drw_epoch() const;
    /// Classifier head for this recipe: LDAM uses a cosine head scaled by s.
    double head_scale() const { return loss == LossKind::ldam ? ldam.scale : 0.0; }
    friend bool operator==(const ClassifierRecipe&, const ClassifierRecipe&) = default;
};

void to_json(nlohmann::json& j, const ClassifierRecipe& r);
void from_json(const nlohmann::json& j, ClassifierRecipe& r);

struct HpGrid {
    std::vector<double> learning_rates{5e-4, 1e-3, 2e-3};
    std::vector<double> weight_decays{0.01, 0.05};
    friend bool operator==(const HpGrid&, const HpGrid&) = default;
};

void to_json(nlohmann::json& j, const HpGrid& g);
void from_json(const nlohmann::json& j, HpGrid& g);

struct ExperimentConfig {
    corpus::CorpusSpec corpus;
    autoenc::AutoencoderConfig autoencoder;
    autoenc::AeTrainConfig autoencoder_training;
    /// Optional pretrained autoencoder checkpoint; otherwise one is trained on
    /// an independent unlabeled corpus drawn from the same generator.
    std::string autoencoder_checkpoint;
    std::vector<autoenc::ScramblerKind> conditions{autoenc::ScramblerKind::identity,
                                                   autoenc::ScramblerKind::frequency_permutation};
    std::vector<Space> spaces{Space::image, Space::latent, Space::reconstruction};
    ClassifierRecipe classifier;
    HpGrid hp_grid;
    std::size_t fold_count = 5;
    std::uint64_t seed = 0;
    std::uint64_t scrambler_seed = 1;

    void validate() const;
    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Parses a JSON config; unknown keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path);
/// FNV-1a of the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Folds

/// Test fold k, validation fold (k+1) mod F, training on the rest.
struct FoldSplit {
    std::size_t fold = 0;
    std::vector<std::size_t> train, val, test;
    std::uint64_t fingerprint() const;
};

FoldSplit fold_split(const corpus::FoldAssignment& folds, std::size_t fold);

// ---------------------------------------------------------------------------
// Classifier training

struct Dataset {
    Tensor x;
    std::vector<std::uint32_t> y;
};

/// A trainable classifier seen through its forward function and parameters.
struct ModelHandle {
    std::function<nn::Variable(const nn::Variable&, std::span<const float>)> forward;
    nn::ParameterRefs params;
    bool noise_conditioned_input = false;  // accepts sigma (latent classifier)
    double cosine_scale = 0.0;             // the model's ClassifierConfig::cosine_scale
};

ModelHandle handle(nets::LatentClassifier& model);
ModelHandle handle(nets::ImageClassifier& model);

struct TrainOutcome {
    std::vector<double> train_loss;
    std::vector<double> val_bacc;
    std::size_t best_epoch = 0;
    double best_val_bacc = -1.0;
    std::size_t epochs_run = 0;
};

/// Trains with early stopping on validation bACC and restores the best
/// parameters. `teacher_logits` (one row per training sample) is required
/// when the recipe enables distillation. Throws DivergenceError.
TrainOutcome train_classifier(ModelHandle& model, const Dataset& train, const Dataset& val,
                              const ClassifierRecipe& recipe, std::size_t num_classes, std::uint64_t seed,
                              const Tensor* teacher_logits = nullptr);

/// Logits [N, K] under no-grad; sigma is used by noise-conditioned models.
Tensor predict_logits(const ModelHandle& model, const Tensor& x, float sigma, std::size_t num_classes);

// ---------------------------------------------------------------------------
// Reports

struct CellResult {
    std::string condition;
    std::string space;
    std::size_t fold = 0;
    bool failed = false;
    std::string failure;
    metrics::MetricValues metrics;
    std::uint64_t seed = 0;
    std::uint64_t split_fingerprint = 0;
    std::size_t best_epoch = 0;
    double best_val_bacc = 0.0;
};

struct GapRow {
    std::string condition;
    std::vector<std::size_t> folds;  // folds where every compared space succeeded
    std::vector<double> ls_bacc, rs_bacc, is_bacc;
    double gap_rs_ls = 0.0;  // mean RS - LS bACC
    double gap_is_ls = 0.0;
    std::optional<stats::TestResult> t_rs_ls;
    std::optional<stats::TestResult> t_is_ls;
    std::optional<double> holm_p_rs_ls;
};

struct QualityRow {
    std::string condition;
    autoenc::QualityReport quality;
};

struct ScatterPoint {
    std::string condition;
    double psnr = 0.0;
    double gap_bacc_pp = 0.0;
};

struct LadderRung {
    std::string name;
    std::vector<CellResult> folds;
};

struct GapReport {
    std::string config_hash;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::size_t fold_count = 0;
    std::vector<std::uint64_t> split_fingerprints;
    std::vector<CellResult> cells;
    std::vector<QualityRow> quality;
    std::vector<GapRow> gaps;
    std::optional<stats::TestResult> overall_wilcoxon;
    std::vector<LadderRung> ladder;
    std::string ladder_condition;
    bool incomplete = false;

    /// Cells of one (condition, space), ordered by fold.
    std::vector<const CellResult*> cells_of(const std::string& condition, const std::string& space) const;
    metrics::MetricReport metric_report(const std::string& condition, const std::string& space) const;
};

void to_json(nlohmann::json& j, const CellResult& c);
void to_json(nlohmann::json& j, const GapRow& g);
void to_json(nlohmann::json& j, const GapReport& r);

/// Per-condition LS-vs-RS (and IS-vs-LS) paired t-tests over folds, one-sided
/// Wilcoxon over per-condition means, Holm across conditions.
void compute_gap(GapReport& report);
std::vector<ScatterPoint> render_scatter_data(const GapReport& report);

/// Writes report.json, report.csv, scatter.csv and report.md into `dir`.
void emit_report(const GapReport& report, const std::filesystem::path& dir);
std::string report_csv(const GapReport& report);
std::string scatter_csv(const GapReport& report);
/// Human-readable markdown: metrics per condition and space, gaps with
/// significance, reconstruction fidelity, and the ablation ladder if present.
std::string render_markdown(const GapReport& report);

// ---------------------------------------------------------------------------
// Experiment driver

/// Everything derived from the corpus and the autoencoder that classifier
/// runs share.
struct PreparedData {
    corpus::Corpus corpus;
    corpus::FoldAssignment folds;
    autoenc::Autoencoder autoencoder;
    std::vector<double> autoencoder_loss;
    Tensor images;   // [N, C, H, W]
    Tensor latents;  // raw encoder output [N, c, h, w]
};

/// The autoencoder's pretraining corpus: an independent, class-balanced draw
/// from the same generator, never the labeled corpus itself.
corpus::CorpusSpec pretraining_spec(const ExperimentConfig& config);

PreparedData prepare(const ExperimentConfig& config);

/// Per-fold inputs of one condition.
struct ConditionFold {
    FoldSplit split;
    autoenc::LatentStats stats;
    Tensor latent_inputs;          // scramble(normalize(E x)), all samples
    Tensor reconstruction_inputs;  // G(denormalize(descramble(.))), all samples
};

ConditionFold prepare_condition_fold(const PreparedData& data, const ExperimentConfig& config,
                                     autoenc::ScramblerKind condition, std::size_t fold);

using ProgressFn = std::function<void(const std::string&)>;

/// Trains one classifier per (condition, space, fold) and assembles the report,
/// including gap statistics and reconstruction quality.
GapReport run_three_space(const ExperimentConfig& config, const ProgressFn& progress = {});
GapReport run_three_space(const PreparedData& data, const ExperimentConfig& config, const ProgressFn& progress = {});

/// One space under one condition, honouring the recipe's distillation and
/// noise-conditioning flags (latent space only; the distillation teacher is
/// the reconstruction-space classifier of the same fold).
GapReport run_single_space(const ExperimentConfig& config, Space space, autoenc::ScramblerKind condition,
                           const ProgressFn& progress = {});

inline const std::vector<std::string> kLadderRungs{"naive", "+distill", "+hp_opt", "+noise_cond",
                                                   "+distill+noise_cond"};

/// Table-4 style ladder on one latent condition; the teacher is the
/// reconstruction-space classifier of the same fold.
GapReport run_ablation_ladder(const ExperimentConfig& config, autoenc::ScramblerKind condition,
                              const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Throughput

struct ThroughputRow {
    std::string path;  // "latent" or "reconstruction"
    std::size_t batch_size = 0;
    double samples_per_sec = 0.0;
    double peak_mb = 0.0;
    std::size_t iterations = 0;
};

struct ThroughputConfig {
    std::vector<std::size_t> batch_sizes{1, 4, 16};
    double min_seconds = 10.0;
    std::size_t warmup_iterations = 2;
};

/// Training-step throughput of the latent path (latent classifier) against the
/// reconstruction path (decode, then image classifier).
std::vector<ThroughputRow> benchmark_throughput(const nets::LatentClassifier& latent_model,
                                                const autoenc::Autoencoder& ae,
                                                const nets::ImageClassifier& image_model,
                                                const ThroughputConfig& config, std::uint64_t seed);

std::string throughput_csv(const std::vector<ThroughputRow>& rows);
/// One row per path, one "S/s, MB" column pair per batch size.
std::string throughput_table(const std::vector<ThroughputRow>& rows);

}  // namespace lgap::harness
