#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgap/layers.hpp"
#include "lgap/rng.hpp"
#include "lgap/tensor.hpp"

namespace lgap::nets {

struct ConvStageSpec {
    std::vector<std::size_t> channels{48, 96, 192};
    std::size_t blocks_per_stage = 2;
    /// Stem kernel and stride. 1 gives a pointwise input adapter.
    std::size_t stem_patch = 1;
    std::size_t kernel = 7;

    void validate() const;
    std::size_t stages() const { return channels.size(); }
    friend bool operator==(const ConvStageSpec&, const ConvStageSpec&) = default;
};

void to_json(nlohmann::json& j, const ConvStageSpec& s);
void from_json(const nlohmann::json& j, ConvStageSpec& s);

/// depthwise k x k -> LayerNorm -> 1x1 expand 4x -> GELU -> 1x1 project, residual.
struct ConvNeXtBlock {
    nn::DepthwiseConv2d dw;
    nn::LayerNorm2d norm;
    nn::Conv2d expand;
    nn::Conv2d project;

    ConvNeXtBlock() = default;
    ConvNeXtBlock(const std::string& name, std::size_t channels, std::size_t kernel, Rng& rng);
    nn::Variable forward(const nn::Variable& x) const;

    template <class F>
    void visit(F&& f) {
        dw.visit(f);
        norm.visit(f);
        expand.visit(f);
        project.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        dw.visit(f);
        norm.visit(f);
        expand.visit(f);
        project.visit(f);
    }
};

struct Stage {
    nn::LayerNorm2d down_norm;  // unused in the first stage
    nn::Conv2d down;            // 2x2 stride 2, unused in the first stage
    std::vector<ConvNeXtBlock> blocks;

    template <class F>
    void visit(F&& f) {
        if (!down.weight.value.empty()) {
            down_norm.visit(f);
            down.visit(f);
        }
        for (auto& b : blocks) b.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        if (!down.weight.value.empty()) {
            down_norm.visit(f);
            down.visit(f);
        }
        for (const auto& b : blocks) b.visit(f);
    }
};

/// Stem plus stages; `stage_hook(i, h)` may transform each stage's output.
struct Backbone {
    ConvStageSpec spec;
    nn::Conv2d stem;
    nn::LayerNorm2d stem_norm;
    std::vector<Stage> stages;
    nn::LayerNorm2d final_norm;

    Backbone() = default;
    Backbone(const std::string& name, const ConvStageSpec& spec, std::size_t in_channels, Rng& rng);

    template <class Hook>
    nn::Variable features(const nn::Variable& x, Hook&& stage_hook) const {
        nn::Variable h = stem_norm.forward(stem.forward(x));
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const Stage& s = stages[i];
            if (i > 0) h = s.down.forward(s.down_norm.forward(h));
            for (const auto& b : s.blocks) h = b.forward(h);
            h = stage_hook(i, h);
        }
        return nn::global_avg_pool(final_norm.forward(h));
    }

    template <class F>
    void visit(F&& f) {
        stem.visit(f);
        stem_norm.visit(f);
        for (auto& s : stages) s.visit(f);
        final_norm.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        stem.visit(f);
        stem_norm.visit(f);
        for (const auto& s : stages) s.visit(f);
        final_norm.visit(f);
    }
};

// ---------------------------------------------------------------------------

/// x * (1 + gamma) + beta per channel. `features` is [C, ...] or [N, C, ...].
Tensor film_modulate(const Tensor& features, std::span<const float> gamma, std::span<const float> beta);

struct NoiseEmbeddingConfig {
    std::size_t frequencies = 16;
    /// Frequency bank, in cycles per unit of log(sigma), log-spaced.
    double min_frequency = 0.02;
    double max_frequency = 2.0;
    std::size_t width = 128;

    friend bool operator==(const NoiseEmbeddingConfig&, const NoiseEmbeddingConfig&) = default;
};

void to_json(nlohmann::json& j, const NoiseEmbeddingConfig& c);
void from_json(const nlohmann::json& j, NoiseEmbeddingConfig& c);

inline constexpr double kSigmaLogShift = 1e-8;

/// [sin(w_k t), cos(w_k t)] with t = log(sigma + 1e-8); one row per sigma.
Tensor fourier_features(std::span<const float> sigmas, const NoiseEmbeddingConfig& config);

struct NoiseEmbedding {
    NoiseEmbeddingConfig config;
    nn::Linear fc1;
    nn::Linear fc2;

    NoiseEmbedding() = default;
    NoiseEmbedding(const NoiseEmbeddingConfig& config, Rng& rng);

    /// e(sigma) for each sigma, [N, width]. Throws on negative or non-finite sigma.
    nn::Variable forward(std::span<const float> sigmas) const;

    template <class F>
    void visit(F&& f) {
        fc1.visit(f);
        fc2.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        fc1.visit(f);
        fc2.visit(f);
    }
};

/// Convenience: the embedding of a single sigma as a flat vector.
std::vector<float> embed_sigma(const NoiseEmbedding& embedding, float sigma);

/// Affine map embedding -> (gamma, beta) for one stage; zero at init.
struct FiLMLayer {
    nn::Linear proj;

    FiLMLayer() = default;
    FiLMLayer(const std::string& name, std::size_t embedding_width, std::size_t channels, Rng& rng);

    nn::Variable forward(const nn::Variable& x, const nn::Variable& embedding) const {
        return nn::film(x, proj.forward(embedding));
    }

    template <class F>
    void visit(F&& f) {
        proj.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        proj.visit(f);
    }
};

// ---------------------------------------------------------------------------

struct ClassifierConfig {
    Shape input_shape;  // [C, H, W]
    std::size_t num_classes = 2;
    ConvStageSpec backbone;
    NoiseEmbeddingConfig embedding;
    /// > 0 selects a normalized head emitting scale * cos(features, w_j).
    double cosine_scale = 0.0;

    void validate() const;
    friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

/// Noise-conditioned latent classifier f(x_sigma, sigma): pointwise input
/// adapter, ConvNeXt stages each followed by FiLM, linear head.
struct LatentClassifier {
    ClassifierConfig config;
    NoiseEmbedding embedding;
    Backbone backbone;
    std::vector<FiLMLayer> films;
    nn::Linear head;

    LatentClassifier() = default;
    LatentClassifier(const ClassifierConfig& config, std::uint64_t seed);

    /// x: [N, C, h, w]; one sigma per sample (or a single sigma broadcast).
    nn::Variable forward(const nn::Variable& x, std::span<const float> sigmas) const;
    /// The same network with FiLM removed.
    nn::Variable forward_unconditioned(const nn::Variable& x) const;

    template <class F>
    void visit(F&& f) {
        embedding.visit(f);
        backbone.visit(f);
        for (auto& l : films) l.visit(f);
        head.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        embedding.visit(f);
        backbone.visit(f);
        for (const auto& l : films) l.visit(f);
        head.visit(f);
    }
};

/// Pixel-space classifier: the same backbone with a patchify stem, no FiLM.
struct ImageClassifier {
    ClassifierConfig config;
    Backbone backbone;
    nn::Linear head;

    ImageClassifier() = default;
    ImageClassifier(const ClassifierConfig& config, std::uint64_t seed);

    nn::Variable forward(const nn::Variable& x) const;

    template <class F>
    void visit(F&& f) {
        backbone.visit(f);
        head.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        backbone.visit(f);
        head.visit(f);
    }
};

/// Gradient-free batched inference returning logits [N, K].
Tensor predict(const LatentClassifier& model, const Tensor& latents, float sigma = 0.0f);
Tensor predict(const ImageClassifier& model, const Tensor& images);

void save_classifier(const std::filesystem::path& dir, const LatentClassifier& model, std::uint64_t seed);
void save_classifier(const std::filesystem::path& dir, const ImageClassifier& model, std::uint64_t seed);
LatentClassifier load_latent_classifier(const std::filesystem::path& dir);
ImageClassifier load_image_classifier(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

/// x + sigma * eps, eps ~ N(0, 1) i.i.d.
Tensor add_noise(const Tensor& x, float sigma, Rng& rng);
/// Per-sample sigma along axis 0.
Tensor add_noise(const Tensor& x, std::span<const float> sigmas, Rng& rng);

/// Log-uniform noise levels on [sigma_min, sigma_max]; equal bounds give a constant.
struct SigmaSchedule {
    double sigma_min = 0.02;
    double sigma_max = 5.0;

    void validate() const;
    double sample(Rng& rng) const;
    friend bool operator==(const SigmaSchedule&, const SigmaSchedule&) = default;
};

void to_json(nlohmann::json& j, const SigmaSchedule& s);
void from_json(const nlohmann::json& j, SigmaSchedule& s);

}  // namespace lgap::nets
