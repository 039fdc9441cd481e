#include "lgap/nets.hpp"

#include <cmath>
#include <numbers>

#include "lgap/error.hpp"
#include "lgap/io.hpp"

namespace lgap::nets {

using nn::Variable;

void ConvStageSpec::validate() const {
    require(!channels.empty(), "backbone needs at least one stage");
    for (auto c : channels) require(c >= 1, "stage widths must be positive");
    require(blocks_per_stage >= 1, "each stage needs at least one block");
    require(stem_patch >= 1, "stem patch must be positive");
    require(kernel % 2 == 1, "depthwise kernel must be odd");
}

void to_json(nlohmann::json& j, const ConvStageSpec& s) {
    j = {{"channels", s.channels}, {"blocks_per_stage", s.blocks_per_stage}, {"stem_patch", s.stem_patch},
         {"kernel", s.kernel}};
}

void from_json(const nlohmann::json& j, ConvStageSpec& s) {
    ConvStageSpec d;
    s.channels = j.value("channels", d.channels);
    s.blocks_per_stage = j.value("blocks_per_stage", d.blocks_per_stage);
    s.stem_patch = j.value("stem_patch", d.stem_patch);
    s.kernel = j.value("kernel", d.kernel);
}

ConvNeXtBlock::ConvNeXtBlock(const std::string& name, std::size_t c, std::size_t kernel, Rng& rng)
    : dw(name + ".dw", c, kernel, rng),
      norm(name + ".norm", c),
      expand(name + ".expand", c, 4 * c, 1, 1, 0, rng),
      project(name + ".project", 4 * c, c, 1, 1, 0, rng) {
    // Small residual branch at init, in the spirit of ConvNeXt's layer scale.
    for (std::size_t i = 0; i < project.weight.value.numel(); ++i) project.weight.value[i] *= 0.1f;
    project.bias.value.fill(0.0f);
}

Variable ConvNeXtBlock::forward(const Variable& x) const {
    Variable h = project.forward(nn::gelu(expand.forward(norm.forward(dw.forward(x)))));
    return nn::add(x, h);
}

Backbone::Backbone(const std::string& name, const ConvStageSpec& s, std::size_t in_channels, Rng& rng) : spec(s) {
    spec.validate();
    stem = nn::Conv2d(name + ".stem", in_channels, spec.channels[0], spec.stem_patch, spec.stem_patch, 0, rng);
    stem_norm = nn::LayerNorm2d(name + ".stem_norm", spec.channels[0]);
    for (std::size_t i = 0; i < spec.stages(); ++i) {
        Stage st;
        const std::string sn = name + ".stage" + std::to_string(i);
        if (i > 0) {
            st.down_norm = nn::LayerNorm2d(sn + ".down_norm", spec.channels[i - 1]);
            st.down = nn::Conv2d(sn + ".down", spec.channels[i - 1], spec.channels[i], 2, 2, 0, rng);
        }
        for (std::size_t b = 0; b < spec.blocks_per_stage; ++b)
            st.blocks.emplace_back(sn + ".block" + std::to_string(b), spec.channels[i], spec.kernel, rng);
        stages.push_back(std::move(st));
    }
    final_norm = nn::LayerNorm2d(name + ".final_norm", spec.channels.back());
}

// ---------------------------------------------------------------------------

Tensor film_modulate(const Tensor& features, std::span<const float> gamma, std::span<const float> beta) {
    require_shape(features.rank() >= 1, "film_modulate on a scalar");
    const std::size_t axis = features.rank() == 4 ? 1 : 0;
    const std::size_t c = features.dim(axis);
    require_shape(gamma.size() == c && beta.size() == c,
                  "FiLM parameters have " + std::to_string(gamma.size()) + "/" + std::to_string(beta.size()) +
                      " entries for " + std::to_string(c) + " channels");
    const std::size_t outer = axis == 1 ? features.dim(0) : 1;
    const std::size_t inner = features.numel() / (outer * c);
    Tensor out(features.shape());
    for (std::size_t n = 0; n < outer; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = (n * c + ch) * inner + i;
                out[k] = features[k] * (1.0f + gamma[ch]) + beta[ch];
            }
    return out;
}

void to_json(nlohmann::json& j, const NoiseEmbeddingConfig& c) {
    j = {{"frequencies", c.frequencies}, {"min_frequency", c.min_frequency}, {"max_frequency", c.max_frequency},
         {"width", c.width}};
}

void from_json(const nlohmann::json& j, NoiseEmbeddingConfig& c) {
    NoiseEmbeddingConfig d;
    c.frequencies = j.value("frequencies", d.frequencies);
    c.min_frequency = j.value("min_frequency", d.min_frequency);
    c.max_frequency = j.value("max_frequency", d.max_frequency);
    c.width = j.value("width", d.width);
}

Tensor fourier_features(std::span<const float> sigmas, const NoiseEmbeddingConfig& cfg) {
    require(cfg.frequencies >= 1 && cfg.min_frequency > 0.0 && cfg.max_frequency >= cfg.min_frequency,
            "invalid Fourier frequency bank");
    const std::size_t f = cfg.frequencies;
    Tensor out({sigmas.size(), 2 * f});
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        const double sigma = sigmas[i];
        require(std::isfinite(sigma) && sigma >= 0.0, "noise level must be finite and >= 0, got " + std::to_string(sigma));
        const double t = std::log(sigma + kSigmaLogShift);
        for (std::size_t k = 0; k < f; ++k) {
            const double frac = f == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(f - 1);
            const double freq = cfg.min_frequency * std::pow(cfg.max_frequency / cfg.min_frequency, frac);
            const double angle = 2.0 * std::numbers::pi * freq * t;
            out[i * 2 * f + k] = static_cast<float>(std::sin(angle));
            out[i * 2 * f + f + k] = static_cast<float>(std::cos(angle));
        }
    }
    return out;
}

NoiseEmbedding::NoiseEmbedding(const NoiseEmbeddingConfig& c, Rng& rng)
    : config(c), fc1("embed.fc1", 2 * c.frequencies, c.width, rng), fc2("embed.fc2", c.width, c.width, rng) {}

Variable NoiseEmbedding::forward(std::span<const float> sigmas) const {
    return fc2.forward(nn::silu(fc1.forward(Variable(fourier_features(sigmas, config)))));
}

std::vector<float> embed_sigma(const NoiseEmbedding& embedding, float sigma) {
    nn::NoGradGuard guard;
    const float s[1] = {sigma};
    const Variable out = embedding.forward(s);  // keep storage alive while copying
    const auto v = out.value().values();
    return {v.begin(), v.end()};
}

FiLMLayer::FiLMLayer(const std::string& name, std::size_t width, std::size_t channels, Rng& rng)
    : proj(name, width, 2 * channels, rng) {
    proj.zero_init();
}

// ---------------------------------------------------------------------------

void ClassifierConfig::validate() const {
    require_shape(input_shape.size() == 3 && shape_numel(input_shape) > 0, "classifier input shape must be [C,H,W]");
    require(num_classes >= 2, "classifier needs at least 2 classes");
    require(cosine_scale >= 0.0 && std::isfinite(cosine_scale), "cosine_scale must be >= 0");
    backbone.validate();
    const std::size_t reduce = backbone.stem_patch << (backbone.stages() - 1);
    require(input_shape[1] % reduce == 0 && input_shape[2] % reduce == 0,
            "input " + shape_str(input_shape) + " not divisible by the backbone reduction " + std::to_string(reduce));
}

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
    j = {{"input_shape", c.input_shape}, {"num_classes", c.num_classes}, {"backbone", c.backbone},
         {"embedding", c.embedding}, {"cosine_scale", c.cosine_scale}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
    c.input_shape = j.at("input_shape").get<Shape>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.backbone = j.value("backbone", ConvStageSpec{});
    c.embedding = j.value("embedding", NoiseEmbeddingConfig{});
    c.cosine_scale = j.value("cosine_scale", 0.0);
}

namespace {
void check_input(const ClassifierConfig& cfg, const Variable& x) {
    require_shape(x.value().rank() == 4 && Shape(x.shape().begin() + 1, x.shape().end()) == cfg.input_shape,
                  "classifier expects [N," + shape_str(cfg.input_shape).substr(1) + " got " + shape_str(x.shape()));
}

// s * cos(f, w_j) when cosine_scale > 0 (the bias is unused), else f W^T + b.
Variable head_logits(const ClassifierConfig& cfg, const nn::Linear& head, const Variable& f) {
    if (cfg.cosine_scale == 0.0) return head.forward(f);
    const Variable w = nn::normalize_rows(nn::var(head.weight));
    return nn::scale(nn::linear(nn::normalize_rows(f), w, Variable{}), static_cast<float>(cfg.cosine_scale));
}
}  // namespace

LatentClassifier::LatentClassifier(const ClassifierConfig& cfg, std::uint64_t seed) : config(cfg) {
    config.validate();
    Rng rng(derive_seed(seed, {0x6c63}));
    embedding = NoiseEmbedding(config.embedding, rng);
    backbone = Backbone("backbone", config.backbone, config.input_shape[0], rng);
    for (std::size_t i = 0; i < config.backbone.stages(); ++i)
        films.emplace_back("film" + std::to_string(i), config.embedding.width, config.backbone.channels[i], rng);
    head = nn::Linear("head", config.backbone.channels.back(), config.num_classes, rng);
}

Variable LatentClassifier::forward(const Variable& x, std::span<const float> sigmas) const {
    check_input(config, x);
    const std::size_t n = x.shape()[0];
    require(sigmas.size() == n || sigmas.size() == 1,
            std::to_string(sigmas.size()) + " noise levels for a batch of " + std::to_string(n));
    std::vector<float> per_sample(sigmas.begin(), sigmas.end());
    if (per_sample.size() == 1) per_sample.assign(n, sigmas[0]);
    const Variable e = embedding.forward(per_sample);
    const Variable f = backbone.features(x, [&](std::size_t i, const Variable& h) { return films[i].forward(h, e); });
    return head_logits(config, head, f);
}

Variable LatentClassifier::forward_unconditioned(const Variable& x) const {
    check_input(config, x);
    return head_logits(config, head, backbone.features(x, [](std::size_t, const Variable& h) { return h; }));
}

ImageClassifier::ImageClassifier(const ClassifierConfig& cfg, std::uint64_t seed) : config(cfg) {
    config.validate();
    Rng rng(derive_seed(seed, {0x6963}));
    backbone = Backbone("backbone", config.backbone, config.input_shape[0], rng);
    head = nn::Linear("head", config.backbone.channels.back(), config.num_classes, rng);
}

Variable ImageClassifier::forward(const Variable& x) const {
    check_input(config, x);
    return head_logits(config, head, backbone.features(x, [](std::size_t, const Variable& h) { return h; }));
}

namespace {

constexpr std::size_t kPredictChunk = 64;

template <class F>
Tensor predict_chunks(const Tensor& x, std::size_t k, F f) {
    require_shape(x.rank() == 4, "predict expects a batch [N,C,H,W]");
    const std::size_t n = x.dim(0);
    Tensor out({n, k});
    nn::NoGradGuard guard;
    for (std::size_t b = 0; b < n; b += kPredictChunk) {
        const std::size_t e = std::min(n, b + kPredictChunk);
        const Tensor logits = f(x.slice_rows(b, e));
        std::copy_n(logits.data(), logits.numel(), out.data() + b * k);
    }
    return out;
}

}  // namespace

Tensor predict(const LatentClassifier& model, const Tensor& latents, float sigma) {
    const float s[1] = {sigma};
    return predict_chunks(latents, model.config.num_classes,
                          [&](const Tensor& x) { return model.forward(Variable(x), s).value(); });
}

Tensor predict(const ImageClassifier& model, const Tensor& images) {
    return predict_chunks(images, model.config.num_classes,
                          [&](const Tensor& x) { return model.forward(Variable(x)).value(); });
}

void save_classifier(const std::filesystem::path& dir, const LatentClassifier& model, std::uint64_t seed) {
    io::save_checkpoint(dir, {"latent_classifier", model.config, seed, 0}, nn::parameters_of(model));
}

void save_classifier(const std::filesystem::path& dir, const ImageClassifier& model, std::uint64_t seed) {
    io::save_checkpoint(dir, {"image_classifier", model.config, seed, 0}, nn::parameters_of(model));
}

namespace {
template <class Model>
Model load_model(const std::filesystem::path& dir, const std::string& kind) {
    const auto info = io::read_checkpoint_info(dir);
    if (info.kind != kind) throw ValidationError("checkpoint is a " + info.kind + ", expected " + kind);
    Model m(info.architecture.get<ClassifierConfig>(), info.seed);
    io::load_checkpoint_parameters(dir, nn::parameters_of(m));
    return m;
}
}  // namespace

LatentClassifier load_latent_classifier(const std::filesystem::path& dir) {
    return load_model<LatentClassifier>(dir, "latent_classifier");
}

ImageClassifier load_image_classifier(const std::filesystem::path& dir) {
    return load_model<ImageClassifier>(dir, "image_classifier");
}

// ---------------------------------------------------------------------------

Tensor add_noise(const Tensor& x, float sigma, Rng& rng) {
    const float s[1] = {sigma};
    return add_noise(x, std::span<const float>(s), rng);
}

Tensor add_noise(const Tensor& x, std::span<const float> sigmas, Rng& rng) {
    require(!sigmas.empty(), "add_noise needs at least one sigma");
    const std::size_t rows = sigmas.size() == 1 ? 1 : x.dim(0);
    require(sigmas.size() == rows, "one sigma per sample required");
    for (float s : sigmas) require(std::isfinite(s) && s >= 0.0f, "noise level must be finite and >= 0");
    Tensor out = x;
    const std::size_t per_row = x.numel() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
        const double s = sigmas[r];
        if (s == 0.0) continue;
        for (std::size_t i = 0; i < per_row; ++i) {
            float& v = out[r * per_row + i];
            v = static_cast<float>(v + s * rng.normal());
        }
    }
    return out;
}

void SigmaSchedule::validate() const {
    require(std::isfinite(sigma_min) && std::isfinite(sigma_max) && sigma_min >= 0.0 && sigma_max >= sigma_min,
            "sigma schedule needs 0 <= sigma_min <= sigma_max");
    require(sigma_min > 0.0 || sigma_max == sigma_min, "log-uniform schedule needs sigma_min > 0");
}

double SigmaSchedule::sample(Rng& rng) const {
    validate();
    if (sigma_min == sigma_max) return sigma_min;
    return std::exp(rng.uniform(std::log(sigma_min), std::log(sigma_max)));
}

void to_json(nlohmann::json& j, const SigmaSchedule& s) { j = {{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}}; }

void from_json(const nlohmann::json& j, SigmaSchedule& s) {
    SigmaSchedule d;
    s.sigma_min = j.value("sigma_min", d.sigma_min);
    s.sigma_max = j.value("sigma_max", d.sigma_max);
}

}  // namespace lgap::nets
