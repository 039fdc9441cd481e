#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgap/layers.hpp"
#include "lgap/metrics.hpp"
#include "lgap/tensor.hpp"

namespace lgap::autoenc {

struct AutoencoderConfig {
    std::size_t image_channels = 1;
    std::size_t image_size = 64;
    /// One stride-2 conv block per entry; the spatial downsample factor is
    /// 2^widths.size().
    std::vector<std::size_t> widths{32, 64, 128};
    std::size_t latent_channels = 4;

    void validate() const;
    std::size_t downsample_factor() const { return std::size_t{1} << widths.size(); }
    std::size_t latent_size() const { return image_size / downsample_factor(); }
    Shape image_shape() const { return {image_channels, image_size, image_size}; }
    Shape latent_shape() const { return {latent_channels, latent_size(), latent_size()}; }

    friend bool operator==(const AutoencoderConfig&, const AutoencoderConfig&) = default;
};

void to_json(nlohmann::json& j, const AutoencoderConfig& c);
void from_json(const nlohmann::json& j, AutoencoderConfig& c);

/// Plain convolutional autoencoder: stride-2 3x3 conv blocks with SiLU, a 1x1
/// projection to the latent, and a mirrored nearest-upsample + conv decoder.
struct Autoencoder {
    AutoencoderConfig config;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;

    std::vector<nn::Conv2d> down;
    nn::Conv2d to_latent;
    nn::Conv2d from_latent;
    std::vector<nn::Conv2d> up;

    Autoencoder() = default;
    Autoencoder(const AutoencoderConfig& config, std::uint64_t seed);

    nn::Variable encode(const nn::Variable& images) const;
    /// Unclamped decoder output; training minimizes MSE on this.
    nn::Variable decode(const nn::Variable& latents) const;

    template <class F>
    void visit(F&& f) {
        for (auto& l : down) l.visit(f);
        to_latent.visit(f);
        from_latent.visit(f);
        for (auto& l : up) l.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        for (const auto& l : down) l.visit(f);
        to_latent.visit(f);
        from_latent.visit(f);
        for (const auto& l : up) l.visit(f);
    }
};

/// Batched, gradient-free encoding: [N,C,H,W] (or a single [C,H,W]) to raw latents.
Tensor encode(const Autoencoder& ae, const Tensor& images);
/// Batched decoding, clamped to [0,1].
Tensor decode(const Autoencoder& ae, const Tensor& latents);

struct AeTrainConfig {
    std::size_t epochs = 20;
    double learning_rate = 2e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    /// Size of the independent, class-balanced unlabeled draw the harness
    /// pretrains on.
    std::size_t pretrain_images = 1536;

    friend bool operator==(const AeTrainConfig&, const AeTrainConfig&) = default;
};

void to_json(nlohmann::json& j, const AeTrainConfig& c);
void from_json(const nlohmann::json& j, AeTrainConfig& c);

struct AeTrainResult {
    Autoencoder model;
    std::vector<double> loss_history;  // mean batch MSE per epoch
};

/// Minimizes pixel MSE with AdamW. Throws DivergenceError on a non-finite loss.
AeTrainResult train_autoencoder(const Tensor& images, const AutoencoderConfig& arch, const AeTrainConfig& train);

void save_autoencoder(const std::filesystem::path& dir, const Autoencoder& ae);
Autoencoder load_autoencoder(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

inline constexpr double kStdFloor = 1e-6;

/// Per-channel mean and standard deviation over samples and positions.
struct LatentStats {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<std::size_t> floored_channels;

    std::size_t channels() const { return mean.size(); }
    friend bool operator==(const LatentStats&, const LatentStats&) = default;
};

void to_json(nlohmann::json& j, const LatentStats& s);
void from_json(const nlohmann::json& j, LatentStats& s);

/// latents: [N,C,h,w], N >= 2. Channels with std below the floor are clamped
/// to it and reported with a warning.
LatentStats fit_latent_stats(const Tensor& latents);
Tensor normalize(const Tensor& latents, const LatentStats& stats);
Tensor denormalize(const Tensor& latents, const LatentStats& stats);

// ---------------------------------------------------------------------------

enum class ScramblerKind { identity, orthogonal_channel_mix, frequency_permutation };

std::string to_string(ScramblerKind kind);
ScramblerKind parse_scrambler_kind(const std::string& text);

/// Exactly invertible latent restructuring, fully determined by
/// (kind, seed, latent shape).
class Scrambler {
public:
    Scrambler() : Scrambler(ScramblerKind::identity, 0, {1, 1, 1}) {}
    Scrambler(ScramblerKind kind, std::uint64_t seed, Shape latent_shape);

    ScramblerKind kind() const noexcept { return kind_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const Shape& latent_shape() const noexcept { return shape_; }

    /// Accepts [C,h,w] or [N,C,h,w].
    Tensor scramble(const Tensor& latents) const;
    Tensor descramble(const Tensor& latents) const;

    /// Row-major C x C mixing matrix (orthogonal_channel_mix only).
    const std::vector<double>& mixing_matrix() const noexcept { return q_; }

private:
    struct Slot {
        std::size_t channel, u, v;
    };
    Tensor apply(const Tensor& latents, bool inverse) const;
    void mix(const float* in, float* out, bool inverse) const;
    void permute_spectrum(const float* in, float* out, bool inverse) const;

    ScramblerKind kind_;
    std::uint64_t seed_;
    Shape shape_;
    std::vector<double> q_;
    // Frequency permutation: self-conjugate (real) bins and conjugate-pair
    // representatives, each permuted within its own class.
    std::vector<Slot> real_slots_, pair_slots_;
    std::vector<std::size_t> real_perm_, pair_perm_;
    std::vector<std::uint8_t> pair_conj_;
};

void to_json(nlohmann::json& j, const Scrambler& s);
void from_json(const nlohmann::json& j, Scrambler& s);

// ---------------------------------------------------------------------------

struct QualityReport {
    std::vector<double> psnr;
    std::vector<double> ssim;
    metrics::Summary psnr_summary;
    metrics::Summary ssim_summary;
};

void to_json(nlohmann::json& j, const QualityReport& q);

/// Per-image PSNR/SSIM of reconstructions against references, both [N,C,H,W].
QualityReport reconstruction_quality(const Tensor& references, const Tensor& reconstructions);
QualityReport reconstruction_quality(const Autoencoder& ae, const Tensor& images);

}  // namespace lgap::autoenc
