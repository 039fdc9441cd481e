#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgap/tensor.hpp"

namespace lgap::corpus {

/// One raster in [0,1] (channels x height x width) and its class index.
struct LabeledImage {
    Tensor pixels;
    std::uint32_t label = 0;
};

/// Parameters of a synthetic long-tailed corpus. Class identity is carried by
/// the orientation of a band-limited texture; everything else is nuisance.
struct CorpusSpec {
    std::size_t num_classes = 6;
    std::size_t head_count = 320;
    double imbalance_ratio = 64.0;
    std::size_t image_size = 64;
    std::size_t channels = 1;
    /// Spatial frequencies (cycles per image) of the class texture.
    std::array<double, 2> texture_frequency_band{6.0, 12.0};
    double texture_amplitude = 0.15;
    std::uint64_t seed = 0;

    /// Throws ValidationError on K < 2, ratio < 1, image size not a multiple
    /// of 8, or an empty/inverted frequency band.
    void validate() const;

    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

void to_json(nlohmann::json& j, const CorpusSpec& spec);
void from_json(const nlohmann::json& j, CorpusSpec& spec);

/// n_j = round(head * ratio^(-j/(K-1))), at least 2.
std::vector<std::size_t> class_counts(const CorpusSpec& spec);

struct Corpus {
    CorpusSpec spec;
    std::vector<LabeledImage> samples;

    std::size_t size() const noexcept { return samples.size(); }
    std::vector<std::uint32_t> labels() const;
    /// All pixels stacked as [N, C, H, W].
    Tensor images() const;
    Tensor images(std::span<const std::size_t> indices) const;

    friend bool operator==(const Corpus& a, const Corpus& b);
};

/// Deterministic in `spec.seed`. Samples are ordered by class, and each
/// sample is a pure function of (seed, class, index within class).
Corpus generate_corpus(const CorpusSpec& spec);

struct FoldAssignment {
    std::size_t fold_count = 5;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> fold_of;

    std::vector<std::size_t> indices_in(std::size_t fold) const;
    std::vector<std::size_t> indices_not_in(std::span<const std::size_t> folds) const;
    /// Order-sensitive hash of the assignment, used to check that two runs
    /// share identical splits.
    std::uint64_t fingerprint() const;
};

/// Stratified assignment: samples of each class are shuffled with a stream
/// derived from (seed, class) and dealt round-robin, continuing from where
/// the previous class stopped so overall fold sizes stay balanced.
FoldAssignment assign_folds(std::span<const std::uint32_t> labels, std::size_t fold_count, std::uint64_t seed);

inline constexpr int kCorpusFormatVersion = 1;

/// Writes manifest.json, images.f32le and labels.u32le into `dir`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Throws CorruptDataError on checksum, size or version mismatch.
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace lgap::corpus
