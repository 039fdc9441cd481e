#include "lgap/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "lgap/error.hpp"
#include "lgap/io.hpp"
#include "lgap/rng.hpp"

namespace lgap::corpus {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kTextureWaves = 4;
constexpr std::size_t kBackgroundWaves = 3;
constexpr double kPixelNoise = 0.02;

Tensor render_sample(const CorpusSpec& spec, std::size_t cls, std::size_t index) {
    Rng rng(derive_seed(spec.seed, {0x636f72707573ull, cls, index}));
    const std::size_t S = spec.image_size;
    const double K = static_cast<double>(spec.num_classes);

    struct Wave {
        double kx, ky, phase, amp;
    };
    // Orientation is the class code: class j sits at pi*j/K with a jitter
    // small enough that neighbouring classes never overlap.
    const double theta = std::numbers::pi * static_cast<double>(cls) / K;
    const double jitter = std::numbers::pi / (4.0 * K);
    const double wave_amp = spec.texture_amplitude * std::sqrt(2.0 / static_cast<double>(kTextureWaves));
    std::array<Wave, kTextureWaves> texture{};
    for (auto& w : texture) {
        const double f = rng.uniform(spec.texture_frequency_band[0], spec.texture_frequency_band[1]);
        const double t = theta + rng.uniform(-jitter, jitter);
        w = {kTwoPi * f * std::cos(t) / static_cast<double>(S), kTwoPi * f * std::sin(t) / static_cast<double>(S),
             rng.uniform(0.0, kTwoPi), wave_amp};
    }

    Tensor img({spec.channels, S, S});
    for (std::size_t c = 0; c < spec.channels; ++c) {
        const double gain = spec.channels == 1 ? 1.0 : rng.uniform(0.7, 1.0);
        std::array<Wave, kBackgroundWaves> background{};
        for (auto& w : background) {
            w = {kTwoPi * rng.uniform(-2.0, 2.0) / static_cast<double>(S),
                 kTwoPi * rng.uniform(-2.0, 2.0) / static_cast<double>(S), rng.uniform(0.0, kTwoPi),
                 rng.uniform(0.04, 0.10)};
        }
        float* plane = img.data() + c * S * S;
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                const double fx = static_cast<double>(x), fy = static_cast<double>(y);
                double v = 0.5;
                for (const auto& w : background) v += w.amp * std::cos(w.kx * fx + w.ky * fy + w.phase);
                for (const auto& w : texture) v += gain * w.amp * std::cos(w.kx * fx + w.ky * fy + w.phase);
                v += kPixelNoise * rng.normal();
                plane[y * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return img;
}

}  // namespace

void CorpusSpec::validate() const {
    require(num_classes >= 2, "corpus needs at least 2 classes, got " + std::to_string(num_classes));
    require(imbalance_ratio >= 1.0 && std::isfinite(imbalance_ratio), "imbalance_ratio must be >= 1");
    require(head_count >= 2, "head_count must be at least 2");
    require(image_size >= 8 && image_size % 8 == 0,
            "image_size must be a positive multiple of 8, got " + std::to_string(image_size));
    require(channels >= 1, "channels must be positive");
    require(texture_frequency_band[0] > 0.0 && texture_frequency_band[0] <= texture_frequency_band[1] &&
                texture_frequency_band[1] <= static_cast<double>(image_size) / 2.0,
            "texture_frequency_band must satisfy 0 < lo <= hi <= image_size/2");
    require(texture_amplitude >= 0.0 && std::isfinite(texture_amplitude), "texture_amplitude must be >= 0");
}

void to_json(nlohmann::json& j, const CorpusSpec& s) {
    j = {{"num_classes", s.num_classes},
         {"head_count", s.head_count},
         {"imbalance_ratio", s.imbalance_ratio},
         {"image_size", s.image_size},
         {"channels", s.channels},
         {"texture_frequency_band", s.texture_frequency_band},
         {"texture_amplitude", s.texture_amplitude},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
    CorpusSpec d;
    s.num_classes = j.value("num_classes", d.num_classes);
    s.head_count = j.value("head_count", d.head_count);
    s.imbalance_ratio = j.value("imbalance_ratio", d.imbalance_ratio);
    s.image_size = j.value("image_size", d.image_size);
    s.channels = j.value("channels", d.channels);
    s.texture_frequency_band = j.value("texture_frequency_band", d.texture_frequency_band);
    s.texture_amplitude = j.value("texture_amplitude", d.texture_amplitude);
    s.seed = j.value("seed", d.seed);
}

std::vector<std::size_t> class_counts(const CorpusSpec& spec) {
    spec.validate();
    std::vector<std::size_t> counts(spec.num_classes);
    const double last = static_cast<double>(spec.num_classes - 1);
    for (std::size_t j = 0; j < spec.num_classes; ++j) {
        const double n =
            static_cast<double>(spec.head_count) * std::pow(spec.imbalance_ratio, -static_cast<double>(j) / last);
        counts[j] = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(n)));
    }
    return counts;
}

std::vector<std::uint32_t> Corpus::labels() const {
    std::vector<std::uint32_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

Tensor Corpus::images() const {
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return images(all);
}

Tensor Corpus::images(std::span<const std::size_t> indices) const {
    require(!samples.empty(), "empty corpus");
    const Shape& item = samples.front().pixels.shape();
    Shape s{indices.size()};
    s.insert(s.end(), item.begin(), item.end());
    Tensor out(std::move(s));
    const std::size_t stride = samples.front().pixels.numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] < samples.size(), "corpus index out of range");
        std::memcpy(out.data() + i * stride, samples[indices[i]].pixels.data(), stride * sizeof(float));
    }
    return out;
}

bool operator==(const Corpus& a, const Corpus& b) {
    if (!(a.spec == b.spec) || a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i)
        if (a.samples[i].label != b.samples[i].label || !(a.samples[i].pixels == b.samples[i].pixels)) return false;
    return true;
}

Corpus generate_corpus(const CorpusSpec& spec) {
    const auto counts = class_counts(spec);
    Corpus corpus{spec, {}};
    std::size_t total = 0;
    for (auto n : counts) total += n;
    corpus.samples.reserve(total);
    for (std::size_t j = 0; j < counts.size(); ++j)
        for (std::size_t i = 0; i < counts[j]; ++i)
            corpus.samples.push_back({render_sample(spec, j, i), static_cast<std::uint32_t>(j)});
    return corpus;
}

std::vector<std::size_t> FoldAssignment::indices_in(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldAssignment::indices_not_in(std::span<const std::size_t> folds) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (std::find(folds.begin(), folds.end(), fold_of[i]) == folds.end()) out.push_back(i);
    return out;
}

std::uint64_t FoldAssignment::fingerprint() const {
    std::uint64_t h = io::fnv1a64(std::as_bytes(std::span<const std::uint32_t>(fold_of)));
    return splitmix64(h ^ fold_count);
}

FoldAssignment assign_folds(std::span<const std::uint32_t> labels, std::size_t fold_count, std::uint64_t seed) {
    require(fold_count >= 2, "fold_count must be at least 2");
    require(!labels.empty(), "cannot assign folds to an empty label set");
    const std::size_t K = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    std::vector<std::vector<std::size_t>> by_class(K);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (std::size_t c = 0; c < K; ++c)
        require(!by_class[c].empty(), "class " + std::to_string(c) + " has no samples");

    FoldAssignment fa{fold_count, seed, std::vector<std::uint32_t>(labels.size(), 0)};
    std::size_t offset = 0;
    for (std::size_t c = 0; c < K; ++c) {
        auto& idx = by_class[c];
        Rng rng(derive_seed(seed, {0x666f6c64ull, c}));
        rng.shuffle(idx.begin(), idx.end());
        for (std::size_t t = 0; t < idx.size(); ++t)
            fa.fold_of[idx[t]] = static_cast<std::uint32_t>((offset + t) % fold_count);
        offset = (offset + idx.size()) % fold_count;
    }
    return fa;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    require(!corpus.samples.empty(), "cannot save an empty corpus");
    std::filesystem::create_directories(dir);
    const Tensor images = corpus.images();
    const auto labels = corpus.labels();
    io::write_f32le(dir / "images.f32le", images.values());
    io::write_u32le(dir / "labels.u32le", labels);

    std::vector<std::size_t> counts(corpus.spec.num_classes, 0);
    for (auto l : labels) {
        require(l < counts.size(), "label out of range for corpus spec");
        ++counts[l];
    }
    const Shape& item = corpus.samples.front().pixels.shape();
    nlohmann::json manifest = {
        {"format", "lgap-corpus"},
        {"version", kCorpusFormatVersion},
        {"spec", corpus.spec},
        {"counts", counts},
        {"num_samples", corpus.samples.size()},
        {"image_shape", item},
        {"images", {{"file", "images.f32le"}, {"dtype", "f32le"}, {"checksum", io::hex64(io::checksum_f32(images.values()))}}},
        {"labels", {{"file", "labels.u32le"}, {"dtype", "u32le"}, {"checksum", io::hex64(io::checksum_u32(labels))}}},
    };
    io::write_json(dir / "manifest.json", manifest);
}

Corpus load_corpus(const std::filesystem::path& dir) {
    const auto m = io::read_json(dir / "manifest.json");
    if (m.value("format", "") != "lgap-corpus") throw CorruptDataError("not a corpus manifest: " + dir.string());
    const int version = m.value("version", -1);
    if (version != kCorpusFormatVersion)
        throw CorruptDataError("unsupported corpus format version " + std::to_string(version) + " (expected " +
                               std::to_string(kCorpusFormatVersion) + ")");
    Corpus corpus;
    corpus.spec = m.at("spec").get<CorpusSpec>();
    const auto n = m.at("num_samples").get<std::size_t>();
    const auto item = m.at("image_shape").get<Shape>();
    const std::size_t stride = shape_numel(item);
    const auto pixels = io::read_f32le(dir / "images.f32le", n * stride);
    const auto labels = io::read_u32le(dir / "labels.u32le", n);
    if (io::checksum_f32(pixels) != io::parse_hex64(m.at("images").at("checksum").get<std::string>()))
        throw CorruptDataError("corpus images checksum mismatch in " + dir.string());
    if (io::checksum_u32(labels) != io::parse_hex64(m.at("labels").at("checksum").get<std::string>()))
        throw CorruptDataError("corpus labels checksum mismatch in " + dir.string());

    const auto counts = m.at("counts").get<std::vector<std::size_t>>();
    std::vector<std::size_t> seen(counts.size(), 0);
    for (auto l : labels) {
        if (l >= seen.size()) throw CorruptDataError("label out of range in " + dir.string());
        ++seen[l];
    }
    if (seen != counts) throw CorruptDataError("manifest class counts disagree with labels in " + dir.string());

    corpus.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        corpus.samples.push_back(
            {Tensor(item, std::span<const float>(pixels.data() + i * stride, stride)), labels[i]});
    return corpus;
}

}  // namespace lgap::corpus
