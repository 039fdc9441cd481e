#include "lgap/autoenc.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "lgap/error.hpp"
#include "lgap/io.hpp"
#include "lgap/optim.hpp"
#include "lgap/rng.hpp"

namespace lgap::autoenc {

using nn::Variable;

void AutoencoderConfig::validate() const {
    require(image_channels >= 1 && latent_channels >= 1, "autoencoder channel counts must be positive");
    require(!widths.empty(), "autoencoder needs at least one downsampling block");
    for (auto w : widths) require(w >= 1, "autoencoder widths must be positive");
    require(image_size % downsample_factor() == 0 && image_size >= downsample_factor(),
            "image size " + std::to_string(image_size) + " is not a multiple of the downsample factor " +
                std::to_string(downsample_factor()));
}

void to_json(nlohmann::json& j, const AutoencoderConfig& c) {
    j = {{"image_channels", c.image_channels},
         {"image_size", c.image_size},
         {"widths", c.widths},
         {"latent_channels", c.latent_channels}};
}

void from_json(const nlohmann::json& j, AutoencoderConfig& c) {
    AutoencoderConfig d;
    c.image_channels = j.value("image_channels", d.image_channels);
    c.image_size = j.value("image_size", d.image_size);
    c.widths = j.value("widths", d.widths);
    c.latent_channels = j.value("latent_channels", d.latent_channels);
}

Autoencoder::Autoencoder(const AutoencoderConfig& cfg, std::uint64_t seed_) : config(cfg), seed(seed_) {
    config.validate();
    Rng rng(derive_seed(seed, {0x6165}));
    std::size_t in = config.image_channels;
    for (std::size_t i = 0; i < config.widths.size(); ++i) {
        down.emplace_back("enc.down" + std::to_string(i), in, config.widths[i], 3, 2, 1, rng);
        in = config.widths[i];
    }
    to_latent = nn::Conv2d("enc.to_latent", in, config.latent_channels, 1, 1, 0, rng);
    from_latent = nn::Conv2d("dec.from_latent", config.latent_channels, in, 3, 1, 1, rng);
    for (std::size_t i = config.widths.size(); i-- > 0;) {
        const std::size_t out = i > 0 ? config.widths[i - 1] : config.image_channels;
        up.emplace_back("dec.up" + std::to_string(config.widths.size() - 1 - i), config.widths[i], out, 3, 1, 1, rng);
    }
}

Variable Autoencoder::encode(const Variable& x) const {
    Variable h = x;
    for (const auto& l : down) h = nn::silu(l.forward(h));
    return to_latent.forward(h);
}

Variable Autoencoder::decode(const Variable& z) const {
    Variable h = nn::silu(from_latent.forward(z));
    for (std::size_t i = 0; i < up.size(); ++i) {
        h = up[i].forward(nn::upsample_nearest2(h));
        if (i + 1 < up.size()) h = nn::silu(h);
    }
    return h;
}

namespace {

constexpr std::size_t kInferenceChunk = 64;

Tensor as_batch(const Tensor& t, const Shape& item, const char* what) {
    if (t.rank() == item.size() && t.shape() == item) {
        Shape s{1};
        s.insert(s.end(), item.begin(), item.end());
        return t.reshaped(s);
    }
    require_shape(t.rank() == item.size() + 1 && Shape(t.shape().begin() + 1, t.shape().end()) == item,
                  std::string(what) + ": expected [N," + shape_str(item).substr(1) + " got " + shape_str(t.shape()));
    return t;
}

template <class F>
Tensor map_chunks(const Tensor& batch, const Shape& out_item, F f) {
    const std::size_t n = batch.dim(0);
    Shape out_shape{n};
    out_shape.insert(out_shape.end(), out_item.begin(), out_item.end());
    Tensor out(out_shape);
    const std::size_t item = shape_numel(out_item);
    nn::NoGradGuard guard;
    for (std::size_t b = 0; b < n; b += kInferenceChunk) {
        const std::size_t e = std::min(n, b + kInferenceChunk);
        const Tensor r = f(batch.slice_rows(b, e));
        std::copy_n(r.data(), r.numel(), out.data() + b * item);
    }
    return out;
}

}  // namespace

Tensor encode(const Autoencoder& ae, const Tensor& images) {
    const bool single = images.rank() == 3;
    const Tensor batch = as_batch(images, ae.config.image_shape(), "encode");
    Tensor z = map_chunks(batch, ae.config.latent_shape(),
                          [&](const Tensor& x) { return ae.encode(Variable(x)).value(); });
    return single ? std::move(z).reshaped(ae.config.latent_shape()) : z;
}

Tensor decode(const Autoencoder& ae, const Tensor& latents) {
    const bool single = latents.rank() == 3;
    const Tensor batch = as_batch(latents, ae.config.latent_shape(), "decode");
    Tensor x = map_chunks(batch, ae.config.image_shape(), [&](const Tensor& z) { return ae.decode(Variable(z)).value(); });
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], 0.0f, 1.0f);
    return single ? std::move(x).reshaped(ae.config.image_shape()) : x;
}

void to_json(nlohmann::json& j, const AeTrainConfig& c) {
    j = {{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"seed", c.seed},
         {"pretrain_images", c.pretrain_images}};
}

void from_json(const nlohmann::json& j, AeTrainConfig& c) {
    AeTrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.pretrain_images = j.value("pretrain_images", d.pretrain_images);
}

AeTrainResult train_autoencoder(const Tensor& images, const AutoencoderConfig& arch, const AeTrainConfig& train) {
    arch.validate();
    require(train.batch_size >= 1, "batch size must be positive");
    require(train.learning_rate > 0.0 && std::isfinite(train.learning_rate), "learning rate must be positive");
    const Tensor data = as_batch(images, arch.image_shape(), "train_autoencoder");
    const std::size_t n = data.dim(0);

    AeTrainResult result{Autoencoder(arch, train.seed), {}};
    Autoencoder& ae = result.model;
    nn::AdamW opt(nn::parameters_of(ae), {.learning_rate = train.learning_rate});
    Rng rng(derive_seed(train.seed, {0x61657472}));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < n; b += train.batch_size) {
            const std::size_t e = std::min(n, b + train.batch_size);
            const std::span<const std::size_t> idx(order.data() + b, e - b);
            const Tensor x = data.gather_rows(idx);
            const Variable loss = nn::mse_loss(ae.decode(ae.encode(Variable(x))), x);
            const double v = loss.value()[0];
            if (!std::isfinite(v))
                throw DivergenceError("autoencoder loss became non-finite at epoch " + std::to_string(epoch));
            nn::backward(loss);
            opt.step();
            ++ae.step;
            total += v;
            ++batches;
        }
        result.loss_history.push_back(total / static_cast<double>(batches));
        spdlog::debug("autoencoder epoch {} mse {:.6f}", epoch, result.loss_history.back());
    }
    return result;
}

void save_autoencoder(const std::filesystem::path& dir, const Autoencoder& ae) {
    io::save_checkpoint(dir, {"autoencoder", ae.config, ae.seed, ae.step}, nn::parameters_of(ae));
}

Autoencoder load_autoencoder(const std::filesystem::path& dir) {
    const auto info = io::read_checkpoint_info(dir);
    if (info.kind != "autoencoder") throw ValidationError("checkpoint is a " + info.kind + ", not an autoencoder");
    Autoencoder ae(info.architecture.get<AutoencoderConfig>(), info.seed);
    ae.step = info.step;
    io::load_checkpoint_parameters(dir, nn::parameters_of(ae));
    return ae;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const LatentStats& s) {
    j = {{"mean", s.mean}, {"std", s.std}, {"floored_channels", s.floored_channels}};
}

void from_json(const nlohmann::json& j, LatentStats& s) {
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
    s.floored_channels = j.value("floored_channels", std::vector<std::size_t>{});
    require(s.mean.size() == s.std.size(), "latent stats: mean/std length mismatch");
}

LatentStats fit_latent_stats(const Tensor& latents) {
    require_shape(latents.rank() == 4, "fit_latent_stats expects [N,C,h,w], got " + shape_str(latents.shape()));
    require(latents.dim(0) >= 2, "fit_latent_stats needs at least 2 samples");
    const std::size_t n = latents.dim(0), c = latents.dim(1), hw = latents.dim(2) * latents.dim(3);
    LatentStats s;
    s.mean.assign(c, 0.0);
    s.std.assign(c, 0.0);
    const double count = static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) sum += latents[(i * c + ch) * hw + p];
        const double mu = sum / count;
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
                const double d = latents[(i * c + ch) * hw + p] - mu;
                ss += d * d;
            }
        s.mean[ch] = mu;
        s.std[ch] = std::sqrt(ss / count);
        if (!(s.std[ch] >= kStdFloor)) {
            s.std[ch] = kStdFloor;
            s.floored_channels.push_back(ch);
        }
    }
    if (!s.floored_channels.empty())
        spdlog::warn("latent stats: {} channel(s) with near-zero variance floored to {}", s.floored_channels.size(),
                     kStdFloor);
    return s;
}

namespace {

template <class F>
Tensor per_channel(const Tensor& latents, const LatentStats& stats, F f) {
    require_shape(latents.rank() == 3 || latents.rank() == 4, "latents must be [C,h,w] or [N,C,h,w]");
    const std::size_t axis = latents.rank() - 3;
    const std::size_t c = latents.dim(axis);
    require_shape(c == stats.channels(), "latent has " + std::to_string(c) + " channels, stats have " +
                                             std::to_string(stats.channels()));
    const std::size_t hw = latents.dim(axis + 1) * latents.dim(axis + 2);
    const std::size_t n = latents.numel() / (c * hw);
    Tensor out(latents.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t k = (i * c + ch) * hw + p;
                out[k] = static_cast<float>(f(static_cast<double>(latents[k]), stats.mean[ch], stats.std[ch]));
            }
    return out;
}

}  // namespace

Tensor normalize(const Tensor& latents, const LatentStats& stats) {
    return per_channel(latents, stats, [](double x, double mu, double s) { return (x - mu) / s; });
}

Tensor denormalize(const Tensor& latents, const LatentStats& stats) {
    return per_channel(latents, stats, [](double x, double mu, double s) { return x * s + mu; });
}

// ---------------------------------------------------------------------------

std::string to_string(ScramblerKind kind) {
    switch (kind) {
        case ScramblerKind::identity: return "identity";
        case ScramblerKind::orthogonal_channel_mix: return "orthogonal_channel_mix";
        case ScramblerKind::frequency_permutation: return "frequency_permutation";
    }
    return "unknown";
}

ScramblerKind parse_scrambler_kind(const std::string& text) {
    if (text == "identity" || text == "plain") return ScramblerKind::identity;
    if (text == "orthogonal_channel_mix" || text == "orth") return ScramblerKind::orthogonal_channel_mix;
    if (text == "frequency_permutation" || text == "freq") return ScramblerKind::frequency_permutation;
    throw ValidationError("unknown scrambler kind: " + text);
}

Scrambler::Scrambler(ScramblerKind kind, std::uint64_t seed, Shape latent_shape)
    : kind_(kind), seed_(seed), shape_(std::move(latent_shape)) {
    require_shape(shape_.size() == 3 && shape_numel(shape_) > 0, "scrambler shape must be [C,h,w]");
    const std::size_t c = shape_[0], h = shape_[1], w = shape_[2];
    Rng rng(derive_seed(seed, {0x7363, static_cast<std::uint64_t>(kind)}));

    if (kind_ == ScramblerKind::orthogonal_channel_mix) {
        Eigen::MatrixXd g(c, c);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) g(i, j) = rng.normal();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ();
        const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
        // Sign convention making Q unique (Haar-distributed).
        for (std::size_t j = 0; j < c; ++j)
            if (r(j, j) < 0) q.col(j) *= -1.0;
        q_.resize(c * c);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) q_[i * c + j] = q(i, j);
    } else if (kind_ == ScramblerKind::frequency_permutation) {
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < h; ++u)
                for (std::size_t v = 0; v < w; ++v) {
                    const std::size_t cu = (h - u) % h, cv = (w - v) % w;
                    if (cu == u && cv == v)
                        real_slots_.push_back({ch, u, v});
                    else if (u * w + v < cu * w + cv)
                        pair_slots_.push_back({ch, u, v});
                }
        real_perm_.resize(real_slots_.size());
        pair_perm_.resize(pair_slots_.size());
        std::iota(real_perm_.begin(), real_perm_.end(), std::size_t{0});
        std::iota(pair_perm_.begin(), pair_perm_.end(), std::size_t{0});
        rng.shuffle(real_perm_.begin(), real_perm_.end());
        rng.shuffle(pair_perm_.begin(), pair_perm_.end());
        pair_conj_.resize(pair_slots_.size());
        for (auto& f : pair_conj_) f = static_cast<std::uint8_t>(rng.below(2));
    }
}

Tensor Scrambler::scramble(const Tensor& latents) const { return apply(latents, false); }
Tensor Scrambler::descramble(const Tensor& latents) const { return apply(latents, true); }

Tensor Scrambler::apply(const Tensor& latents, bool inverse) const {
    const bool single = latents.rank() == 3;
    require_shape((single && latents.shape() == shape_) ||
                      (latents.rank() == 4 && Shape(latents.shape().begin() + 1, latents.shape().end()) == shape_),
                  "scrambler fitted for " + shape_str(shape_) + ", got " + shape_str(latents.shape()));
    if (kind_ == ScramblerKind::identity) return latents;
    Tensor out(latents.shape());
    const std::size_t item = shape_numel(shape_);
    const std::size_t n = latents.numel() / item;
    for (std::size_t i = 0; i < n; ++i) {
        if (kind_ == ScramblerKind::orthogonal_channel_mix)
            mix(latents.data() + i * item, out.data() + i * item, inverse);
        else
            permute_spectrum(latents.data() + i * item, out.data() + i * item, inverse);
    }
    return out;
}

void Scrambler::mix(const float* in, float* out, bool inverse) const {
    const std::size_t c = shape_[0], hw = shape_[1] * shape_[2];
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t i = 0; i < c; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j)
                acc += (inverse ? q_[j * c + i] : q_[i * c + j]) * static_cast<double>(in[j * hw + p]);
            out[i * hw + p] = static_cast<float>(acc);
        }
}

namespace {

using cd = std::complex<double>;

// Naive separable 2-D DFT of one h x w plane; sign -1 forward, +1 inverse
// (the inverse is unscaled).
void dft2(std::vector<cd>& a, std::size_t h, std::size_t w, int sign) {
    const double tau = 2.0 * std::numbers::pi * sign;
    std::vector<cd> tmp(std::max(h, w));
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t k = 0; k < w; ++k) {
            cd acc = 0.0;
            for (std::size_t x = 0; x < w; ++x) acc += a[y * w + x] * std::polar(1.0, tau * double(k * x % w) / double(w));
            tmp[k] = acc;
        }
        std::copy_n(tmp.begin(), w, a.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t k = 0; k < h; ++k) {
            cd acc = 0.0;
            for (std::size_t y = 0; y < h; ++y) acc += a[y * w + x] * std::polar(1.0, tau * double(k * y % h) / double(h));
            tmp[k] = acc;
        }
        for (std::size_t k = 0; k < h; ++k) a[k * w + x] = tmp[k];
    }
}

}  // namespace

void Scrambler::permute_spectrum(const float* in, float* out, bool inverse) const {
    const std::size_t c = shape_[0], h = shape_[1], w = shape_[2], hw = h * w;
    std::vector<std::vector<cd>> src(c, std::vector<cd>(hw)), dst(c, std::vector<cd>(hw));
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < hw; ++p) src[ch][p] = in[ch * hw + p];
        dft2(src[ch], h, w, -1);
    }
    auto at = [&](std::vector<std::vector<cd>>& s, const Slot& slot) -> cd& { return s[slot.channel][slot.u * w + slot.v]; };
    auto partner = [&](std::vector<std::vector<cd>>& s, const Slot& slot) -> cd& {
        return s[slot.channel][((h - slot.u) % h) * w + (w - slot.v) % w];
    };
    for (std::size_t i = 0; i < real_slots_.size(); ++i) {
        const Slot& from = real_slots_[i];
        const Slot& to = real_slots_[real_perm_[i]];
        if (!inverse)
            at(dst, to) = at(src, from).real();
        else
            at(dst, from) = at(src, to).real();
    }
    for (std::size_t i = 0; i < pair_slots_.size(); ++i) {
        const Slot& from = pair_slots_[i];
        const Slot& to = pair_slots_[pair_perm_[i]];
        if (!inverse) {
            const cd v = pair_conj_[i] ? std::conj(at(src, from)) : at(src, from);
            at(dst, to) = v;
            partner(dst, to) = std::conj(v);
        } else {
            const cd v = pair_conj_[i] ? std::conj(at(src, to)) : at(src, to);
            at(dst, from) = v;
            partner(dst, from) = std::conj(v);
        }
    }
    const double scale = 1.0 / static_cast<double>(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        dft2(dst[ch], h, w, +1);
        for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = static_cast<float>(dst[ch][p].real() * scale);
    }
}

void to_json(nlohmann::json& j, const Scrambler& s) {
    j = {{"kind", to_string(s.kind())}, {"seed", s.seed()}, {"shape", s.latent_shape()}};
}

void from_json(const nlohmann::json& j, Scrambler& s) {
    s = Scrambler(parse_scrambler_kind(j.at("kind").get<std::string>()), j.at("seed").get<std::uint64_t>(),
                  j.at("shape").get<Shape>());
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const QualityReport& q) {
    j = {{"psnr", q.psnr_summary}, {"ssim", q.ssim_summary}, {"count", q.psnr.size()}};
}

QualityReport reconstruction_quality(const Tensor& references, const Tensor& reconstructions) {
    require_shape(references.shape() == reconstructions.shape(), "reconstruction_quality: shape mismatch");
    require_shape(references.rank() == 4, "reconstruction_quality expects [N,C,H,W]");
    require(references.dim(0) > 0, "reconstruction_quality on empty split");
    QualityReport q;
    for (std::size_t i = 0; i < references.dim(0); ++i) {
        const Tensor a = references.row(i), b = reconstructions.row(i);
        q.psnr.push_back(metrics::psnr(a, b));
        q.ssim.push_back(metrics::ssim(a, b));
    }
    q.psnr_summary = metrics::summarize(q.psnr);
    q.ssim_summary = metrics::summarize(q.ssim);
    return q;
}

QualityReport reconstruction_quality(const Autoencoder& ae, const Tensor& images) {
    require(images.rank() == 4 && images.dim(0) > 0, "reconstruction_quality on empty split");
    return reconstruction_quality(images, decode(ae, encode(ae, images)));
}

}  // namespace lgap::autoenc
