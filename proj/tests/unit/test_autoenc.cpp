#include <cmath>
#include <filesystem>

#include <unistd.h>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lgap/autoenc.hpp"
#include "lgap/corpus.hpp"
#include "lgap/error.hpp"
#include "lgap/metrics.hpp"

using namespace lgap;
using namespace lgap::autoenc;
using lgap::testing::random_tensor;

namespace {

AutoencoderConfig tiny_ae(std::size_t image = 16) {
    AutoencoderConfig c;
    c.image_size = image;
    c.widths = {4, 8};
    c.latent_channels = 4;
    return c;
}

Tensor small_images(std::size_t n, std::size_t size, std::uint64_t seed) {
    corpus::CorpusSpec s;
    s.num_classes = 2;
    s.head_count = n / 2;
    s.imbalance_ratio = 1.0;
    s.image_size = size;
    s.texture_frequency_band = {2.0, static_cast<double>(size) / 4.0};
    s.seed = seed;
    return corpus::generate_corpus(s).images();
}

// Per-channel mean and population std over [N, C, h, w].
std::pair<std::vector<double>, std::vector<double>> channel_moments(const Tensor& z) {
    const std::size_t n = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
    std::vector<double> mean(c, 0.0), sd(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) mean[ch] += z[(i * c + ch) * hw + p];
        mean[ch] /= static_cast<double>(n * hw);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) sd[ch] += std::pow(z[(i * c + ch) * hw + p] - mean[ch], 2);
        sd[ch] = std::sqrt(sd[ch] / static_cast<double>(n * hw));
    }
    return {mean, sd};
}

}  // namespace

TEST_CASE("default architecture shapes") {
    Autoencoder ae(AutoencoderConfig{}, 0);
    Rng rng(1);
    const Tensor x = random_tensor({2, 1, 64, 64}, rng);
    const Tensor z = encode(ae, x);
    CHECK(z.shape() == Shape{2, 4, 8, 8});
    CHECK(encode(ae, x) == z);
    const Tensor y = decode(ae, z);
    CHECK(y.shape() == x.shape());
    for (float v : y.values()) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK(encode(ae, x.row(0)).shape() == Shape{4, 8, 8});
    CHECK_THROWS_AS(encode(ae, Tensor({1, 1, 32, 32})), ShapeError);
    CHECK_THROWS_AS(decode(ae, Tensor({1, 3, 8, 8})), ShapeError);
}

TEST_CASE("autoencoder parameter gradients agree with central differences") {
    AutoencoderConfig c;
    c.image_size = 8;
    c.widths = {3, 4};
    c.latent_channels = 2;
    Autoencoder ae(c, 5);
    Rng rng(2);
    Tensor x({2, 1, 8, 8});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform());

    SUBCASE("truncated encoder") {
        const Tensor target = random_tensor({2, 2, 2, 2}, rng);
        nn::ParameterRefs params;
        for (auto& l : ae.down) params.push_back(&l.weight), params.push_back(&l.bias);
        params.push_back(&ae.to_latent.weight);
        params.push_back(&ae.to_latent.bias);
        const auto errs = lgap::testing::gradient_errors(
            params, [&] { return nn::mse_loss(ae.encode(nn::Variable(x)), target); });
        for (const auto& e : errs) CHECK_MESSAGE(e.relative < 1e-2, e.name << " rel err " << e.relative);
    }
    SUBCASE("full reconstruction loss") {
        // Early encoder weights have gradients near float32 resolution through
        // the whole decoder; check them with a wider step.
        nn::ParameterRefs late, early;
        ae.visit([&](nn::Parameter& p) { (p.name.rfind("enc.down", 0) == 0 ? early : late).push_back(&p); });
        auto loss = [&] { return nn::mse_loss(ae.decode(ae.encode(nn::Variable(x))), x); };
        for (const auto& e : lgap::testing::gradient_errors(late, loss))
            CHECK_MESSAGE(e.relative < 1e-2, e.name << " rel err " << e.relative);
        for (const auto& e : lgap::testing::gradient_errors(early, loss, 1e-2))
            CHECK_MESSAGE(e.relative < 1e-2, e.name << " rel err " << e.relative);
    }
}

TEST_CASE("autoencoder training") {
    const Tensor images = small_images(16, 16, 3);
    AeTrainConfig train{.epochs = 4, .learning_rate = 3e-3, .batch_size = 8, .seed = 11};
    const auto a = train_autoencoder(images, tiny_ae(), train);
    CHECK(a.loss_history.size() == 4);
    CHECK(a.loss_history.back() < a.loss_history.front());

    const auto b = train_autoencoder(images, tiny_ae(), train);
    CHECK(a.loss_history == b.loss_history);
    CHECK(nn::same_parameters(a.model, b.model));

    train.epochs = 0;
    const auto untrained = train_autoencoder(images, tiny_ae(), train);
    CHECK(nn::same_parameters(untrained.model, Autoencoder(tiny_ae(), 11)));
    CHECK(untrained.loss_history.empty());
}

TEST_CASE("autoencoder checkpoint round trip") {
    Autoencoder ae(tiny_ae(), 9);
    const auto dir = std::filesystem::temp_directory_path() / ("lgap_ae_" + std::to_string(::getpid()));
    save_autoencoder(dir, ae);
    const auto back = load_autoencoder(dir);
    CHECK(back.config == ae.config);
    CHECK(nn::same_parameters(back, ae));
    std::filesystem::remove_all(dir);
}

TEST_CASE("latent statistics") {
    Rng rng(4);
    Tensor z = random_tensor({20, 3, 4, 4}, rng, 2.0);
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] += 5.0f;
    const auto stats = fit_latent_stats(z);
    const auto [mean, sd] = channel_moments(z);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(stats.mean[c] == doctest::Approx(mean[c]).epsilon(1e-9));
        CHECK(stats.std[c] == doctest::Approx(sd[c]).epsilon(1e-9));  // population, ddof 0
    }
    const auto [nm, ns] = channel_moments(normalize(z, stats));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(std::abs(nm[c]) < 1e-4);
        CHECK(std::abs(ns[c] - 1.0) < 1e-3);
    }
    CHECK(denormalize(normalize(z, stats), stats).max_abs_diff(z) < 1e-6 * 10.0f);

    // Affine: constant mu_c maps to zero.
    Tensor at_mean({1, 3, 4, 4});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 16; ++p) at_mean[c * 16 + p] = static_cast<float>(stats.mean[c]);
    CHECK(normalize(at_mean, stats).max_abs_diff(Tensor({1, 3, 4, 4})) < 1e-6);

    const auto dead = fit_latent_stats(Tensor({4, 2, 2, 2}));
    CHECK(dead.mean == std::vector<double>{0.0, 0.0});
    CHECK(dead.std == std::vector<double>{kStdFloor, kStdFloor});
    CHECK(dead.floored_channels.size() == 2);

    CHECK_THROWS_AS(normalize(Tensor({1, 2, 4, 4}), stats), ShapeError);
    CHECK_THROWS_AS(fit_latent_stats(Tensor({1, 3, 4, 4})), ValidationError);
}

TEST_CASE("normalize/denormalize are exact inverses on small values") {
    Rng rng(12);
    const Tensor z = random_tensor({10, 4, 8, 8}, rng);
    const auto stats = fit_latent_stats(z);
    CHECK(denormalize(normalize(z, stats), stats).max_abs_diff(z) < 1e-6);
}

TEST_CASE("stats fitted on training latents transfer to held-out latents") {
    corpus::CorpusSpec spec;
    spec.head_count = 40;
    spec.imbalance_ratio = 8.0;
    spec.image_size = 32;
    const auto data = corpus::generate_corpus(spec);
    AutoencoderConfig c = tiny_ae(32);
    const auto ae = train_autoencoder(data.images(), c, {.epochs = 2, .batch_size = 16, .seed = 1}).model;
    const auto folds = corpus::assign_folds(data.labels(), 5, 0);
    const std::vector<std::size_t> val_fold{0};
    const Tensor train = encode(ae, data.images(folds.indices_not_in(val_fold)));
    const Tensor val = encode(ae, data.images(folds.indices_in(0)));
    const auto stats = fit_latent_stats(train);
    const auto [vm, vs] = channel_moments(normalize(val, stats));
    for (double m : vm) CHECK(std::abs(m) <= 0.5);
}

TEST_CASE("scramblers are exactly invertible") {
    const Shape shape{4, 8, 8};
    Rng rng(21);
    for (auto kind : {ScramblerKind::identity, ScramblerKind::orthogonal_channel_mix,
                      ScramblerKind::frequency_permutation}) {
        CAPTURE(to_string(kind));
        const Scrambler s(kind, 1, shape);
        float worst = 0.0f;
        for (int i = 0; i < 1000; ++i) {
            const Tensor z = random_tensor(shape, rng);
            const Tensor y = s.scramble(z);
            CHECK(y.all_finite());
            worst = std::max(worst, s.descramble(y).max_abs_diff(z));
            if (kind == ScramblerKind::identity) CHECK(y == z);
        }
        CHECK(worst < 1e-5f);
    }
}

TEST_CASE("scramblers handle odd and rectangular shapes") {
    Rng rng(22);
    for (const Shape& shape : {Shape{1, 5, 5}, Shape{3, 4, 6}, Shape{2, 7, 3}, Shape{4, 1, 1}}) {
        const Scrambler s(ScramblerKind::frequency_permutation, 3, shape);
        for (int i = 0; i < 50; ++i) {
            const Tensor z = random_tensor(shape, rng);
            CHECK(s.descramble(s.scramble(z)).max_abs_diff(z) < 1e-5f);
        }
    }
}

TEST_CASE("orthogonal mix is an isometry at every position") {
    const Shape shape{4, 8, 8};
    const Scrambler s(ScramblerKind::orthogonal_channel_mix, 5, shape);
    const auto& q = s.mixing_matrix();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < 4; ++k) dot += q[k * 4 + i] * q[k * 4 + j];
            CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
        }
    Rng rng(23);
    for (int t = 0; t < 1000; ++t) {
        const Tensor z = random_tensor(shape, rng);
        const Tensor y = s.scramble(z);
        for (std::size_t p = 0; p < 64; ++p) {
            double nz = 0.0, ny = 0.0;
            for (std::size_t c = 0; c < 4; ++c) {
                nz += z[c * 64 + p] * z[c * 64 + p];
                ny += y[c * 64 + p] * y[c * 64 + p];
            }
            CHECK(std::abs(std::sqrt(nz) - std::sqrt(ny)) < 1e-5);
        }
    }
}

TEST_CASE("frequency permutation preserves total energy but moves it") {
    const Shape shape{4, 8, 8};
    const Scrambler s(ScramblerKind::frequency_permutation, 5, shape);
    Rng rng(24);
    const Tensor z = random_tensor(shape, rng);
    const Tensor y = s.scramble(z);
    double ez = 0.0, ey = 0.0;
    for (std::size_t i = 0; i < z.numel(); ++i) ez += z[i] * z[i], ey += y[i] * y[i];
    CHECK(ey == doctest::Approx(ez).epsilon(1e-5));  // Parseval
    CHECK(y.max_abs_diff(z) > 0.1f);
}

TEST_CASE("scramblers are deterministic in (kind, seed, shape)") {
    const Shape shape{4, 8, 8};
    Rng rng(25);
    const Tensor z = random_tensor({3, 4, 8, 8}, rng);
    const Scrambler a(ScramblerKind::frequency_permutation, 7, shape), b(ScramblerKind::frequency_permutation, 7, shape),
        c(ScramblerKind::frequency_permutation, 8, shape);
    CHECK(a.scramble(z) == b.scramble(z));
    CHECK_FALSE(a.scramble(z) == c.scramble(z));
    // Batched and per-item application agree.
    CHECK(a.scramble(z).row(1) == a.scramble(z.row(1)));
    const Scrambler back = nlohmann::json(a).get<Scrambler>();
    CHECK(back.scramble(z) == a.scramble(z));
    CHECK_THROWS_AS(a.scramble(Tensor({4, 4, 8})), ShapeError);
    CHECK(parse_scrambler_kind("freq") == ScramblerKind::frequency_permutation);
    CHECK(parse_scrambler_kind("orth") == ScramblerKind::orthogonal_channel_mix);
    CHECK(parse_scrambler_kind("plain") == ScramblerKind::identity);
    CHECK_THROWS_AS(parse_scrambler_kind("rot13"), ValidationError);
}

TEST_CASE("reconstruction quality") {
    Rng rng(26);
    Tensor refs({3, 1, 16, 16});
    for (auto& v : refs.values()) v = static_cast<float>(rng.uniform(0.2, 0.8));
    const auto perfect = reconstruction_quality(refs, refs);
    CHECK(perfect.psnr_summary.mean == metrics::kPsnrCapDb);
    CHECK(perfect.ssim_summary.mean == doctest::Approx(1.0));
    Tensor off = refs;
    for (auto& v : off.values()) v += 0.1f;
    CHECK(reconstruction_quality(refs, off).psnr_summary.mean == doctest::Approx(20.0).epsilon(1e-4));
    CHECK_THROWS_AS(reconstruction_quality(Tensor({0, 1, 16, 16}), Tensor({0, 1, 16, 16})), ValidationError);
}
