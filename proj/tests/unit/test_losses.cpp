#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lgap/error.hpp"
#include "lgap/losses.hpp"
#include "lgap/nets.hpp"

using namespace lgap;
using namespace lgap::losses;
using lgap::testing::numeric_gradient;
using lgap::testing::relative_error;

namespace {

std::vector<double> random_logits(Rng& rng, std::size_t k, double scale = 2.0) {
    std::vector<double> z(k);
    for (auto& v : z) v = scale * rng.normal();
    return z;
}

nets::ClassifierConfig tiny_config(std::size_t classes = 2) {
    nets::ClassifierConfig c;
    c.input_shape = {4, 8, 8};
    c.num_classes = classes;
    c.backbone = {{8, 16}, 1, 1, 3};
    c.embedding = {4, 0.02, 2.0, 8};
    return c;
}

}  // namespace

TEST_CASE("cross-entropy closed forms") {
    const std::vector<double> confident{10.0, -10.0};
    CHECK(cross_entropy(confident, 0).value == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));
    CHECK(cross_entropy(confident, 0).value == doctest::Approx(2.06e-9).epsilon(1e-2));
    const std::vector<double> uniform(5, 0.3);
    CHECK(cross_entropy(uniform, 2).value == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        auto z = random_logits(rng, 4);
        auto shifted = z;
        for (auto& v : shifted) v += 100.0;
        CHECK(std::abs(cross_entropy(z, 1).value - cross_entropy(shifted, 1).value) < 1e-6);
    }
    CHECK_THROWS_AS(cross_entropy(confident, 2), ValidationError);
}

TEST_CASE("LDAM margins and reduction cases") {
    const std::vector<std::size_t> counts{16, 1};
    const auto m = ldam_margins(counts, 0.5);
    CHECK(m[1] / m[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m[1] == doctest::Approx(0.5));

    // Zero margins, unit scale, before DRW: plain cross-entropy.
    LdamConfig plain{.max_margin = 0.0, .scale = 1.0, .drw_epoch = 5};
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto z = random_logits(rng, 2);
        CHECK(ldam_loss(z, 1, counts, plain, 0).value == doctest::Approx(cross_entropy(z, 1).value).epsilon(1e-12));
    }
    // Balanced counts: reweighting is a no-op.
    const std::vector<std::size_t> balanced{7, 7, 7};
    LdamConfig cfg;
    const auto z = random_logits(rng, 3);
    CHECK(ldam_loss(z, 2, balanced, cfg, 100).value == doctest::Approx(ldam_loss(z, 2, balanced, cfg, 0).value));
    CHECK_THROWS_AS(ldam_margins(std::vector<std::size_t>{3, 0}, 0.5), ValidationError);
}

TEST_CASE("deferred reweighting switches on at drw_epoch") {
    const std::vector<std::size_t> counts{100, 10, 1};
    LdamState state(counts, LdamConfig{.drw_epoch = 3});
    const auto w = drw_weights(counts, 0.9999);
    CHECK((w[0] + w[1] + w[2]) / 3.0 == doctest::Approx(1.0));
    CHECK(w[2] > w[1]);
    CHECK(w[1] > w[0]);
    CHECK(state.weight(2, 2) == 1.0);
    CHECK(state.weight(2, 3) == doctest::Approx(w[2]));
}

TEST_CASE("LDAM at unit scale is at least cross-entropy") {
    Rng rng(3);
    const std::vector<std::size_t> counts{50, 5, 2, 1};
    LdamConfig cfg{.scale = 1.0};
    for (int i = 0; i < 200; ++i) {
        const auto z = random_logits(rng, 4);
        const std::size_t c = rng.below(4);
        CHECK(ldam_loss(z, c, counts, cfg, 0).value >= cross_entropy(z, c).value);
    }
}

TEST_CASE("distillation reductions") {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const auto zs = random_logits(rng, 4), zt = random_logits(rng, 4);
        CHECK(std::abs(distill_loss(zs, zt, 1, {1.0}).value - cross_entropy(zs, 1).value) < 1e-9);
        CHECK(distill_loss(zs, zs, 3, {0.0}).value == 0.0);
        const double a = rng.uniform(0.01, 1.0);
        CHECK(distill_loss(zs, zs, 0, {a}).value == doctest::Approx(a * cross_entropy(zs, 0).value).epsilon(1e-14));
    }
    const std::vector<double> zs{1.0, 0.0}, zt{0.0, 0.0};
    CHECK(std::abs(distill_loss(zs, zt, 0, {0.5}).value - 0.6566) < 1e-4);
    CHECK_THROWS_AS(distill_loss(zs, std::vector<double>{0.0}, 0, {0.5}), ValidationError);
    CHECK_THROWS_AS(distill_loss(zs, zt, 0, {1.5}), ValidationError);
}

TEST_CASE("distillation is convex in the student logits") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto a = random_logits(rng, 4), b = random_logits(rng, 4), t = random_logits(rng, 4);
        std::vector<double> mid(4);
        for (int j = 0; j < 4; ++j) mid[j] = 0.5 * (a[j] + b[j]);
        const DistillConfig cfg{rng.uniform()};
        CHECK(distill_loss(mid, t, 2, cfg).value <=
              0.5 * (distill_loss(a, t, 2, cfg).value + distill_loss(b, t, 2, cfg).value) + 1e-12);
    }
}

TEST_CASE("loss kernel gradients agree with central differences") {
    Rng rng(6);
    const std::vector<std::size_t> counts{40, 9, 3, 1};
    const LdamState state(counts, LdamConfig{.drw_epoch = 2});
    for (int i = 0; i < 50; ++i) {
        const auto z = random_logits(rng, 4), t = random_logits(rng, 4);
        const std::size_t c = rng.below(4);
        const std::size_t epoch = rng.below(4);
        const DistillConfig dc{rng.uniform()};
        CHECK(relative_error(cross_entropy(z, c).grad,
                             numeric_gradient(z, [&](const auto& x) { return cross_entropy(x, c).value; })) < 1e-2);
        CHECK(relative_error(ldam_loss(z, c, state, epoch).grad, numeric_gradient(z, [&](const auto& x) {
                                 return ldam_loss(x, c, state, epoch).value;
                             })) < 1e-2);
        CHECK(relative_error(distill_loss(z, t, c, dc).grad,
                             numeric_gradient(z, [&](const auto& x) { return distill_loss(x, t, c, dc).value; })) < 1e-2);
    }
}

TEST_CASE("batched losses average the per-sample kernels") {
    Rng rng(7);
    Tensor z({3, 4});
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = static_cast<float>(rng.normal());
    const std::vector<std::uint32_t> y{0, 3, 1};
    double ref = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> row(z.data() + i * 4, z.data() + i * 4 + 4);
        ref += cross_entropy(row, y[i]).value / 3.0;
    }
    CHECK(cross_entropy(nn::Variable(z), y).value()[0] == doctest::Approx(ref).epsilon(1e-6));
    CHECK_THROWS_AS(cross_entropy(nn::Variable(z), std::vector<std::uint32_t>{0}), ValidationError);
}

TEST_CASE("noise-conditioned loss") {
    nets::LatentClassifier model(tiny_config(), 3);
    Rng data_rng(8);
    const Tensor x = lgap::testing::random_tensor({4, 4, 8, 8}, data_rng);
    const std::vector<std::uint32_t> y{0, 1, 1, 0};

    SUBCASE("zero-noise schedule equals clean cross-entropy") {
        Rng rng(1);
        const double noisy = noise_conditioned_loss(model, x, y, {0.0, 0.0}, rng).value()[0];
        const std::vector<float> zero{0.0f};
        const double clean = cross_entropy(model.forward(nn::Variable(x), zero), y).value()[0];
        CHECK(noisy == clean);
    }
    SUBCASE("reproducible for a fixed seed") {
        Rng a(5), b(5);
        CHECK(noise_conditioned_loss(model, x, y, {}, a).value() == noise_conditioned_loss(model, x, y, {}, b).value());
    }
}

TEST_CASE("gradients of FiLM and head parameters agree with central differences") {
    // 50 random small instances: 2 classes on 8x8 latents, FiLM randomised so
    // the conditioning path carries gradient through both gamma and beta.
    // Odd instances use the cosine head, whose bias is unused.
    for (std::uint64_t inst = 0; inst < 50; ++inst) {
        nets::ClassifierConfig cfg = tiny_config();
        cfg.cosine_scale = inst % 2 == 0 ? 0.0 : 10.0;
        nets::LatentClassifier model(cfg, 100 + inst);
        Rng init(inst);
        for (auto& f : model.films)
            for (std::size_t i = 0; i < f.proj.weight.value.numel(); ++i)
                f.proj.weight.value[i] = static_cast<float>(0.3 * init.normal());
        const Tensor x = lgap::testing::random_tensor({3, 4, 8, 8}, init);
        const std::vector<std::uint32_t> y{static_cast<std::uint32_t>(init.below(2)), 1, 0};
        nn::ParameterRefs params;
        for (auto& f : model.films) params.push_back(&f.proj.weight), params.push_back(&f.proj.bias);
        params.push_back(&model.head.weight);
        if (cfg.cosine_scale == 0.0) params.push_back(&model.head.bias);
        const auto errs = lgap::testing::gradient_errors(params, [&] {
            Rng rng(inst * 7 + 1);  // identical noise draws on every evaluation
            return noise_conditioned_loss(model, x, y, {0.05, 2.0}, rng);
        });
        for (const auto& e : errs) CHECK_MESSAGE(e.relative < 1e-2, e.name << " rel err " << e.relative);
    }
}
