// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   lgap_acceptance [--only 1,2,...] [--out DIR] [--config FILE]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gradcheck.hpp"
#include "lgap/autoenc.hpp"
#include "lgap/harness.hpp"
#include "lgap/losses.hpp"
#include "lgap/metrics.hpp"
#include "lgap/nets.hpp"
#include "lgap/stats.hpp"
#include "oracles.hpp"

using namespace lgap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::vector<double> random_logits(Rng& rng, std::size_t k) {
    std::vector<double> z(k);
    for (auto& v : z) v = 2.0 * rng.normal();
    return z;
}

// ---------------------------------------------------------------------------

Outcome exact_wilcoxon() {
    // LS below RS on every one of 20 paired observations, with distinct gaps.
    std::vector<double> ls, rs;
    for (int i = 0; i < 20; ++i) {
        ls.push_back(0.50 + 0.001 * i);
        rs.push_back(0.60 + 0.003 * i);
    }
    const auto r = stats::wilcoxon_signed_rank({ls, rs}, stats::Sidedness::less);
    const double expected = std::ldexp(1.0, -20);
    const double err = std::abs(r.p_value - expected);
    const bool method_exact = r.method == stats::Method::exact;
    return {err < 1e-9 && method_exact && fmt::format("{:.1e}", r.p_value) == "9.5e-07",
            fmt::format("p = {:.5e} (|p - 2^-20| = {:.1e}, {})", r.p_value, err, stats::to_string(r.method))};
}

Outcome wilcoxon_oracle() {
    Rng rng(2020);
    double worst = 0.0;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = 1 + rng.below(12);
        std::vector<double> a(n), b(n);
        bool nonzero = false;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = std::round(rng.normal() * 4.0) / 4.0;  // coarse grid: ties and zeros occur
            b[i] = std::round(rng.normal() * 4.0) / 4.0;
            nonzero |= a[i] != b[i];
        }
        if (!nonzero) b[0] = a[0] + 0.25;
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
        const auto [lower, upper] = testing::brute_force_tails(d);
        const double two = std::min(1.0, 2.0 * std::min(lower, upper));
        const stats::PairedSample ps{a, b};
        worst = std::max({worst, std::abs(stats::wilcoxon_signed_rank(ps, stats::Sidedness::less).p_value - lower),
                          std::abs(stats::wilcoxon_signed_rank(ps, stats::Sidedness::greater).p_value - upper),
                          std::abs(stats::wilcoxon_signed_rank(ps, stats::Sidedness::two_sided).p_value - two)});
    }
    return {worst <= 1e-12, fmt::format("200 instances, worst |p - brute force| = {:.2e}", worst)};
}

Outcome gap_phenomenon(const harness::ExperimentConfig& config, const fs::path& out) {
    const auto report = harness::run_three_space(config, [](const std::string& msg) {
        std::fprintf(stderr, "  [criterion 3] %s\n", msg.c_str());
    });
    harness::emit_report(report, out);
    const auto plain = harness::condition_name(autoenc::ScramblerKind::identity);
    const auto freq = harness::condition_name(autoenc::ScramblerKind::frequency_permutation);
    const harness::GapRow* row = nullptr;
    for (const auto& g : report.gaps)
        if (g.condition == freq) row = &g;
    if (row == nullptr || report.incomplete) return {false, "experiment incomplete; see " + out.string()};
    const double rs_plain = report.metric_report(plain, "reconstruction").bacc().mean;
    const double rs_freq = report.metric_report(freq, "reconstruction").bacc().mean;
    const double ls_freq = report.metric_report(freq, "latent").bacc().mean;
    const double p = row->t_rs_ls ? row->t_rs_ls->p_value : 1.0;
    const double drift = std::abs(rs_freq - rs_plain);
    const bool pass = row->gap_rs_ls >= 0.05 && p < 0.05 && drift < 0.02;
    return {pass, fmt::format("RS {:.3f} vs LS {:.3f}: gap {:+.1f} pp (need >= 5), t-test p = {:.3g} (need < 0.05); "
                              "|RS freq - RS plain| = {:.1f} pp (need < 2)",
                              rs_freq, ls_freq, 100.0 * row->gap_rs_ls, p, 100.0 * drift)};
}

Outcome film_identity(const harness::ExperimentConfig& config) {
    const autoenc::Autoencoder ae(config.autoencoder, 1);
    const nets::LatentClassifier model({ae.config.latent_shape(), config.corpus.num_classes,
                                        config.classifier.latent_backbone, config.classifier.embedding,
                                        config.classifier.head_scale()},
                                       17);
    Rng rng(44);
    const Shape shape = ae.config.latent_shape();
    std::size_t mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        Tensor x({1, shape[0], shape[1], shape[2]});
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
        const float s1 = static_cast<float>(rng.uniform(0.0, 5.0)), s2 = static_cast<float>(rng.uniform(0.0, 5.0));
        const Tensor a = nets::predict(model, x, s1), b = nets::predict(model, x, s2);
        if (std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) != 0) ++mismatches;
    }
    return {mismatches == 0, fmt::format("{} of 100 (latent, sigma1, sigma2) triples differ bitwise", mismatches)};
}

Outcome distill_reductions() {
    Rng rng(5);
    double worst_ce = 0.0, worst_zero = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto zs = random_logits(rng, 5), zt = random_logits(rng, 5);
        const std::size_t y = rng.below(5);
        worst_ce = std::max(worst_ce, std::abs(losses::distill_loss(zs, zt, y, {1.0}).value -
                                               losses::cross_entropy(zs, y).value));
        worst_zero = std::max(worst_zero, std::abs(losses::distill_loss(zs, zs, y, {0.0}).value));
    }
    const double example = losses::distill_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0}, 0,
                                                {0.5})
                               .value;
    const bool pass = worst_ce <= 1e-9 && worst_zero == 0.0 && std::abs(example - 0.6566) <= 1e-4;
    return {pass, fmt::format("alpha=1 vs CE {:.1e}; alpha=0 self {:.1e}; worked example {:.5f}", worst_ce, worst_zero,
                              example)};
}

Outcome gradient_suite() {
    constexpr double kStep = 1e-3, kTol = 1e-2;
    Rng rng(6);
    const std::vector<std::size_t> counts{64, 23, 8, 3, 1};
    const losses::LdamState ldam(counts, losses::LdamConfig{.drw_epoch = 2});
    double worst_kernel = 0.0;
    for (int i = 0; i < 50; ++i) {
        const auto z = random_logits(rng, 5), t = random_logits(rng, 5);
        const std::size_t c = rng.below(5), epoch = rng.below(4);
        const losses::DistillConfig dc{rng.uniform()};
        using testing::numeric_gradient, testing::relative_error;
        worst_kernel = std::max(
            {worst_kernel,
             relative_error(losses::cross_entropy(z, c).grad,
                            numeric_gradient(z, [&](const auto& x) { return losses::cross_entropy(x, c).value; }, kStep)),
             relative_error(losses::ldam_loss(z, c, ldam, epoch).grad,
                            numeric_gradient(z, [&](const auto& x) { return losses::ldam_loss(x, c, ldam, epoch).value; },
                                             kStep)),
             relative_error(losses::distill_loss(z, t, c, dc).grad,
                            numeric_gradient(z, [&](const auto& x) { return losses::distill_loss(x, t, c, dc).value; },
                                             kStep))});
    }

    // Noise-conditioned loss through FiLM and head parameters, on small random
    // classifiers (plain and cosine heads) with randomised FiLM projections.
    double worst_model = 0.0;
    std::string worst_name;
    for (std::uint64_t inst = 0; inst < 50; ++inst) {
        nets::ClassifierConfig cfg;
        cfg.input_shape = {4, 8, 8};
        cfg.num_classes = 3;
        cfg.backbone = {{8, 16}, 1, 1, 3};
        cfg.embedding = {4, 0.02, 2.0, 8};
        cfg.cosine_scale = inst % 2 == 0 ? 0.0 : 10.0;
        nets::LatentClassifier model(cfg, 100 + inst);
        Rng init(inst);
        for (auto& f : model.films)
            for (std::size_t i = 0; i < f.proj.weight.value.numel(); ++i)
                f.proj.weight.value[i] = static_cast<float>(0.3 * init.normal());
        const Tensor x = testing::random_tensor({3, 4, 8, 8}, init);
        const std::vector<std::uint32_t> y{static_cast<std::uint32_t>(init.below(3)), 1, 2};
        nn::ParameterRefs params;
        for (auto& f : model.films) params.push_back(&f.proj.weight), params.push_back(&f.proj.bias);
        params.push_back(&model.head.weight);
        if (cfg.cosine_scale == 0.0) params.push_back(&model.head.bias);
        const auto errs = testing::gradient_errors(
            params,
            [&] {
                Rng noise(inst * 7 + 1);
                return losses::noise_conditioned_loss(model, x, y, {0.05, 2.0}, noise);
            },
            kStep);
        for (const auto& e : errs)
            if (e.relative > worst_model) worst_model = e.relative, worst_name = e.name;
    }
    return {worst_kernel < kTol && worst_model < kTol,
            fmt::format("50 instances: worst kernel rel err {:.1e} (CE/LDAM/distill); worst parameter rel err {:.1e} "
                        "({})",
                        worst_kernel, worst_model, worst_name)};
}

Outcome metric_oracles() {
    Rng rng(123);
    double worst = 0.0;
    std::size_t largest = 0;
    for (int t = 0; t < 500; ++t) {
        const auto in = testing::random_instance(rng, 200 - 8);
        largest = std::max(largest, in.labels.size());
        worst = std::max({worst, std::abs(metrics::balanced_accuracy(in.labels, in.predicted, in.k) - testing::bacc_oracle(in)),
                          std::abs(metrics::auc_macro_ovr(in.labels, in.scores, in.k).value - testing::auc_oracle(in)),
                          std::abs(metrics::mcc_multiclass(in.labels, in.predicted, in.k) - testing::mcc_oracle(in))});
    }
    Tensor zero({1, 16, 16}), off10({1, 16, 16}), off01({1, 16, 16});
    off10.fill(0.1f);
    off01.fill(0.01f);
    const double e20 = std::abs(metrics::psnr(zero, off10) - 20.0), e40 = std::abs(metrics::psnr(zero, off01) - 40.0);
    Rng img(9);
    const Tensor a = testing::random_tensor({3, 32, 32}, img, 0.3);
    const double essim = std::abs(metrics::ssim(a, a) - 1.0);
    return {worst <= 1e-9 && e20 <= 1e-6 && e40 <= 1e-6 && essim <= 1e-9,
            fmt::format("500 instances (<= {} samples): worst {:.1e}; PSNR errors {:.1e}/{:.1e} dB; |SSIM(a,a)-1| = "
                        "{:.1e}",
                        largest, worst, e20, e40, essim)};
}

Outcome scrambler_invertibility(const harness::ExperimentConfig& config) {
    const Shape shape = config.autoencoder.latent_shape();
    Rng rng(21);
    float worst = 0.0f;
    double worst_norm = 0.0;
    for (auto kind : {autoenc::ScramblerKind::identity, autoenc::ScramblerKind::orthogonal_channel_mix,
                      autoenc::ScramblerKind::frequency_permutation}) {
        const autoenc::Scrambler s(kind, config.scrambler_seed, shape);
        for (int i = 0; i < 1000; ++i) {
            const Tensor z = testing::random_tensor(shape, rng);
            const Tensor y = s.scramble(z);
            worst = std::max(worst, s.descramble(y).max_abs_diff(z));
            if (kind != autoenc::ScramblerKind::orthogonal_channel_mix) continue;
            const std::size_t hw = shape[1] * shape[2];
            for (std::size_t p = 0; p < hw; ++p) {
                double nz = 0.0, ny = 0.0;
                for (std::size_t c = 0; c < shape[0]; ++c) {
                    nz += static_cast<double>(z[c * hw + p]) * z[c * hw + p];
                    ny += static_cast<double>(y[c * hw + p]) * y[c * hw + p];
                }
                worst_norm = std::max(worst_norm, std::abs(std::sqrt(nz) - std::sqrt(ny)));
            }
        }
    }
    return {worst < 1e-5f && worst_norm < 1e-5,
            fmt::format("3 kinds x 1000 latents: worst round trip {:.1e}; worst norm change {:.1e}", worst, worst_norm)};
}

Outcome throughput_direction(const harness::ExperimentConfig& config) {
    const autoenc::Autoencoder ae(config.autoencoder, 1);
    const nets::LatentClassifier latent({ae.config.latent_shape(), config.corpus.num_classes,
                                         config.classifier.latent_backbone, config.classifier.embedding,
                                         config.classifier.head_scale()},
                                        2);
    const nets::ImageClassifier image({ae.config.image_shape(), config.corpus.num_classes,
                                       config.classifier.image_backbone, config.classifier.embedding,
                                       config.classifier.head_scale()},
                                      3);
    const auto rows = harness::benchmark_throughput(latent, ae, image, {}, 4);
    bool pass = true;
    std::string detail;
    for (const std::size_t b : {1, 4, 16}) {
        const harness::ThroughputRow *l = nullptr, *r = nullptr;
        for (const auto& row : rows)
            if (row.batch_size == b) (row.path == "latent" ? l : r) = &row;
        if (l == nullptr || r == nullptr) return {false, fmt::format("missing rows for batch size {}", b)};
        pass &= l->samples_per_sec > r->samples_per_sec && l->peak_mb < r->peak_mb;
        detail += fmt::format("{}B={}: {:.0f} vs {:.0f} S/s, {:.2f} vs {:.2f} MB", detail.empty() ? "" : "; ", b,
                              l->samples_per_sec, r->samples_per_sec, l->peak_mb, r->peak_mb);
    }
    return {pass, "latent vs decode-then-classify " + detail};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism(const harness::ExperimentConfig& base, const fs::path& out) {
    // A reduced experiment exercising every stage: corpus, AE pretraining,
    // normalisation, both scramblers, all three spaces, statistics.
    harness::ExperimentConfig c = base;
    c.corpus.head_count = 48;
    c.autoencoder_training.epochs = 2;
    c.autoencoder_training.pretrain_images = 96;
    c.classifier.epochs = 3;
    c.classifier.patience = 3;
    c.fold_count = 3;
    std::vector<std::string> dumps;
    for (int rep = 0; rep < 2; ++rep) {
        const fs::path dir = out / ("run" + std::to_string(rep));
        harness::emit_report(harness::run_three_space(c), dir);
        std::string all;
        for (const char* f : {"report.json", "report.csv", "scatter.csv", "report.md"}) all += slurp(dir / f) + '\x1e';
        dumps.push_back(std::move(all));
    }
    return {dumps[0] == dumps[1] && dumps[0].size() > 100,
            fmt::format("two runs of a {}-fold experiment: outputs {} ({} bytes)", c.fold_count,
                        dumps[0] == dumps[1] ? "byte-identical" : "DIFFER", dumps[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::vector<int> only;
    std::string out = "acceptance_out";
    std::string config_path;
    app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
    app.add_option("--out", out, "Directory for experiment outputs");
    app.add_option("--config", config_path, "Experiment config (default: built-in defaults)")->check(CLI::ExistingFile);
    CLI11_PARSE(app, argc, argv);
    memory::keep_freed_pages();

    const harness::ExperimentConfig config =
        config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(config_path);
    const fs::path out_dir(out);

    const std::vector<Criterion> criteria{
        {1, "exact Wilcoxon reproduction", 1.0, exact_wilcoxon},
        {2, "Wilcoxon oracle equivalence", 30.0, wilcoxon_oracle},
        {3, "gap phenomenon at desk scale", 6 * 3600.0, [&] { return gap_phenomenon(config, out_dir / "gap"); }},
        {4, "FiLM zero-init identity", 10.0, [&] { return film_identity(config); }},
        {5, "distillation reductions", 1.0, distill_reductions},
        {6, "gradient suite", 300.0, gradient_suite},
        {7, "metric oracles", 120.0, metric_oracles},
        {8, "scrambler invertibility", 30.0, [&] { return scrambler_invertibility(config); }},
        {9, "throughput direction", 600.0, [&] { return throughput_direction(config); }},
        {10, "determinism", 6 * 3600.0, [&] { return determinism(config, out_dir / "determinism"); }},
    };

    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.contains(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_budget = secs < c.budget_seconds;
        const bool pass = o.pass && in_budget;
        failures += pass ? 0 : 1;
        std::printf("criterion %d: %s - %s: %s [%.1f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.name.c_str(),
                    o.detail.c_str(), secs, in_budget ? "" : ", over budget");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
