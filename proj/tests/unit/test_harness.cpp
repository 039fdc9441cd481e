#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "doctest.h"
#include "lgap/error.hpp"
#include "lgap/harness.hpp"
#include "lgap/io.hpp"

#ifdef LGAP_HAVE_BOOST_MATH
#include <boost/math/distributions/students_t.hpp>
#endif

using namespace lgap;
using namespace lgap::harness;
namespace fs = std::filesystem;

namespace {

CellResult cell(const std::string& cond, const std::string& space, std::size_t fold, double bacc,
                std::uint64_t fingerprint = 0) {
    CellResult c;
    c.condition = cond;
    c.space = space;
    c.fold = fold;
    c.metrics = {bacc, 0.5 + bacc / 2.0, 2.0 * bacc - 1.0};
    c.split_fingerprint = fingerprint ? fingerprint : 1000 + fold;
    c.seed = 7 + fold;
    return c;
}

GapReport synthetic(const std::vector<double>& ls, const std::vector<double>& rs, const std::string& cond = "plain") {
    GapReport r;
    r.config_hash = "0123456789abcdef";
    r.fold_count = ls.size();
    for (std::size_t f = 0; f < ls.size(); ++f) {
        r.cells.push_back(cell(cond, "latent", f, ls[f]));
        r.cells.push_back(cell(cond, "reconstruction", f, rs[f]));
    }
    return r;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("lgap_h_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

// Tiny but complete experiment: 2 balanced classes, 32x32 images.
ExperimentConfig tiny_experiment() {
    ExperimentConfig c;
    c.corpus.num_classes = 2;
    c.corpus.head_count = 15;
    c.corpus.imbalance_ratio = 1.0;
    c.corpus.image_size = 32;
    c.corpus.texture_frequency_band = {3.0, 6.0};
    c.corpus.texture_amplitude = 0.3;
    c.autoencoder.image_size = 32;
    c.autoencoder.widths = {8, 16};
    c.autoencoder_training = {.epochs = 6, .learning_rate = 3e-3, .batch_size = 8, .seed = 0, .pretrain_images = 40};
    c.classifier.loss = LossKind::cross_entropy;
    c.classifier.epochs = 4;
    c.classifier.patience = 4;
    c.classifier.batch_size = 8;
    c.classifier.learning_rate = 2e-3;
    c.classifier.latent_backbone = {{8, 16}, 1, 1, 3};
    c.classifier.image_backbone = {{8, 16}, 1, 4, 3};
    c.classifier.embedding = {4, 0.02, 2.0, 8};
    c.conditions = {autoenc::ScramblerKind::identity, autoenc::ScramblerKind::orthogonal_channel_mix};
    c.fold_count = 3;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("experiment config JSON round trip and validation") {
    ExperimentConfig c = tiny_experiment();
    const nlohmann::json j = c;
    CHECK(j.get<ExperimentConfig>() == c);
    CHECK(config_hash(c) == config_hash(j.get<ExperimentConfig>()));
    CHECK(config_hash(c).size() == 16);
    ExperimentConfig d = c;
    d.seed = 6;
    CHECK(config_hash(c) != config_hash(d));

    d = c;
    d.fold_count = 2;
    CHECK_THROWS_AS(d.validate(), ValidationError);
    d = c;
    d.conditions.clear();
    CHECK_THROWS_AS(d.validate(), ValidationError);

    const auto dir = scratch("cfg");
    fs::create_directories(dir);
    nlohmann::json partial = {{"seed", 3}, {"classifier", {{"epochs", 2}}}};
    io::write_json(dir / "ok.json", partial);
    const auto loaded = load_config(dir / "ok.json");
    CHECK(loaded.seed == 3);
    CHECK(loaded.classifier.epochs == 2);
    CHECK(loaded.classifier.patience == ClassifierRecipe{}.patience);
    io::write_json(dir / "typo.json", {{"classifier", {{"epoch", 2}}}});
    CHECK_THROWS_AS(load_config(dir / "typo.json"), ValidationError);
    io::write_text(dir / "broken.json", "{\"seed\": ");
    CHECK_THROWS_AS(load_config(dir / "broken.json"), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("DRW epoch scales with the epoch budget") {
    ClassifierRecipe r;
    r.epochs = 60;
    CHECK(r.drw_epoch() == 10);
    r.epochs = 30;
    CHECK(r.drw_epoch() == 5);
}

TEST_CASE("fold splits partition the corpus") {
    std::vector<std::uint32_t> labels;
    for (std::uint32_t c = 0; c < 3; ++c)
        for (int i = 0; i < 10; ++i) labels.push_back(c);
    const auto folds = corpus::assign_folds(labels, 5, 1);
    for (std::size_t k = 0; k < 5; ++k) {
        const auto s = fold_split(folds, k);
        CHECK(s.test == folds.indices_in(k));
        CHECK(s.val == folds.indices_in((k + 1) % 5));
        std::vector<int> seen(labels.size(), 0);
        for (auto i : s.train) ++seen[i];
        for (auto i : s.val) ++seen[i];
        for (auto i : s.test) ++seen[i];
        for (int v : seen) CHECK(v == 1);
        CHECK(s.fingerprint() == fold_split(folds, k).fingerprint());
        if (k > 0) CHECK(s.fingerprint() != fold_split(folds, 0).fingerprint());
    }
}

TEST_CASE("gap of the published LS/RS pair") {
    // Single reported pair: LS .552, RS .755, PSNR 42.3.
    GapReport r = synthetic({0.552, 0.552}, {0.755, 0.755}, "flux2_isic");
    compute_gap(r);
    REQUIRE(r.gaps.size() == 1);
    CHECK(r.gaps[0].gap_rs_ls == doctest::Approx(0.203).epsilon(1e-12));
    autoenc::QualityReport q;
    q.psnr_summary = {42.3, 0.0};
    r.quality.push_back({"flux2_isic", q});
    const auto pts = render_scatter_data(r);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].psnr == doctest::Approx(42.3));
    CHECK(pts[0].gap_bacc_pp == doctest::Approx(20.3));
    CHECK(scatter_csv(r) == "condition,psnr,gap_bacc_pp\nflux2_isic,42.3,20.3\n");
}

TEST_CASE("identical LS and RS give a zero, non-significant gap") {
    GapReport r = synthetic({0.6, 0.7, 0.65}, {0.6, 0.7, 0.65});
    compute_gap(r);
    CHECK(r.gaps[0].gap_rs_ls == 0.0);
    REQUIRE(r.gaps[0].t_rs_ls);
    CHECK(r.gaps[0].t_rs_ls->degenerate);
    CHECK(r.gaps[0].t_rs_ls->p_value == 1.0);
    CHECK_FALSE(r.overall_wilcoxon);
}

TEST_CASE("gap significance reproduces a hand-computed t-test") {
    const std::vector<double> rs{0.80, 0.78, 0.83, 0.79, 0.81};
    const std::vector<double> jitter{0.01, -0.01, 0.005, 0.0, -0.005};
    std::vector<double> ls(5);
    for (int i = 0; i < 5; ++i) ls[i] = rs[i] - 0.1 + jitter[i];
    GapReport r = synthetic(ls, rs);
    compute_gap(r);
    const auto& t = *r.gaps[0].t_rs_ls;
    // d = ls - rs
    double mean = 0.0, ss = 0.0;
    for (int i = 0; i < 5; ++i) mean += (ls[i] - rs[i]) / 5.0;
    for (int i = 0; i < 5; ++i) ss += std::pow(ls[i] - rs[i] - mean, 2);
    const double t_ref = mean / (std::sqrt(ss / 4.0) / std::sqrt(5.0));
    CHECK(std::abs(t.statistic - t_ref) < 1e-9);
    CHECK(t.p_value < 0.05);
#ifdef LGAP_HAVE_BOOST_MATH
    boost::math::students_t dist(4.0);
    CHECK(std::abs(t.p_value - 2.0 * boost::math::cdf(dist, -std::abs(t_ref))) < 1e-9);
#endif
    CHECK(r.gaps[0].gap_rs_ls == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(*r.gaps[0].holm_p_rs_ls == t.p_value);  // one condition: Holm is the identity
}

TEST_CASE("overall Wilcoxon and Holm across conditions") {
    GapReport r;
    const std::vector<std::string> conds{"a", "b", "c"};
    const std::vector<double> gaps{0.05, 0.10, 0.20};
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t f = 0; f < 3; ++f) {
            r.cells.push_back(cell(conds[k], "latent", f, 0.5 + 0.01 * static_cast<double>(f)));
            r.cells.push_back(
                cell(conds[k], "reconstruction", f, 0.5 + gaps[k] + 0.013 * static_cast<double>(f * f)));
        }
    compute_gap(r);
    REQUIRE(r.gaps.size() == 3);
    REQUIRE(r.overall_wilcoxon);
    // All three LS means are below RS: W+ = 0, exact lower tail 1/8.
    CHECK(r.overall_wilcoxon->statistic == 0.0);
    CHECK(std::abs(r.overall_wilcoxon->p_value - 0.125) < 1e-12);
    std::vector<double> raw;
    for (const auto& g : r.gaps) raw.push_back(g.t_rs_ls->p_value);
    const auto adj = stats::holm_adjust(raw);
    for (std::size_t i = 0; i < 3; ++i) CHECK(*r.gaps[i].holm_p_rs_ls == adj[i]);
}

TEST_CASE("failed folds are excluded and mismatched splits rejected") {
    GapReport r = synthetic({0.5, 0.6, 0.55}, {0.7, 0.75, 0.72});
    r.cells[2].failed = true;  // LS fold 1
    compute_gap(r);
    CHECK(r.gaps[0].folds == std::vector<std::size_t>{0, 2});

    GapReport lone = synthetic({0.5, 0.6}, {0.7, 0.75});
    lone.cells[0].failed = true;
    compute_gap(lone);
    CHECK(lone.gaps[0].folds.size() == 1);
    CHECK_FALSE(lone.gaps[0].t_rs_ls);  // < 2 surviving folds: no significance

    GapReport bad = synthetic({0.5, 0.6}, {0.7, 0.75});
    bad.cells[1].split_fingerprint = 99;
    CHECK_THROWS_AS(compute_gap(bad), ValidationError);
}

TEST_CASE("report emission") {
    GapReport empty;
    const auto dir = scratch("emit");
    CHECK_THROWS_AS(emit_report(empty, dir), ValidationError);

    GapReport r = synthetic({0.5, 0.6, 0.55}, {0.7, 0.75, 0.72});
    r.cells[0].failed = true;
    r.cells[0].failure = "non-finite loss";
    r.incomplete = true;
    compute_gap(r);
    emit_report(r, dir);
    const std::string json1 = io::read_text(dir / "report.json"), csv1 = io::read_text(dir / "report.csv");
    emit_report(r, dir);
    CHECK(io::read_text(dir / "report.json") == json1);
    CHECK(io::read_text(dir / "report.csv") == csv1);
    const auto j = nlohmann::json::parse(json1);
    CHECK(j["incomplete"] == true);
    CHECK(j["config_hash"] == "0123456789abcdef");
    CHECK(j["cells"][0]["failure"] == "non-finite loss");
    CHECK(csv1.rfind("condition,space,fold,metric,value,status,seed,split_fingerprint,config_hash\n", 0) == 0);
    CHECK(csv1.find(",failed,") != std::string::npos);
    CHECK(io::read_text(dir / "scatter.csv").rfind("condition,psnr,gap_bacc_pp\n", 0) == 0);
    CHECK(io::read_text(dir / "report.md").find("INCOMPLETE") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("throughput tables") {
    const std::vector<ThroughputRow> rows{{"latent", 1, 100.0, 2.0, 5}, {"reconstruction", 1, 10.0, 20.0, 5},
                                          {"latent", 4, 300.0, 3.0, 5}, {"reconstruction", 4, 30.0, 40.0, 5}};
    const auto table = throughput_table(rows);
    CHECK(table.find("S/s, MB") != std::string::npos);
    CHECK(table.find("| latent | 100.0, 2.0 | 300.0, 3.0 |") != std::string::npos);
    CHECK(throughput_csv(rows).rfind("path,batch_size,samples_per_sec,peak_mb,iterations\n", 0) == 0);
}

TEST_CASE("tiny end-to-end experiment") {
    const ExperimentConfig config = tiny_experiment();
    const PreparedData data = prepare(config);
    CHECK(data.latents.shape() == Shape{data.corpus.size(), 4, 8, 8});

    // Reconstruction inputs carry identical information under every condition.
    const auto plain = prepare_condition_fold(data, config, autoenc::ScramblerKind::identity, 1);
    for (auto kind : {autoenc::ScramblerKind::orthogonal_channel_mix, autoenc::ScramblerKind::frequency_permutation}) {
        const auto other = prepare_condition_fold(data, config, kind, 1);
        CHECK(other.reconstruction_inputs.max_abs_diff(plain.reconstruction_inputs) < 1e-5f);
        CHECK(other.split.fingerprint() == plain.split.fingerprint());
        CHECK(other.latent_inputs.max_abs_diff(plain.latent_inputs) > 0.01f);
    }

    const GapReport a = run_three_space(data, config);
    for (const auto& cond : {"plain", "orthogonal_channel_mix"})
        for (const auto& space : {"image", "latent", "reconstruction"})
            CHECK(a.cells_of(cond, space).size() == config.fold_count);
    // Every space of one fold trains on the same split.
    for (const auto& c : a.cells) CHECK(c.split_fingerprint == a.split_fingerprints[c.fold]);
    CHECK(a.gaps.size() == 2);
    CHECK(a.quality.size() == 2);

    const GapReport b = run_three_space(data, config);
    CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
}

TEST_CASE("ablation ladder bookkeeping") {
    ExperimentConfig config = tiny_experiment();
    config.classifier.epochs = 2;
    config.hp_grid = {{1e-3, 2e-3}, {0.01}};
    const GapReport r = run_ablation_ladder(config, autoenc::ScramblerKind::identity);
    REQUIRE(r.ladder.size() == kLadderRungs.size());
    for (std::size_t i = 0; i < r.ladder.size(); ++i) {
        CHECK(r.ladder[i].name == kLadderRungs[i]);
        CHECK(r.ladder[i].folds.size() == config.fold_count);
    }
    // The naive rung is the three-space LS path with the same seeds.
    ExperimentConfig ls_only = config;
    ls_only.conditions = {autoenc::ScramblerKind::identity};
    ls_only.spaces = {Space::latent};
    const GapReport three = run_three_space(ls_only);
    for (std::size_t f = 0; f < config.fold_count; ++f)
        CHECK(r.ladder[0].folds[f].metrics.bacc == three.cells_of("plain", "latent")[f]->metrics.bacc);
}

TEST_CASE("distillation with alpha = 1 reproduces plain training") {
    ExperimentConfig config = tiny_experiment();
    config.classifier.epochs = 2;
    const PreparedData data = prepare(config);
    const auto cf = prepare_condition_fold(data, config, autoenc::ScramblerKind::identity, 0);
    const auto labels = data.corpus.labels();
    Dataset train{cf.latent_inputs.gather_rows(cf.split.train), {}}, val{cf.latent_inputs.gather_rows(cf.split.val), {}};
    for (auto i : cf.split.train) train.y.push_back(labels[i]);
    for (auto i : cf.split.val) val.y.push_back(labels[i]);
    const nets::ClassifierConfig mc{data.autoencoder.config.latent_shape(), 2, config.classifier.latent_backbone,
                                    config.classifier.embedding};
    Tensor teacher({train.y.size(), 2}, 3.0f);

    nets::LatentClassifier plain_model(mc, 1), distilled(mc, 1);
    auto h1 = handle(plain_model), h2 = handle(distilled);
    ClassifierRecipe ce = config.classifier, kd = config.classifier;
    kd.distill = true;
    kd.distill_config.alpha = 1.0;
    train_classifier(h1, train, val, ce, 2, 9);
    train_classifier(h2, train, val, kd, 2, 9, &teacher);
    CHECK(nn::same_parameters(plain_model, distilled));
    CHECK_THROWS_AS(train_classifier(h2, train, val, kd, 2, 9, nullptr), ValidationError);
}

TEST_CASE("LDAM recipes train a cosine-head classifier") {
    ClassifierRecipe recipe;
    CHECK(recipe.loss == LossKind::ldam);
    CHECK(recipe.head_scale() == recipe.ldam.scale);
    ClassifierRecipe ce = recipe;
    ce.loss = LossKind::cross_entropy;
    CHECK(ce.head_scale() == 0.0);

    // Two long-tailed classes separated by the sign of channel 0's mean.
    Rng rng(31);
    auto make = [&](std::size_t n) {
        Dataset d{Tensor({n, 4, 8, 8}), {}};
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t y = i % 5 == 0 ? 1 : 0;
            d.y.push_back(y);
            for (std::size_t j = 0; j < 256; ++j)
                d.x[i * 256 + j] = static_cast<float>(0.5 * rng.normal() + (j < 64 ? (y ? 1.0 : -1.0) : 0.0));
        }
        return d;
    };
    const Dataset train = make(60), val = make(30);
    recipe.epochs = 6;
    recipe.latent_backbone = {{8, 16}, 1, 1, 3};
    recipe.embedding = {4, 0.02, 2.0, 8};
    nets::LatentClassifier model({{4, 8, 8}, 2, recipe.latent_backbone, recipe.embedding, recipe.head_scale()}, 3);
    auto h = handle(model);
    CHECK(h.cosine_scale == recipe.ldam.scale);
    const TrainOutcome o = train_classifier(h, train, val, recipe, 2, 4);
    CHECK(o.best_val_bacc > 0.9);
    const Tensor logits = predict_logits(h, val.x, 0.0f, 2);
    for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(std::abs(logits[i]) <= recipe.ldam.scale + 1e-3);
}
