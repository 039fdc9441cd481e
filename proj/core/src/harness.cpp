#include "lgap/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <type_traits>

#include <spdlog/spdlog.h>

#include "lgap/error.hpp"
#include "lgap/io.hpp"
#include "lgap/optim.hpp"

namespace lgap::harness {

using autoenc::ScramblerKind;
using nn::Variable;

std::string to_string(Space s) {
    switch (s) {
        case Space::image: return "image";
        case Space::latent: return "latent";
        case Space::reconstruction: return "reconstruction";
    }
    return "unknown";
}

Space parse_space(const std::string& text) {
    if (text == "image") return Space::image;
    if (text == "latent") return Space::latent;
    if (text == "reconstruction" || text == "recon") return Space::reconstruction;
    throw ValidationError("unknown space: " + text);
}

std::string condition_name(ScramblerKind kind) {
    return kind == ScramblerKind::identity ? "plain" : autoenc::to_string(kind);
}

std::string to_string(LossKind k) { return k == LossKind::ldam ? "ldam" : "cross_entropy"; }

LossKind parse_loss_kind(const std::string& text) {
    if (text == "ldam") return LossKind::ldam;
    if (text == "cross_entropy" || text == "ce") return LossKind::cross_entropy;
    throw ValidationError("unknown loss: " + text);
}

// ---------------------------------------------------------------------------
// Configuration

void ClassifierRecipe::validate() const {
    ldam.validate();
    distill_config.validate();
    schedule.validate();
    latent_backbone.validate();
    image_backbone.validate();
    require(batch_size >= 1, "classifier batch size must be positive");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "classifier learning rate must be positive");
    require(weight_decay >= 0.0, "weight decay must be >= 0");
    require(sigma_eval >= 0.0 && std::isfinite(sigma_eval), "sigma_eval must be >= 0");
    require(drw_reference_budget >= 1, "drw_reference_budget must be positive");
}

std::size_t ClassifierRecipe::drw_epoch() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(ldam.drw_epoch) *
                                                 static_cast<double>(epochs) /
                                                 static_cast<double>(drw_reference_budget)));
}

void to_json(nlohmann::json& j, const ClassifierRecipe& r) {
    j = {{"loss", to_string(r.loss)},
         {"ldam", r.ldam},
         {"drw_reference_budget", r.drw_reference_budget},
         {"epochs", r.epochs},
         {"patience", r.patience},
         {"batch_size", r.batch_size},
         {"learning_rate", r.learning_rate},
         {"weight_decay", r.weight_decay},
         {"distill", r.distill},
         {"distill_config", r.distill_config},
         {"noise_cond", r.noise_cond},
         {"schedule", r.schedule},
         {"sigma_eval", r.sigma_eval},
         {"latent_backbone", r.latent_backbone},
         {"image_backbone", r.image_backbone},
         {"embedding", r.embedding}};
}

void from_json(const nlohmann::json& j, ClassifierRecipe& r) {
    ClassifierRecipe d;
    r.loss = parse_loss_kind(j.value("loss", to_string(d.loss)));
    r.ldam = j.value("ldam", d.ldam);
    r.drw_reference_budget = j.value("drw_reference_budget", d.drw_reference_budget);
    r.epochs = j.value("epochs", d.epochs);
    r.patience = j.value("patience", d.patience);
    r.batch_size = j.value("batch_size", d.batch_size);
    r.learning_rate = j.value("learning_rate", d.learning_rate);
    r.weight_decay = j.value("weight_decay", d.weight_decay);
    r.distill = j.value("distill", d.distill);
    r.distill_config = j.value("distill_config", d.distill_config);
    r.noise_cond = j.value("noise_cond", d.noise_cond);
    r.schedule = j.value("schedule", d.schedule);
    r.sigma_eval = j.value("sigma_eval", d.sigma_eval);
    r.latent_backbone = j.value("latent_backbone", d.latent_backbone);
    r.image_backbone = j.value("image_backbone", d.image_backbone);
    r.embedding = j.value("embedding", d.embedding);
}

void to_json(nlohmann::json& j, const HpGrid& g) {
    j = {{"learning_rates", g.learning_rates}, {"weight_decays", g.weight_decays}};
}

void from_json(const nlohmann::json& j, HpGrid& g) {
    HpGrid d;
    g.learning_rates = j.value("learning_rates", d.learning_rates);
    g.weight_decays = j.value("weight_decays", d.weight_decays);
}

void ExperimentConfig::validate() const {
    corpus.validate();
    autoencoder.validate();
    require(autoencoder.image_size == corpus.image_size && autoencoder.image_channels == corpus.channels,
            "autoencoder image shape does not match the corpus");
    require(autoencoder_training.batch_size >= 1, "autoencoder batch size must be positive");
    require(autoencoder_training.pretrain_images >= 2 * corpus.num_classes,
            "autoencoder pretraining needs at least 2 images per class");
    require(!conditions.empty(), "at least one latent condition is required");
    require(!spaces.empty(), "at least one space is required");
    require(fold_count >= 3, "fold_count must be >= 3 (test, validation and training folds)");
    classifier.validate();
    require(!hp_grid.learning_rates.empty() && !hp_grid.weight_decays.empty(), "HP grid must not be empty");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    std::vector<std::string> conds, spaces;
    for (auto k : c.conditions) conds.push_back(condition_name(k));
    for (auto s : c.spaces) spaces.push_back(to_string(s));
    j = {{"corpus", c.corpus},
         {"autoencoder", c.autoencoder},
         {"autoencoder_training", c.autoencoder_training},
         {"autoencoder_checkpoint", c.autoencoder_checkpoint},
         {"conditions", conds},
         {"spaces", spaces},
         {"classifier", c.classifier},
         {"hp_grid", c.hp_grid},
         {"fold_count", c.fold_count},
         {"seed", c.seed},
         {"scrambler_seed", c.scrambler_seed}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    ExperimentConfig d;
    c.corpus = j.value("corpus", d.corpus);
    c.autoencoder = j.value("autoencoder", d.autoencoder);
    c.autoencoder_training = j.value("autoencoder_training", d.autoencoder_training);
    c.autoencoder_checkpoint = j.value("autoencoder_checkpoint", d.autoencoder_checkpoint);
    if (j.contains("conditions")) {
        c.conditions.clear();
        for (const auto& s : j.at("conditions")) c.conditions.push_back(autoenc::parse_scrambler_kind(s.get<std::string>()));
    } else {
        c.conditions = d.conditions;
    }
    if (j.contains("spaces")) {
        c.spaces.clear();
        for (const auto& s : j.at("spaces")) c.spaces.push_back(parse_space(s.get<std::string>()));
    } else {
        c.spaces = d.spaces;
    }
    c.classifier = j.value("classifier", d.classifier);
    c.hp_grid = j.value("hp_grid", d.hp_grid);
    c.fold_count = j.value("fold_count", d.fold_count);
    c.seed = j.value("seed", d.seed);
    c.scrambler_seed = j.value("scrambler_seed", d.scrambler_seed);
}

namespace {

// Rejects keys that the default configuration does not have, recursively.
void check_known_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where) {
    if (!given.is_object() || !reference.is_object()) return;
    for (auto it = given.begin(); it != given.end(); ++it) {
        if (!reference.contains(it.key())) throw ValidationError("unknown config key: " + where + it.key());
        check_known_keys(it.value(), reference.at(it.key()), where + it.key() + ".");
    }
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    require(j.is_object(), "config must be a JSON object");
    check_known_keys(j, nlohmann::json(ExperimentConfig{}), "");
    ExperimentConfig c;
    try {
        c = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    c.validate();
    return c;
}

std::string config_hash(const ExperimentConfig& config) {
    return io::hex64(io::fnv1a64(nlohmann::json(config).dump()));
}

// ---------------------------------------------------------------------------

std::uint64_t FoldSplit::fingerprint() const {
    std::uint64_t h = io::fnv1a64(std::as_bytes(std::span<const std::size_t>(train)));
    h = io::fnv1a64(std::as_bytes(std::span<const std::size_t>(val)), h);
    return io::fnv1a64(std::as_bytes(std::span<const std::size_t>(test)), h);
}

FoldSplit fold_split(const corpus::FoldAssignment& folds, std::size_t fold) {
    require(fold < folds.fold_count, "fold index out of range");
    require(folds.fold_count >= 3, "fold splitting needs at least 3 folds");
    FoldSplit s;
    s.fold = fold;
    const std::size_t val_fold = (fold + 1) % folds.fold_count;
    s.test = folds.indices_in(fold);
    s.val = folds.indices_in(val_fold);
    const std::size_t held[2] = {fold, val_fold};
    s.train = folds.indices_not_in(held);
    return s;
}

// ---------------------------------------------------------------------------

ModelHandle handle(nets::LatentClassifier& model) {
    return {[&model](const Variable& x, std::span<const float> s) { return model.forward(x, s); },
            nn::parameters_of(model), true, model.config.cosine_scale};
}

ModelHandle handle(nets::ImageClassifier& model) {
    return {[&model](const Variable& x, std::span<const float>) { return model.forward(x); },
            nn::parameters_of(model), false, model.config.cosine_scale};
}

Tensor predict_logits(const ModelHandle& model, const Tensor& x, float sigma, std::size_t k) {
    constexpr std::size_t kChunk = 64;
    require_shape(x.rank() == 4, "predict expects [N,C,H,W]");
    const std::size_t n = x.dim(0);
    Tensor out({n, k});
    nn::NoGradGuard guard;
    const float s[1] = {sigma};
    for (std::size_t b = 0; b < n; b += kChunk) {
        const std::size_t e = std::min(n, b + kChunk);
        const Tensor logits = model.forward(Variable(x.slice_rows(b, e)), s).value();
        std::copy_n(logits.data(), logits.numel(), out.data() + b * k);
    }
    return out;
}

namespace {

double bacc_of(const Tensor& logits, const std::vector<std::uint32_t>& y, std::size_t k) {
    metrics::EvalBatch b{logits, y, k};
    return metrics::balanced_accuracy(y, b.predictions(), k);
}

float eval_sigma(const ModelHandle& m, const ClassifierRecipe& r) {
    return m.noise_conditioned_input && r.noise_cond ? static_cast<float>(r.sigma_eval) : 0.0f;
}

}  // namespace

TrainOutcome train_classifier(ModelHandle& model, const Dataset& train, const Dataset& val,
                              const ClassifierRecipe& recipe, std::size_t k, std::uint64_t seed,
                              const Tensor* teacher_logits) {
    recipe.validate();
    require(train.x.rank() == 4 && train.x.dim(0) == train.y.size() && !train.y.empty(), "invalid training set");
    require(val.x.rank() == 4 && val.x.dim(0) == val.y.size() && !val.y.empty(), "invalid validation set");
    if (recipe.distill) {
        require(teacher_logits != nullptr, "distillation requires teacher logits");
        require_shape(teacher_logits->shape() == Shape{train.y.size(), k}, "teacher logits must be [N_train, K]");
    }
    require(!recipe.noise_cond || model.noise_conditioned_input, "noise conditioning needs a latent classifier");

    std::vector<std::size_t> counts(k, 0);
    for (auto y : train.y) {
        require(y < k, "label out of range");
        ++counts[y];
    }
    for (auto& c : counts) c = std::max<std::size_t>(c, 1);
    losses::LdamConfig ldam_config = recipe.ldam;
    ldam_config.drw_epoch = recipe.drw_epoch();
    if (model.cosine_scale > 0.0) {
        // The head already emits s*cos, so s(cos - m) = s*cos - s*m.
        ldam_config.max_margin *= model.cosine_scale;
        ldam_config.scale = 1.0;
    }
    const losses::LdamState ldam(counts, ldam_config);

    nn::AdamW opt(model.params, {.learning_rate = recipe.learning_rate, .weight_decay = recipe.weight_decay});
    Rng rng(derive_seed(seed, {0x747261696e}));
    const std::size_t n = train.y.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainOutcome out;
    std::vector<Tensor> best;
    const auto snapshot = [&] {
        best.clear();
        for (const nn::Parameter* p : model.params) best.push_back(p->value);
    };
    snapshot();
    const float sigma_eval = eval_sigma(model, recipe);
    std::vector<std::uint32_t> yb;

    for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < n; b += recipe.batch_size) {
            const std::size_t e = std::min(n, b + recipe.batch_size);
            const std::span<const std::size_t> idx(order.data() + b, e - b);
            Tensor xb = train.x.gather_rows(idx);
            yb.assign(idx.size(), 0);
            for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = train.y[idx[i]];

            std::vector<float> sigmas{0.0f};
            if (recipe.noise_cond) {
                auto noisy = losses::corrupt(xb, recipe.schedule, rng);
                xb = std::move(noisy.latents);
                sigmas = std::move(noisy.sigmas);
            }
            const Variable logits = model.forward(Variable(std::move(xb)), sigmas);
            Variable loss;
            if (recipe.distill)
                loss = losses::distill_loss(logits, teacher_logits->gather_rows(idx), yb, recipe.distill_config);
            else if (recipe.loss == LossKind::ldam)
                loss = losses::ldam_loss(logits, yb, ldam, epoch);
            else
                loss = losses::cross_entropy(logits, yb);
            const double v = loss.value()[0];
            if (!std::isfinite(v))
                throw DivergenceError("classifier loss became non-finite at epoch " + std::to_string(epoch));
            nn::backward(loss);
            opt.step();
            total += v;
            ++batches;
        }
        out.train_loss.push_back(total / static_cast<double>(batches));
        const double vb = bacc_of(predict_logits(model, val.x, sigma_eval, k), val.y, k);
        out.val_bacc.push_back(vb);
        out.epochs_run = epoch + 1;
        if (vb > out.best_val_bacc) {
            out.best_val_bacc = vb;
            out.best_epoch = epoch;
            snapshot();
        } else if (epoch - out.best_epoch >= recipe.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < model.params.size(); ++i) model.params[i]->value = best[i];
    return out;
}

// ---------------------------------------------------------------------------
// Reports

std::vector<const CellResult*> GapReport::cells_of(const std::string& condition, const std::string& space) const {
    std::vector<const CellResult*> out;
    for (const auto& c : cells)
        if (c.condition == condition && c.space == space) out.push_back(&c);
    std::sort(out.begin(), out.end(), [](const CellResult* a, const CellResult* b) { return a->fold < b->fold; });
    return out;
}

metrics::MetricReport GapReport::metric_report(const std::string& condition, const std::string& space) const {
    metrics::MetricReport r;
    for (const auto* c : cells_of(condition, space))
        if (!c->failed) r.folds.push_back(c->metrics);
    return r;
}

void to_json(nlohmann::json& j, const CellResult& c) {
    j = {{"condition", c.condition},
         {"space", c.space},
         {"fold", c.fold},
         {"failed", c.failed},
         {"seed", c.seed},
         {"split_fingerprint", io::hex64(c.split_fingerprint)},
         {"best_epoch", c.best_epoch},
         {"best_val_bacc", c.best_val_bacc}};
    if (c.failed)
        j["failure"] = c.failure;
    else
        j["metrics"] = c.metrics;
}

void to_json(nlohmann::json& j, const GapRow& g) {
    j = {{"condition", g.condition}, {"folds", g.folds},        {"ls_bacc", g.ls_bacc},
         {"rs_bacc", g.rs_bacc},     {"is_bacc", g.is_bacc},    {"gap_rs_ls", g.gap_rs_ls},
         {"gap_is_ls", g.gap_is_ls}, {"t_rs_ls", nullptr},      {"t_is_ls", nullptr},
         {"holm_p_rs_ls", nullptr}};
    if (g.t_rs_ls) j["t_rs_ls"] = *g.t_rs_ls;
    if (g.t_is_ls) j["t_is_ls"] = *g.t_is_ls;
    if (g.holm_p_rs_ls) j["holm_p_rs_ls"] = *g.holm_p_rs_ls;
}

void to_json(nlohmann::json& j, const GapReport& r) {
    std::vector<std::string> fps;
    for (auto f : r.split_fingerprints) fps.push_back(io::hex64(f));
    nlohmann::json summary = nlohmann::json::array();
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& c : r.cells)
        if (std::find(keys.begin(), keys.end(), std::pair{c.condition, c.space}) == keys.end())
            keys.emplace_back(c.condition, c.space);
    for (const auto& [cond, space] : keys)
        summary.push_back({{"condition", cond}, {"space", space}, {"report", r.metric_report(cond, space)}});
    nlohmann::json quality = nlohmann::json::array();
    for (const auto& q : r.quality) quality.push_back({{"condition", q.condition}, {"quality", q.quality}});
    nlohmann::json ladder = nlohmann::json::array();
    for (const auto& rung : r.ladder) {
        metrics::MetricReport m;
        for (const auto& c : rung.folds)
            if (!c.failed) m.folds.push_back(c.metrics);
        ladder.push_back({{"rung", rung.name}, {"cells", rung.folds}, {"report", m}});
    }
    nlohmann::json scatter = nlohmann::json::array();
    for (const auto& p : render_scatter_data(r))
        scatter.push_back({{"condition", p.condition}, {"psnr", p.psnr}, {"gap_bacc_pp", p.gap_bacc_pp}});
    j = {{"format", "lgap-gap-report"},
         {"version", 1},
         {"config_hash", r.config_hash},
         {"config", r.config},
         {"seed", r.seed},
         {"fold_count", r.fold_count},
         {"split_fingerprints", fps},
         {"cells", r.cells},
         {"summary", summary},
         {"gaps", r.gaps},
         {"overall_wilcoxon", nullptr},
         {"quality", quality},
         {"scatter", scatter},
         {"ladder", ladder},
         {"ladder_condition", r.ladder_condition},
         {"incomplete", r.incomplete}};
    if (r.overall_wilcoxon) j["overall_wilcoxon"] = *r.overall_wilcoxon;
}

namespace {

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::string> conditions_in(const GapReport& r) {
    std::vector<std::string> out;
    for (const auto& c : r.cells)
        if (std::find(out.begin(), out.end(), c.condition) == out.end()) out.push_back(c.condition);
    return out;
}

}  // namespace

void compute_gap(GapReport& report) {
    report.gaps.clear();
    report.overall_wilcoxon.reset();
    std::vector<double> mean_ls, mean_rs;
    for (const auto& cond : conditions_in(report)) {
        const auto ls = report.cells_of(cond, "latent");
        const auto rs = report.cells_of(cond, "reconstruction");
        const auto is = report.cells_of(cond, "image");
        if (ls.empty() || rs.empty()) continue;
        GapRow g;
        g.condition = cond;
        for (const auto* l : ls) {
            const auto r_it = std::find_if(rs.begin(), rs.end(), [&](const CellResult* c) { return c->fold == l->fold; });
            if (r_it == rs.end()) throw ValidationError("gap: fold " + std::to_string(l->fold) + " missing in RS");
            if ((*r_it)->split_fingerprint != l->split_fingerprint)
                throw ValidationError("gap: LS and RS used different splits in fold " + std::to_string(l->fold));
            const auto i_it = std::find_if(is.begin(), is.end(), [&](const CellResult* c) { return c->fold == l->fold; });
            if (l->failed || (*r_it)->failed) continue;
            g.folds.push_back(l->fold);
            g.ls_bacc.push_back(l->metrics.bacc);
            g.rs_bacc.push_back((*r_it)->metrics.bacc);
            if (i_it != is.end() && !(*i_it)->failed) g.is_bacc.push_back((*i_it)->metrics.bacc);
        }
        if (g.folds.empty()) continue;
        g.gap_rs_ls = mean_of(g.rs_bacc) - mean_of(g.ls_bacc);
        if (g.folds.size() >= 2) g.t_rs_ls = stats::paired_t_test({g.ls_bacc, g.rs_bacc}, stats::Sidedness::two_sided);
        if (g.is_bacc.size() == g.ls_bacc.size()) {
            g.gap_is_ls = mean_of(g.is_bacc) - mean_of(g.ls_bacc);
            if (g.folds.size() >= 2)
                g.t_is_ls = stats::paired_t_test({g.ls_bacc, g.is_bacc}, stats::Sidedness::two_sided);
        } else {
            g.is_bacc.clear();
        }
        mean_ls.push_back(mean_of(g.ls_bacc));
        mean_rs.push_back(mean_of(g.rs_bacc));
        report.gaps.push_back(std::move(g));
    }
    std::vector<double> ps;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < report.gaps.size(); ++i)
        if (report.gaps[i].t_rs_ls) {
            ps.push_back(report.gaps[i].t_rs_ls->p_value);
            rows.push_back(i);
        }
    const auto adj = stats::holm_adjust(ps);
    for (std::size_t i = 0; i < rows.size(); ++i) report.gaps[rows[i]].holm_p_rs_ls = adj[i];

    bool any_difference = false;
    for (std::size_t i = 0; i < mean_ls.size(); ++i) any_difference |= mean_ls[i] != mean_rs[i];
    if (any_difference) report.overall_wilcoxon = stats::wilcoxon_signed_rank({mean_ls, mean_rs}, stats::Sidedness::less);
}

std::vector<ScatterPoint> render_scatter_data(const GapReport& report) {
    std::vector<ScatterPoint> out;
    for (const auto& g : report.gaps) {
        const auto q = std::find_if(report.quality.begin(), report.quality.end(),
                                    [&](const QualityRow& r) { return r.condition == g.condition; });
        if (q == report.quality.end()) continue;
        out.push_back({g.condition, q->quality.psnr_summary.mean, 100.0 * g.gap_rs_ls});
    }
    return out;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::string report_csv(const GapReport& r) {
    std::ostringstream os;
    os << "condition,space,fold,metric,value,status,seed,split_fingerprint,config_hash\n";
    auto emit = [&](const std::string& cond, const std::string& space, const CellResult& c) {
        const std::pair<const char*, double> ms[3] = {
            {"bacc", c.metrics.bacc}, {"auc", c.metrics.auc}, {"mcc", c.metrics.mcc}};
        for (const auto& [name, value] : ms)
            os << cond << ',' << space << ',' << c.fold << ',' << name << ',' << (c.failed ? "" : num(value)) << ','
               << (c.failed ? "failed" : "ok") << ',' << c.seed << ',' << io::hex64(c.split_fingerprint) << ','
               << r.config_hash << '\n';
    };
    for (const auto& c : r.cells) emit(c.condition, c.space, c);
    for (const auto& rung : r.ladder)
        for (const auto& c : rung.folds) emit(r.ladder_condition, "ladder:" + rung.name, c);
    return os.str();
}

std::string scatter_csv(const GapReport& r) {
    std::ostringstream os;
    os << "condition,psnr,gap_bacc_pp\n";
    for (const auto& p : render_scatter_data(r)) os << p.condition << ',' << num(p.psnr) << ',' << num(p.gap_bacc_pp) << '\n';
    return os.str();
}

namespace {

std::string fixed(double v, int digits = 3) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string p_cell(const std::optional<double>& p) {
    if (!p) return "n/a";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3g", *p);
    return buf;
}

const char* space_label(const std::string& space) {
    if (space == "image") return "IS";
    if (space == "latent") return "LS";
    if (space == "reconstruction") return "RS";
    return "?";
}

}  // namespace

std::string render_markdown(const GapReport& r) {
    std::ostringstream os;
    os << "# Gap report\n\nconfig " << r.config_hash << ", seed " << r.seed << ", " << r.fold_count << " folds";
    if (r.incomplete) os << ", INCOMPLETE (failed folds excluded)";
    os << "\n";

    if (!r.cells.empty()) {
        os << "\n## Classification (mean ± std over folds)\n\n"
           << "| Condition | Space | bACC | AUC | MCC |\n|---|---|---|---|---|\n";
        for (const auto& cond : conditions_in(r))
            for (const char* space : {"image", "latent", "reconstruction"}) {
                const auto m = r.metric_report(cond, space);
                if (m.folds.empty()) continue;
                os << "| " << cond << " | " << space_label(space) << " | " << metrics::format_cell(m.bacc()) << " | "
                   << metrics::format_cell(m.auc()) << " | " << metrics::format_cell(m.mcc()) << " |\n";
            }
    }
    if (!r.gaps.empty()) {
        os << "\n## Gaps (bACC)\n\n| Condition | Folds | RS - LS | p (t) | p (Holm) | IS - LS | p (t) |\n"
           << "|---|---|---|---|---|---|---|\n";
        for (const auto& g : r.gaps) {
            os << "| " << g.condition << " | " << g.folds.size() << " | " << fixed(g.gap_rs_ls) << " | "
               << p_cell(g.t_rs_ls ? std::optional<double>(g.t_rs_ls->p_value) : std::nullopt) << " | "
               << p_cell(g.holm_p_rs_ls) << " | ";
            if (g.t_is_ls || !g.is_bacc.empty())
                os << fixed(g.gap_is_ls) << " | "
                   << p_cell(g.t_is_ls ? std::optional<double>(g.t_is_ls->p_value) : std::nullopt) << " |\n";
            else
                os << "n/a | n/a |\n";
        }
        if (r.overall_wilcoxon)
            os << "\nOverall one-sided Wilcoxon (LS < RS over conditions): W+ = " << r.overall_wilcoxon->statistic
               << ", p = " << p_cell(r.overall_wilcoxon->p_value) << "\n";
    }
    if (!r.quality.empty()) {
        os << "\n## Reconstruction fidelity\n\n| Condition | SSIM | PSNR (dB) |\n|---|---|---|\n";
        for (const auto& q : r.quality)
            os << "| " << q.condition << " | " << metrics::format_cell(q.quality.ssim_summary) << " | "
               << metrics::format_cell(q.quality.psnr_summary, 1) << " |\n";
    }
    if (!r.ladder.empty()) {
        os << "\n## Ablation ladder (" << r.ladder_condition << ")\n\n| Method | bACC | AUC | MCC |\n|---|---|---|---|\n";
        for (const auto& rung : r.ladder) {
            metrics::MetricReport m;
            for (const auto& c : rung.folds)
                if (!c.failed) m.folds.push_back(c.metrics);
            if (m.folds.empty()) {
                os << "| " << rung.name << " | failed | failed | failed |\n";
                continue;
            }
            os << "| " << rung.name << " | " << metrics::format_cell(m.bacc()) << " | " << metrics::format_cell(m.auc())
               << " | " << metrics::format_cell(m.mcc()) << " |\n";
        }
    }
    return os.str();
}

void emit_report(const GapReport& report, const std::filesystem::path& dir) {
    require(!report.cells.empty() || !report.ladder.empty(), "refusing to emit an empty report");
    std::filesystem::create_directories(dir);
    io::write_json(dir / "report.json", nlohmann::json(report));
    io::write_text(dir / "report.csv", report_csv(report));
    io::write_text(dir / "scatter.csv", scatter_csv(report));
    io::write_text(dir / "report.md", render_markdown(report));
}

// ---------------------------------------------------------------------------
// Experiment driver

corpus::CorpusSpec pretraining_spec(const ExperimentConfig& config) {
    corpus::CorpusSpec s = config.corpus;
    s.seed = derive_seed(config.corpus.seed, {0x7072657472});
    s.imbalance_ratio = 1.0;
    const std::size_t k = s.num_classes;
    s.head_count = (config.autoencoder_training.pretrain_images + k - 1) / k;
    return s;
}

PreparedData prepare(const ExperimentConfig& config) {
    config.validate();
    PreparedData d;
    d.corpus = corpus::generate_corpus(config.corpus);
    d.folds = corpus::assign_folds(d.corpus.labels(), config.fold_count, config.seed);
    d.images = d.corpus.images();
    if (!config.autoencoder_checkpoint.empty()) {
        d.autoencoder = autoenc::load_autoencoder(config.autoencoder_checkpoint);
        require(d.autoencoder.config == config.autoencoder, "autoencoder checkpoint does not match the configuration");
    } else {
        // Stand-in for a pretrained autoencoder.
        auto trained = autoenc::train_autoencoder(corpus::generate_corpus(pretraining_spec(config)).images(),
                                                  config.autoencoder, config.autoencoder_training);
        d.autoencoder = std::move(trained.model);
        d.autoencoder_loss = std::move(trained.loss_history);
    }
    d.latents = autoenc::encode(d.autoencoder, d.images);
    return d;
}

ConditionFold prepare_condition_fold(const PreparedData& data, const ExperimentConfig& config, ScramblerKind condition,
                                     std::size_t fold) {
    ConditionFold cf;
    cf.split = fold_split(data.folds, fold);
    cf.stats = autoenc::fit_latent_stats(data.latents.gather_rows(cf.split.train));
    const autoenc::Scrambler scrambler(condition, config.scrambler_seed, data.autoencoder.config.latent_shape());
    cf.latent_inputs = scrambler.scramble(autoenc::normalize(data.latents, cf.stats));
    cf.reconstruction_inputs =
        autoenc::decode(data.autoencoder, autoenc::denormalize(scrambler.descramble(cf.latent_inputs), cf.stats));
    return cf;
}

namespace {

std::uint64_t cell_seed(const ExperimentConfig& config, std::size_t fold) {
    return derive_seed(config.seed, {0x63656c6c, fold});
}

Dataset subset(const Tensor& x, const std::vector<std::uint32_t>& labels, const std::vector<std::size_t>& idx) {
    Dataset d{x.gather_rows(idx), {}};
    d.y.reserve(idx.size());
    for (auto i : idx) d.y.push_back(labels[i]);
    return d;
}

struct Trained {
    CellResult cell;
    Tensor train_logits;  // used as teacher logits
};

template <class Model>
Trained train_and_evaluate(Model& model, const Tensor& inputs, const std::vector<std::uint32_t>& labels,
                           const FoldSplit& split, const ClassifierRecipe& recipe, std::size_t k, std::uint64_t seed,
                           const Tensor* teacher, bool want_train_logits) {
    Trained t;
    t.cell.fold = split.fold;
    t.cell.seed = seed;
    t.cell.split_fingerprint = split.fingerprint();
    ModelHandle h = handle(model);
    // Pixel inputs get the same channel-wise standardisation, fitted on the
    // training split, that latents receive before scrambling.
    std::optional<Tensor> standardized;
    if constexpr (std::is_same_v<Model, nets::ImageClassifier>)
        standardized = autoenc::normalize(inputs, autoenc::fit_latent_stats(inputs.gather_rows(split.train)));
    const Tensor& x = standardized ? *standardized : inputs;
    const Dataset train = subset(x, labels, split.train);
    const Dataset val = subset(x, labels, split.val);
    const Dataset test = subset(x, labels, split.test);
    try {
        const TrainOutcome o = train_classifier(h, train, val, recipe, k, seed, teacher);
        t.cell.best_epoch = o.best_epoch;
        t.cell.best_val_bacc = o.best_val_bacc;
        const float sigma = h.noise_conditioned_input && recipe.noise_cond ? static_cast<float>(recipe.sigma_eval) : 0.0f;
        t.cell.metrics = metrics::evaluate({predict_logits(h, test.x, sigma, k), test.y, k});
        if (want_train_logits) t.train_logits = predict_logits(h, train.x, sigma, k);
    } catch (const DivergenceError& e) {
        spdlog::warn("fold {} diverged: {}", split.fold, e.what());
        t.cell.failed = true;
        t.cell.failure = e.what();
    }
    return t;
}

nets::ClassifierConfig latent_config(const ExperimentConfig& c, const PreparedData& d) {
    return {d.autoencoder.config.latent_shape(), c.corpus.num_classes, c.classifier.latent_backbone,
            c.classifier.embedding, c.classifier.head_scale()};
}

nets::ClassifierConfig image_config(const ExperimentConfig& c) {
    return {c.autoencoder.image_shape(), c.corpus.num_classes, c.classifier.image_backbone, c.classifier.embedding,
            c.classifier.head_scale()};
}

GapReport report_skeleton(const ExperimentConfig& config, const PreparedData& data) {
    GapReport r;
    r.config = config;
    r.config_hash = config_hash(config);
    r.seed = config.seed;
    r.fold_count = config.fold_count;
    for (std::size_t f = 0; f < config.fold_count; ++f) r.split_fingerprints.push_back(fold_split(data.folds, f).fingerprint());
    return r;
}

void note(const ProgressFn& progress, const std::string& msg) {
    if (progress) progress(msg);
}

bool has_space(const ExperimentConfig& c, Space s) {
    return std::find(c.spaces.begin(), c.spaces.end(), s) != c.spaces.end();
}

}  // namespace

GapReport run_three_space(const ExperimentConfig& config, const ProgressFn& progress) {
    note(progress, "preparing corpus and autoencoder");
    return run_three_space(prepare(config), config, progress);
}

GapReport run_three_space(const PreparedData& data, const ExperimentConfig& config, const ProgressFn& progress) {
    config.validate();
    GapReport report = report_skeleton(config, data);
    const auto labels = data.corpus.labels();
    const std::size_t k = config.corpus.num_classes;

    // Image space does not depend on the latent condition: train once per
    // fold and report the same cell under every condition.
    std::vector<CellResult> image_cells;
    if (has_space(config, Space::image)) {
        for (std::size_t f = 0; f < config.fold_count; ++f) {
            note(progress, "image space, fold " + std::to_string(f));
            nets::ImageClassifier m(image_config(config), cell_seed(config, f));
            image_cells.push_back(train_and_evaluate(m, data.images, labels, fold_split(data.folds, f),
                                                     config.classifier, k, cell_seed(config, f), nullptr, false)
                                      .cell);
        }
    }

    for (const auto kind : config.conditions) {
        const std::string cond = condition_name(kind);
        Tensor first_reconstructions;
        for (std::size_t f = 0; f < config.fold_count; ++f) {
            const ConditionFold cf = prepare_condition_fold(data, config, kind, f);
            const std::uint64_t seed = cell_seed(config, f);
            if (!image_cells.empty()) {
                CellResult c = image_cells[f];
                c.condition = cond;
                c.space = "image";
                report.cells.push_back(c);
            }
            if (has_space(config, Space::latent)) {
                note(progress, cond + " latent space, fold " + std::to_string(f));
                nets::LatentClassifier m(latent_config(config, data), seed);
                auto t = train_and_evaluate(m, cf.latent_inputs, labels, cf.split, config.classifier, k, seed, nullptr,
                                            false);
                t.cell.condition = cond;
                t.cell.space = "latent";
                report.cells.push_back(t.cell);
            }
            if (has_space(config, Space::reconstruction)) {
                note(progress, cond + " reconstruction space, fold " + std::to_string(f));
                nets::ImageClassifier m(image_config(config), seed);
                auto t = train_and_evaluate(m, cf.reconstruction_inputs, labels, cf.split, config.classifier, k, seed,
                                            nullptr, false);
                t.cell.condition = cond;
                t.cell.space = "reconstruction";
                report.cells.push_back(t.cell);
            }
            if (f == 0) first_reconstructions = cf.reconstruction_inputs;
        }
        report.quality.push_back({cond, autoenc::reconstruction_quality(data.images, first_reconstructions)});
    }
    for (const auto& c : report.cells) report.incomplete |= c.failed;
    compute_gap(report);
    return report;
}

GapReport run_single_space(const ExperimentConfig& config, Space space, ScramblerKind condition,
                           const ProgressFn& progress) {
    config.validate();
    const ClassifierRecipe& recipe = config.classifier;
    if (space != Space::latent)
        require(!recipe.distill && !recipe.noise_cond, "distillation and noise conditioning apply to the latent space only");
    note(progress, "preparing corpus and autoencoder");
    const PreparedData data = prepare(config);
    GapReport report = report_skeleton(config, data);
    const auto labels = data.corpus.labels();
    const std::size_t k = config.corpus.num_classes;
    const std::string cond = condition_name(condition);

    for (std::size_t f = 0; f < config.fold_count; ++f) {
        const ConditionFold cf = prepare_condition_fold(data, config, condition, f);
        const std::uint64_t seed = cell_seed(config, f);
        Trained t;
        if (space == Space::image) {
            note(progress, "image space, fold " + std::to_string(f));
            nets::ImageClassifier m(image_config(config), seed);
            t = train_and_evaluate(m, data.images, labels, cf.split, recipe, k, seed, nullptr, false);
        } else if (space == Space::reconstruction) {
            note(progress, cond + " reconstruction space, fold " + std::to_string(f));
            nets::ImageClassifier m(image_config(config), seed);
            t = train_and_evaluate(m, cf.reconstruction_inputs, labels, cf.split, recipe, k, seed, nullptr, false);
        } else {
            Trained teacher;
            if (recipe.distill) {
                note(progress, "teacher (reconstruction space), fold " + std::to_string(f));
                ClassifierRecipe plain = recipe;
                plain.distill = false;
                plain.noise_cond = false;
                nets::ImageClassifier m(image_config(config), seed);
                teacher = train_and_evaluate(m, cf.reconstruction_inputs, labels, cf.split, plain, k, seed, nullptr, true);
            }
            if (recipe.distill && teacher.cell.failed) {
                t.cell = teacher.cell;
                t.cell.failure = "teacher unavailable: " + teacher.cell.failure;
            } else {
                note(progress, cond + " latent space, fold " + std::to_string(f));
                nets::LatentClassifier m(latent_config(config, data), seed);
                t = train_and_evaluate(m, cf.latent_inputs, labels, cf.split, recipe, k, seed,
                                       recipe.distill ? &teacher.train_logits : nullptr, false);
            }
        }
        t.cell.condition = cond;
        t.cell.space = to_string(space);
        report.cells.push_back(t.cell);
    }
    for (const auto& c : report.cells) report.incomplete |= c.failed;
    return report;
}

GapReport run_ablation_ladder(const ExperimentConfig& config, ScramblerKind condition, const ProgressFn& progress) {
    note(progress, "preparing corpus and autoencoder");
    const PreparedData data = prepare(config);
    GapReport report = report_skeleton(config, data);
    const auto labels = data.corpus.labels();
    const std::size_t k = config.corpus.num_classes;
    const std::string cond = condition_name(condition);
    report.ladder_condition = cond;
    for (const auto& name : kLadderRungs) report.ladder.push_back({name, {}});

    for (std::size_t f = 0; f < config.fold_count; ++f) {
        const ConditionFold cf = prepare_condition_fold(data, config, condition, f);
        const std::uint64_t seed = cell_seed(config, f);
        const ClassifierRecipe base = config.classifier;

        note(progress, "teacher (reconstruction space), fold " + std::to_string(f));
        nets::ImageClassifier teacher(image_config(config), seed);
        auto rs = train_and_evaluate(teacher, cf.reconstruction_inputs, labels, cf.split, base, k, seed, nullptr, true);
        rs.cell.condition = cond;
        rs.cell.space = "reconstruction";
        report.cells.push_back(rs.cell);

        auto run_latent = [&](const ClassifierRecipe& recipe, const std::string& rung) {
            note(progress, "ladder " + rung + ", fold " + std::to_string(f));
            if (recipe.distill && rs.cell.failed) {
                CellResult c;
                c.fold = f;
                c.seed = seed;
                c.split_fingerprint = cf.split.fingerprint();
                c.failed = true;
                c.failure = "teacher unavailable";
                return c;
            }
            nets::LatentClassifier m(latent_config(config, data), seed);
            return train_and_evaluate(m, cf.latent_inputs, labels, cf.split, recipe, k, seed,
                                      recipe.distill ? &rs.train_logits : nullptr, false)
                .cell;
        };

        ClassifierRecipe naive = base;
        naive.distill = false;
        naive.noise_cond = false;
        CellResult ls = run_latent(naive, "naive");
        report.ladder[0].folds.push_back(ls);
        ls.condition = cond;
        ls.space = "latent";
        report.cells.push_back(ls);

        ClassifierRecipe distill = naive;
        distill.distill = true;
        report.ladder[1].folds.push_back(run_latent(distill, "+distill"));

        // Fixed learning-rate x weight-decay grid, selected on validation bACC.
        CellResult best;
        ClassifierRecipe best_recipe = distill;
        best.best_val_bacc = -1.0;
        for (double lr : config.hp_grid.learning_rates)
            for (double wd : config.hp_grid.weight_decays) {
                ClassifierRecipe r = distill;
                r.learning_rate = lr;
                r.weight_decay = wd;
                CellResult c = run_latent(r, "+hp_opt lr=" + std::to_string(lr) + " wd=" + std::to_string(wd));
                if (!c.failed && c.best_val_bacc > best.best_val_bacc) {
                    best = c;
                    best_recipe = r;
                }
            }
        if (best.best_val_bacc < 0.0) {
            best.fold = f;
            best.seed = seed;
            best.split_fingerprint = cf.split.fingerprint();
            best.failed = true;
            best.failure = "every grid point failed";
        }
        report.ladder[2].folds.push_back(best);

        ClassifierRecipe noise = best_recipe;
        noise.distill = false;
        noise.noise_cond = true;
        report.ladder[3].folds.push_back(run_latent(noise, "+noise_cond"));

        ClassifierRecipe both = best_recipe;
        both.distill = true;
        both.noise_cond = true;
        report.ladder[4].folds.push_back(run_latent(both, "+distill+noise_cond"));
    }
    for (const auto& c : report.cells) report.incomplete |= c.failed;
    for (const auto& rung : report.ladder)
        for (const auto& c : rung.folds) report.incomplete |= c.failed;
    report.quality.push_back(
        {cond, autoenc::reconstruction_quality(
                   data.images, prepare_condition_fold(data, config, condition, 0).reconstruction_inputs)});
    compute_gap(report);
    return report;
}

// ---------------------------------------------------------------------------

namespace {

template <class Step>
ThroughputRow measure(const std::string& path, std::size_t batch, const ThroughputConfig& cfg, Step step) {
    for (std::size_t i = 0; i < cfg.warmup_iterations; ++i) step();
    memory::reset_peak();
    const std::size_t baseline = memory::current_bytes();
    const auto start = std::chrono::steady_clock::now();
    std::size_t iters = 0;
    double elapsed = 0.0;
    do {
        step();
        ++iters;
        elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } while (elapsed < cfg.min_seconds);
    ThroughputRow row;
    row.path = path;
    row.batch_size = batch;
    row.iterations = iters;
    row.samples_per_sec = static_cast<double>(iters * batch) / elapsed;
    row.peak_mb = static_cast<double>(memory::peak_bytes() - baseline) / (1024.0 * 1024.0);
    return row;
}

}  // namespace

std::vector<ThroughputRow> benchmark_throughput(const nets::LatentClassifier& latent_model,
                                                const autoenc::Autoencoder& ae,
                                                const nets::ImageClassifier& image_model,
                                                const ThroughputConfig& config, std::uint64_t seed) {
    require(!config.batch_sizes.empty(), "no batch sizes to benchmark");
    std::vector<ThroughputRow> rows;
    const std::size_t k = latent_model.config.num_classes;
    for (std::size_t b : config.batch_sizes) {
        require(b >= 1, "batch size must be positive");
        Rng rng(derive_seed(seed, {0x62656e6368, b}));
        Shape zshape{b};
        const auto& ls = ae.config.latent_shape();
        zshape.insert(zshape.end(), ls.begin(), ls.end());
        Tensor z(zshape);
        for (std::size_t i = 0; i < z.numel(); ++i) z[i] = static_cast<float>(rng.normal());
        std::vector<std::uint32_t> y(b);
        for (auto& v : y) v = static_cast<std::uint32_t>(rng.below(k));
        const std::vector<float> sigmas(b, 0.1f);

        {
            nets::LatentClassifier model = latent_model;
            nn::AdamW opt(nn::parameters_of(model), {});
            rows.push_back(measure("latent", b, config, [&] {
                nn::backward(losses::cross_entropy(model.forward(Variable(z), sigmas), y));
                opt.step();
            }));
        }
        {
            nets::ImageClassifier model = image_model;
            nn::AdamW opt(nn::parameters_of(model), {});
            rows.push_back(measure("reconstruction", b, config, [&] {
                const Tensor x = autoenc::decode(ae, z);
                nn::backward(losses::cross_entropy(model.forward(Variable(x)), y));
                opt.step();
            }));
        }
    }
    return rows;
}

std::string throughput_csv(const std::vector<ThroughputRow>& rows) {
    std::ostringstream os;
    os << "path,batch_size,samples_per_sec,peak_mb,iterations\n";
    for (const auto& r : rows)
        os << r.path << ',' << r.batch_size << ',' << num(r.samples_per_sec) << ',' << num(r.peak_mb) << ','
           << r.iterations << '\n';
    return os.str();
}

std::string throughput_table(const std::vector<ThroughputRow>& rows) {
    std::vector<std::size_t> batches;
    std::vector<std::string> paths;
    for (const auto& r : rows) {
        if (std::find(batches.begin(), batches.end(), r.batch_size) == batches.end()) batches.push_back(r.batch_size);
        if (std::find(paths.begin(), paths.end(), r.path) == paths.end()) paths.push_back(r.path);
    }
    std::ostringstream os;
    os << "| Path |";
    for (auto b : batches) os << " B=" << b << " (S/s, MB) |";
    os << "\n|---|";
    for (std::size_t i = 0; i < batches.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& p : paths) {
        os << "| " << p << " |";
        for (auto b : batches) {
            const auto it = std::find_if(rows.begin(), rows.end(),
                                         [&](const ThroughputRow& r) { return r.path == p && r.batch_size == b; });
            if (it == rows.end())
                os << " n/a |";
            else
                os << " " << fixed(it->samples_per_sec, 1) << ", " << fixed(it->peak_mb, 1) << " |";
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace lgap::harness
