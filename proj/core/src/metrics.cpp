#include "lgap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <spdlog/spdlog.h>

#include "lgap/error.hpp"

namespace lgap::metrics {

namespace {

void check_labels(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> predicted, std::size_t k) {
    require(!labels.empty(), "metric on empty input");
    require(labels.size() == predicted.size(), "labels and predictions differ in length");
    require(k >= 1, "class count must be positive");
    for (std::size_t i = 0; i < labels.size(); ++i)
        require(labels[i] < k && predicted[i] < k, "label out of range [0, " + std::to_string(k) + ")");
}

}  // namespace

void EvalBatch::validate() const {
    require(!labels.empty(), "empty evaluation batch");
    require(scores.rank() == 2 && scores.dim(0) == labels.size() && scores.dim(1) == num_classes,
            "scores " + shape_str(scores.shape()) + " do not match " + std::to_string(labels.size()) + " labels x " +
                std::to_string(num_classes) + " classes");
    for (auto l : labels) require(l < num_classes, "label out of range");
}

std::vector<std::uint32_t> EvalBatch::predictions() const {
    const std::size_t n = labels.size(), k = num_classes;
    std::vector<std::uint32_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = scores.data() + i * k;
        out[i] = static_cast<std::uint32_t>(std::max_element(row, row + k) - row);
    }
    return out;
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::uint32_t> labels,
                                                       std::span<const std::uint32_t> predicted, std::size_t k) {
    check_labels(labels, predicted, k);
    std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) ++cm[labels[i]][predicted[i]];
    return cm;
}

double balanced_accuracy(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> predicted,
                         std::size_t k) {
    const auto cm = confusion_matrix(labels, predicted, k);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t support = std::accumulate(cm[c].begin(), cm[c].end(), std::size_t{0});
        if (support == 0) continue;
        sum += static_cast<double>(cm[c][c]) / static_cast<double>(support);
        ++present;
    }
    return sum / static_cast<double>(present);
}

AucResult auc_macro_ovr(std::span<const std::uint32_t> labels, const Tensor& scores, std::size_t k) {
    require(!labels.empty(), "AUC on empty input");
    require(scores.rank() == 2 && scores.dim(0) == labels.size() && scores.dim(1) == k,
            "AUC scores must be [N, K], got " + shape_str(scores.shape()));
    const std::size_t n = labels.size();
    AucResult result;
    std::vector<std::size_t> order(n);
    std::vector<double> ranks(n);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t pos = 0;
        for (auto l : labels) pos += (l == c);
        const std::size_t neg = n - pos;
        if (pos == 0 || neg == 0) {
            result.skipped_classes.push_back(c);
            continue;
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return scores[a * k + c] < scores[b * k + c]; });
        // Midranks: tied scores share the average of the ranks they span.
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && scores[order[j + 1] * k + c] == scores[order[i] * k + c]) ++j;
            const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = midrank;
            i = j + 1;
        }
        double rank_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (labels[i] == c) rank_sum += ranks[i];
        const double P = static_cast<double>(pos), N = static_cast<double>(neg);
        total += (rank_sum - P * (P + 1.0) / 2.0) / (P * N);
        result.per_class_valid.push_back(c);
    }
    if (result.per_class_valid.empty()) throw ValidationError("AUC undefined: no class has both positives and negatives");
    if (!result.skipped_classes.empty())
        spdlog::warn("AUC: skipped {} class(es) lacking positives or negatives", result.skipped_classes.size());
    result.value = total / static_cast<double>(result.per_class_valid.size());
    return result;
}

double mcc_multiclass(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> predicted,
                      std::size_t k) {
    const auto cm = confusion_matrix(labels, predicted, k);
    double correct = 0.0, s = static_cast<double>(labels.size());
    std::vector<double> t(k, 0.0), p(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        correct += static_cast<double>(cm[i][i]);
        for (std::size_t j = 0; j < k; ++j) {
            t[i] += static_cast<double>(cm[i][j]);
            p[j] += static_cast<double>(cm[i][j]);
        }
    }
    double pt = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        pt += p[i] * t[i];
        pp += p[i] * p[i];
        tt += t[i] * t[i];
    }
    const double denom = std::sqrt(s * s - pp) * std::sqrt(s * s - tt);
    if (denom == 0.0) return 0.0;
    return (correct * s - pt) / denom;
}

Tensor softmax_rows(const Tensor& logits) {
    require(logits.rank() == 2, "softmax_rows expects [N, K]");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = logits.data() + i * k;
        const double m = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = static_cast<float>(std::exp(row[j] - m) / z);
    }
    return out;
}

MetricValues evaluate(const EvalBatch& batch) {
    batch.validate();
    const auto pred = batch.predictions();
    MetricValues m;
    m.bacc = balanced_accuracy(batch.labels, pred, batch.num_classes);
    m.auc = auc_macro_ovr(batch.labels, softmax_rows(batch.scores), batch.num_classes).value;
    m.mcc = mcc_multiclass(batch.labels, pred, batch.num_classes);
    return m;
}

Summary summarize(std::span<const double> values) {
    if (values.empty()) return {};
    const double n = static_cast<double>(values.size());
    const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() == 1) return {mu, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mu) * (v - mu);
    return {mu, std::sqrt(ss / (n - 1.0))};
}

namespace {
template <class F>
Summary summarize_field(const std::vector<MetricValues>& folds, F field) {
    std::vector<double> v;
    v.reserve(folds.size());
    for (const auto& f : folds) v.push_back(field(f));
    return summarize(v);
}
}  // namespace

Summary MetricReport::bacc() const { return summarize_field(folds, [](const MetricValues& m) { return m.bacc; }); }
Summary MetricReport::auc() const { return summarize_field(folds, [](const MetricValues& m) { return m.auc; }); }
Summary MetricReport::mcc() const { return summarize_field(folds, [](const MetricValues& m) { return m.mcc; }); }

void to_json(nlohmann::json& j, const MetricValues& m) { j = {{"bacc", m.bacc}, {"auc", m.auc}, {"mcc", m.mcc}}; }
void to_json(nlohmann::json& j, const Summary& s) { j = {{"mean", s.mean}, {"std", s.std}}; }
void to_json(nlohmann::json& j, const MetricReport& r) {
    j = {{"folds", r.folds}, {"bacc", r.bacc()}, {"auc", r.auc()}, {"mcc", r.mcc()}};
}

std::string format_cell(const Summary& s, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", digits, s.mean, digits, s.std);
    return buf;
}

double psnr(const Tensor& reference, const Tensor& test, double data_range) {
    require_shape(reference.shape() == test.shape(),
                  "psnr: shape mismatch " + shape_str(reference.shape()) + " vs " + shape_str(test.shape()));
    require(!reference.empty(), "psnr on empty image");
    double acc = 0.0;
    for (std::size_t i = 0; i < reference.numel(); ++i) {
        const double d = static_cast<double>(reference[i]) - static_cast<double>(test[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(reference.numel());
    if (mse < 1e-10) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(data_range * data_range / mse));
}

namespace {

std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> w(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable "valid" filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& win) {
    const std::size_t k = win.size(), ho = h - k + 1, wo = w - k + 1;
    std::vector<double> tmp(h * wo, 0.0), out(ho * wo, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
            double a = 0.0;
            for (std::size_t t = 0; t < k; ++t) a += win[t] * plane[y * w + x + t];
            tmp[y * wo + x] = a;
        }
    for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
            double a = 0.0;
            for (std::size_t t = 0; t < k; ++t) a += win[t] * tmp[(y + t) * wo + x];
            out[y * wo + x] = a;
        }
    return out;
}

}  // namespace

double ssim(const Tensor& reference, const Tensor& test, const SsimOptions& opt) {
    require_shape(reference.shape() == test.shape(),
                  "ssim: shape mismatch " + shape_str(reference.shape()) + " vs " + shape_str(test.shape()));
    require_shape(reference.rank() == 2 || reference.rank() == 3, "ssim expects [H,W] or [C,H,W]");
    const std::size_t c = reference.rank() == 3 ? reference.dim(0) : 1;
    const std::size_t h = reference.dim(reference.rank() - 2), w = reference.dim(reference.rank() - 1);
    require(h >= opt.window && w >= opt.window,
            "ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than window " +
                std::to_string(opt.window));
    const auto win = gaussian_window(opt.window, opt.sigma);
    const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
    const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);

    double total = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            x[i] = reference[ch * h * w + i];
            y[i] = test[ch * h * w + i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, win), my = filter_valid(y, h, w, win);
        const auto exx = filter_valid(xx, h, w, win), eyy = filter_valid(yy, h, w, win),
                   exy = filter_valid(xy, h, w, win);
        double acc = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = exx[i] - mx[i] * mx[i];
            const double vy = eyy[i] - my[i] * my[i];
            const double cov = exy[i] - mx[i] * my[i];
            acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(c);
}

}  // namespace lgap::metrics
