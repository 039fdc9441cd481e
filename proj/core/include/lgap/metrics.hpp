#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgap/tensor.hpp"

namespace lgap::metrics {

// ---------------------------------------------------------------------------
// Classification

/// Per-sample scores (logits or probabilities) with true labels.
struct EvalBatch {
    Tensor scores;  // [N, K]
    std::vector<std::uint32_t> labels;
    std::size_t num_classes = 0;

    void validate() const;
    std::vector<std::uint32_t> predictions() const;  // argmax, lowest index wins ties
};

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::uint32_t> labels,
                                                       std::span<const std::uint32_t> predicted, std::size_t k);

/// Unweighted mean recall over the classes present in `labels`.
double balanced_accuracy(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> predicted,
                         std::size_t k);

struct AucResult {
    double value = 0.0;
    std::vector<std::size_t> per_class_valid;
    std::vector<std::size_t> skipped_classes;  // lacking positives or negatives
};

/// Macro one-vs-rest ROC AUC via the Mann-Whitney rank form; ties count 1/2.
/// `scores` is row-major [N, K].
AucResult auc_macro_ovr(std::span<const std::uint32_t> labels, const Tensor& scores, std::size_t k);

/// Multiclass MCC from the K x K confusion matrix; 0 when undefined.
double mcc_multiclass(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> predicted,
                      std::size_t k);

/// Row-wise softmax of logits [N, K].
Tensor softmax_rows(const Tensor& logits);

struct MetricValues {
    double bacc = 0.0;
    double auc = 0.0;
    double mcc = 0.0;
};

/// bACC and MCC from argmax predictions, AUC from softmax probabilities.
MetricValues evaluate(const EvalBatch& batch);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
};

Summary summarize(std::span<const double> values);

/// Per-fold metric values plus their mean and spread.
struct MetricReport {
    std::vector<MetricValues> folds;

    Summary bacc() const;
    Summary auc() const;
    Summary mcc() const;
};

void to_json(nlohmann::json& j, const MetricValues& m);
void to_json(nlohmann::json& j, const Summary& s);
void to_json(nlohmann::json& j, const MetricReport& r);

/// "0.552 ± 0.013" style cell.
std::string format_cell(const Summary& s, int digits = 3);

// ---------------------------------------------------------------------------
// Reconstruction fidelity

inline constexpr double kPsnrCapDb = 100.0;

/// 10 log10(range^2 / MSE), capped at 100 dB (also when MSE < 1e-10).
double psnr(const Tensor& reference, const Tensor& test, double data_range = 1.0);

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double data_range = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Gaussian-window SSIM averaged over all fully contained window positions.
/// Accepts [H,W] or [C,H,W]; channels are averaged.
double ssim(const Tensor& reference, const Tensor& test, const SsimOptions& options = {});

}  // namespace lgap::metrics
