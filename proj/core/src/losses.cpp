#include "lgap/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "lgap/error.hpp"

namespace lgap::losses {

using nn::Variable;

namespace {

void check_logits(std::span<const double> logits, std::size_t label) {
    require(!logits.empty(), "loss on empty logits");
    require(label < logits.size(),
            "label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) + " classes");
}

}  // namespace

LossGrad cross_entropy(std::span<const double> logits, std::size_t label) {
    check_logits(logits, label);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    LossGrad out;
    out.value = std::log(z) - (logits[label] - m);
    out.grad.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) out.grad[j] = std::exp(logits[j] - m) / z;
    out.grad[label] -= 1.0;
    return out;
}

void LdamConfig::validate() const {
    require(max_margin >= 0.0 && std::isfinite(max_margin), "LDAM max margin must be >= 0");
    require(scale > 0.0 && std::isfinite(scale), "LDAM scale must be positive");
    require(beta >= 0.0 && beta < 1.0, "LDAM beta must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const LdamConfig& c) {
    j = {{"max_margin", c.max_margin}, {"scale", c.scale}, {"drw_epoch", c.drw_epoch}, {"beta", c.beta}};
}

void from_json(const nlohmann::json& j, LdamConfig& c) {
    LdamConfig d;
    c.max_margin = j.value("max_margin", d.max_margin);
    c.scale = j.value("scale", d.scale);
    c.drw_epoch = j.value("drw_epoch", d.drw_epoch);
    c.beta = j.value("beta", d.beta);
}

namespace {
void check_counts(std::span<const std::size_t> counts) {
    require(!counts.empty(), "class counts are empty");
    for (auto n : counts) require(n >= 1, "every class count must be >= 1");
}
}  // namespace

std::vector<double> ldam_margins(std::span<const std::size_t> counts, double max_margin) {
    check_counts(counts);
    std::vector<double> m(counts.size());
    for (std::size_t j = 0; j < counts.size(); ++j) m[j] = 1.0 / std::pow(static_cast<double>(counts[j]), 0.25);
    const double largest = *std::max_element(m.begin(), m.end());
    for (auto& v : m) v *= max_margin / largest;
    return m;
}

std::vector<double> drw_weights(std::span<const std::size_t> counts, double beta) {
    check_counts(counts);
    std::vector<double> w(counts.size());
    for (std::size_t j = 0; j < counts.size(); ++j)
        w[j] = (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(counts[j])));
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    for (auto& v : w) v /= mean;
    return w;
}

LdamState::LdamState(std::span<const std::size_t> counts, const LdamConfig& c)
    : config(c), margins(ldam_margins(counts, c.max_margin)), weights(drw_weights(counts, c.beta)) {
    config.validate();
}

LossGrad ldam_loss(std::span<const double> logits, std::size_t label, const LdamState& state, std::size_t epoch) {
    check_logits(logits, label);
    require(logits.size() == state.margins.size(), "LDAM: logits and class counts differ in length");
    const double s = state.config.scale;
    std::vector<double> z(logits.begin(), logits.end());
    z[label] -= state.margins[label];
    for (auto& v : z) v *= s;
    LossGrad out = cross_entropy(z, label);
    const double w = state.weight(label, epoch);
    out.value *= w;
    for (auto& g : out.grad) g *= w * s;
    return out;
}

LossGrad ldam_loss(std::span<const double> logits, std::size_t label, std::span<const std::size_t> counts,
                   const LdamConfig& config, std::size_t epoch) {
    return ldam_loss(logits, label, LdamState(counts, config), epoch);
}

void DistillConfig::validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, "distillation alpha must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const DistillConfig& c) { j = {{"alpha", c.alpha}}; }
void from_json(const nlohmann::json& j, DistillConfig& c) { c.alpha = j.value("alpha", DistillConfig{}.alpha); }

LossGrad distill_loss(std::span<const double> zs, std::span<const double> zt, std::size_t label,
                      const DistillConfig& config) {
    config.validate();
    require(zs.size() == zt.size(), "student and teacher logits differ in length");
    LossGrad out = cross_entropy(zs, label);
    const double a = config.alpha;
    out.value *= a;
    for (auto& g : out.grad) g *= a;
    double sq = 0.0;
    for (std::size_t j = 0; j < zs.size(); ++j) {
        const double d = zs[j] - zt[j];
        sq += d * d;
        out.grad[j] += 2.0 * (1.0 - a) * d;
    }
    out.value += (1.0 - a) * sq;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

using RowKernel = std::function<LossGrad(std::span<const double> row, std::size_t i)>;

// Mean over rows of a per-row loss; the backward pass reuses the kernel's
// gradient, so batched and single-sample losses agree by construction.
Variable mean_row_loss(const Variable& logits, std::size_t expected_rows, const RowKernel& kernel) {
    const Tensor& z = logits.value();
    require_shape(z.rank() == 2, "loss expects logits [N, K], got " + shape_str(z.shape()));
    const std::size_t n = z.dim(0), k = z.dim(1);
    require(n == expected_rows && n > 0, "loss: " + std::to_string(n) + " logit rows for " +
                                             std::to_string(expected_rows) + " labels");
    Tensor grad({n, k});
    double total = 0.0;
    std::vector<double> row(k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) row[j] = z[i * k + j];
        const LossGrad lg = kernel(row, i);
        total += lg.value;
        for (std::size_t j = 0; j < k; ++j) grad[i * k + j] = static_cast<float>(lg.grad[j] / static_cast<double>(n));
    }
    Tensor value({1}, static_cast<float>(total / static_cast<double>(n)));
    return Variable::from_op(std::move(value), {logits},
                             [grad = std::move(grad)](const Tensor& g, std::vector<Variable>& in) {
                                 Tensor& dst = in[0].grad_buffer();
                                 const float s = g[0];
                                 for (std::size_t i = 0; i < grad.numel(); ++i) dst[i] += s * grad[i];
                             });
}

}  // namespace

Variable cross_entropy(const Variable& logits, std::span<const std::uint32_t> labels) {
    return mean_row_loss(logits, labels.size(),
                         [&](std::span<const double> row, std::size_t i) { return cross_entropy(row, labels[i]); });
}

Variable ldam_loss(const Variable& logits, std::span<const std::uint32_t> labels, const LdamState& state,
                   std::size_t epoch) {
    return mean_row_loss(logits, labels.size(), [&](std::span<const double> row, std::size_t i) {
        return ldam_loss(row, labels[i], state, epoch);
    });
}

Variable distill_loss(const Variable& student, const Tensor& teacher, std::span<const std::uint32_t> labels,
                      const DistillConfig& config) {
    require_shape(teacher.shape() == student.shape(), "teacher logits " + shape_str(teacher.shape()) +
                                                          " do not match student " + shape_str(student.shape()));
    const std::size_t k = teacher.rank() == 2 ? teacher.dim(1) : 0;
    std::vector<double> zt(k);
    return mean_row_loss(student, labels.size(), [&](std::span<const double> row, std::size_t i) {
        for (std::size_t j = 0; j < k; ++j) zt[j] = teacher[i * k + j];
        return distill_loss(row, zt, labels[i], config);
    });
}

NoisyBatch corrupt(const Tensor& latents, const nets::SigmaSchedule& schedule, Rng& rng) {
    schedule.validate();
    require_shape(latents.rank() == 4, "corrupt expects latents [N,C,h,w]");
    NoisyBatch b;
    b.sigmas.resize(latents.dim(0));
    for (auto& s : b.sigmas) s = static_cast<float>(schedule.sample(rng));
    b.latents = nets::add_noise(latents, b.sigmas, rng);
    return b;
}

Variable noise_conditioned_loss(const nets::LatentClassifier& model, const Tensor& latents,
                                std::span<const std::uint32_t> labels, const nets::SigmaSchedule& schedule, Rng& rng) {
    const NoisyBatch b = corrupt(latents, schedule, rng);
    return cross_entropy(model.forward(Variable(b.latents), b.sigmas), labels);
}

}  // namespace lgap::losses
