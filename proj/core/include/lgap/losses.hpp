#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgap/autograd.hpp"
#include "lgap/nets.hpp"
#include "lgap/rng.hpp"

namespace lgap::losses {

/// Loss value with its gradient w.r.t. the student logits.
struct LossGrad {
    double value = 0.0;
    std::vector<double> grad;
};

// ---------------------------------------------------------------------------
// Single-sample kernels (double precision).

/// Softmax cross-entropy with max subtraction.
LossGrad cross_entropy(std::span<const double> logits, std::size_t label);

struct LdamConfig {
    /// Largest per-class margin; C is chosen so that max_j C / n_j^(1/4) equals this.
    double max_margin = 0.5;
    double scale = 30.0;
    std::size_t drw_epoch = 10;
    double beta = 0.9999;

    void validate() const;
    friend bool operator==(const LdamConfig&, const LdamConfig&) = default;
};

void to_json(nlohmann::json& j, const LdamConfig& c);
void from_json(const nlohmann::json& j, LdamConfig& c);

/// Delta_j = C / n_j^(1/4).
std::vector<double> ldam_margins(std::span<const std::size_t> class_counts, double max_margin);
/// (1 - beta) / (1 - beta^n_j), normalized to mean 1 over classes.
std::vector<double> drw_weights(std::span<const std::size_t> class_counts, double beta);

/// Precomputed margins and deferred class weights for one training set.
struct LdamState {
    LdamConfig config;
    std::vector<double> margins;
    std::vector<double> weights;

    LdamState() = default;
    LdamState(std::span<const std::size_t> class_counts, const LdamConfig& config);
    double weight(std::size_t label, std::size_t epoch) const {
        return epoch >= config.drw_epoch ? weights[label] : 1.0;
    }
};

LossGrad ldam_loss(std::span<const double> logits, std::size_t label, const LdamState& state, std::size_t epoch);
LossGrad ldam_loss(std::span<const double> logits, std::size_t label, std::span<const std::size_t> class_counts,
                   const LdamConfig& config, std::size_t epoch);

struct DistillConfig {
    double alpha = 0.5;

    void validate() const;
    friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);

/// alpha * CE(z_s, c) + (1 - alpha) * ||z_s - z_t||^2.
LossGrad distill_loss(std::span<const double> student, std::span<const double> teacher, std::size_t label,
                      const DistillConfig& config);

// ---------------------------------------------------------------------------
// Batched, differentiable versions over logits [N, K]; each returns the mean
// of the per-sample losses.

nn::Variable cross_entropy(const nn::Variable& logits, std::span<const std::uint32_t> labels);
nn::Variable ldam_loss(const nn::Variable& logits, std::span<const std::uint32_t> labels, const LdamState& state,
                       std::size_t epoch);
nn::Variable distill_loss(const nn::Variable& student, const Tensor& teacher, std::span<const std::uint32_t> labels,
                          const DistillConfig& config);

/// One Monte-Carlo draw of E[CE(f(x + sigma eps, sigma), c)]: a sigma per
/// sample from `schedule`, then Gaussian corruption of the clean latents.
nn::Variable noise_conditioned_loss(const nets::LatentClassifier& model, const Tensor& latents,
                                    std::span<const std::uint32_t> labels, const nets::SigmaSchedule& schedule,
                                    Rng& rng);

/// Draws per-sample sigmas and the corrupted batch; shared by the loss above
/// and by training loops that combine noise with other objectives.
struct NoisyBatch {
    Tensor latents;
    std::vector<float> sigmas;
};
NoisyBatch corrupt(const Tensor& latents, const nets::SigmaSchedule& schedule, Rng& rng);

}  // namespace lgap::losses
