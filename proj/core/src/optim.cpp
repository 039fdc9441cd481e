#include "lgap/optim.hpp"

#include <cmath>

namespace lgap::nn {

AdamW::AdamW(ParameterRefs params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->value.numel(), 0.0f);
        v_[i].assign(params_[i]->value.numel(), 0.0f);
    }
}

void AdamW::step() {
    ++steps_;
    double sq = 0.0;
    for (const Parameter* p : params_)
        for (float g : p->grad.values()) sq += static_cast<double>(g) * g;
    last_grad_norm_ = std::sqrt(sq);
    double clip = 1.0;
    if (config_.clip_norm > 0.0 && last_grad_norm_ > config_.clip_norm) clip = config_.clip_norm / last_grad_norm_;

    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const auto lr = static_cast<float>(config_.learning_rate);
    const auto b1 = static_cast<float>(config_.beta1);
    const auto b2 = static_cast<float>(config_.beta2);
    const auto step_size = static_cast<float>(config_.learning_rate / bc1);
    const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(config_.eps);
    const auto scale = static_cast<float>(clip);

    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.grad.numel() != p.value.numel()) continue;
        if (config_.weight_decay > 0.0 && p.value.rank() >= 2) {
            const auto decay = 1.0f - lr * static_cast<float>(config_.weight_decay);
            for (auto& w : p.value.values()) w *= decay;
        }
        float* w = p.value.data();
        const float* g = p.grad.data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const float gj = g[j] * scale;
            m[j] = b1 * m[j] + (1.0f - b1) * gj;
            v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
            w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
        }
        p.zero_grad();
    }
}

}  // namespace lgap::nn
