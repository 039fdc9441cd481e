#pragma once

#include <cstddef>
#include <vector>

#include "lgap/layers.hpp"

namespace lgap::nn {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Decoupled decay, applied to parameters of rank >= 2 only.
    double weight_decay = 0.0;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
};

class AdamW {
public:
    AdamW(ParameterRefs params, AdamWConfig config);

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without gradient are left untouched.
    void step();

    std::size_t steps() const noexcept { return steps_; }
    const AdamWConfig& config() const noexcept { return config_; }
    void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }

    /// L2 norm of the gradients seen by the last step, before clipping.
    double last_grad_norm() const noexcept { return last_grad_norm_; }

private:
    ParameterRefs params_;
    AdamWConfig config_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::size_t steps_ = 0;
    double last_grad_norm_ = 0.0;
};

}  // namespace lgap::nn
