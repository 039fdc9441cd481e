#include "lgap/layers.hpp"

#include <cmath>

namespace lgap::nn {

void init_fan_in_uniform(Parameter& p, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : p.value.values()) v = static_cast<float>(rng.uniform(-bound, bound));
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    weight = {name + ".weight", Tensor({out, in}), {}};
    bias = {name + ".bias", Tensor({out}), {}};
    init_fan_in_uniform(weight, in, rng);
    init_fan_in_uniform(bias, in, rng);
}

void Linear::zero_init() {
    weight.value.fill(0.0f);
    bias.value.fill(0.0f);
}

Conv2d::Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
               std::size_t pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    weight = {name + ".weight", Tensor({out, in, kernel, kernel}), {}};
    bias = {name + ".bias", Tensor({out}), {}};
    init_fan_in_uniform(weight, in * kernel * kernel, rng);
    init_fan_in_uniform(bias, in * kernel * kernel, rng);
}

DepthwiseConv2d::DepthwiseConv2d(const std::string& name, std::size_t channels, std::size_t kernel, Rng& rng)
    : pad(kernel / 2) {
    weight = {name + ".weight", Tensor({channels, kernel, kernel}), {}};
    bias = {name + ".bias", Tensor({channels}), {}};
    init_fan_in_uniform(weight, kernel * kernel, rng);
    init_fan_in_uniform(bias, kernel * kernel, rng);
}

LayerNorm2d::LayerNorm2d(const std::string& name, std::size_t channels) {
    gamma = {name + ".gamma", Tensor({channels}, 1.0f), {}};
    beta = {name + ".beta", Tensor({channels}, 0.0f), {}};
}

}  // namespace lgap::nn
