#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lgap/autograd.hpp"
#include "lgap/ops.hpp"
#include "lgap/rng.hpp"

namespace lgap::nn {

using ParameterRefs = std::vector<Parameter*>;
using ConstParameterRefs = std::vector<const Parameter*>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
void init_fan_in_uniform(Parameter& p, std::size_t fan_in, Rng& rng);

inline Variable var(const Parameter& p) { return Variable::from_parameter(p); }

struct Linear {
    Parameter weight;  // [out, in]
    Parameter bias;    // [out]

    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

    std::size_t in_features() const { return weight.value.dim(1); }
    std::size_t out_features() const { return weight.value.dim(0); }

    Variable forward(const Variable& x) const { return linear(x, var(weight), var(bias)); }
    void zero_init();

    template <class F>
    void visit(F&& f) {
        f(weight);
        f(bias);
    }
    template <class F>
    void visit(F&& f) const {
        f(weight);
        f(bias);
    }
};

struct Conv2d {
    Parameter weight;  // [out, in, k, k]
    Parameter bias;    // [out]
    std::size_t stride = 1;
    std::size_t pad = 0;

    Conv2d() = default;
    Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
           std::size_t pad, Rng& rng);

    Variable forward(const Variable& x) const { return conv2d(x, var(weight), var(bias), stride, pad); }

    template <class F>
    void visit(F&& f) {
        f(weight);
        f(bias);
    }
    template <class F>
    void visit(F&& f) const {
        f(weight);
        f(bias);
    }
};

struct DepthwiseConv2d {
    Parameter weight;  // [channels, k, k]
    Parameter bias;    // [channels]
    std::size_t pad = 0;

    DepthwiseConv2d() = default;
    DepthwiseConv2d(const std::string& name, std::size_t channels, std::size_t kernel, Rng& rng);

    Variable forward(const Variable& x) const { return depthwise_conv2d(x, var(weight), var(bias), pad); }

    template <class F>
    void visit(F&& f) {
        f(weight);
        f(bias);
    }
    template <class F>
    void visit(F&& f) const {
        f(weight);
        f(bias);
    }
};

/// Channel LayerNorm for NCHW maps.
struct LayerNorm2d {
    Parameter gamma;
    Parameter beta;

    LayerNorm2d() = default;
    LayerNorm2d(const std::string& name, std::size_t channels);

    Variable forward(const Variable& x) const { return layer_norm_channels(x, var(gamma), var(beta)); }

    template <class F>
    void visit(F&& f) {
        f(gamma);
        f(beta);
    }
    template <class F>
    void visit(F&& f) const {
        f(gamma);
        f(beta);
    }
};

template <class Module>
ParameterRefs parameters_of(Module& m) {
    ParameterRefs out;
    m.visit([&](Parameter& p) { out.push_back(&p); });
    return out;
}

template <class Module>
ConstParameterRefs parameters_of(const Module& m) {
    ConstParameterRefs out;
    m.visit([&](const Parameter& p) { out.push_back(&p); });
    return out;
}

template <class Module>
std::size_t parameter_count(const Module& m) {
    std::size_t n = 0;
    m.visit([&](const Parameter& p) { n += p.value.numel(); });
    return n;
}

template <class Module>
void zero_grad(const Module& m) {
    m.visit([](const Parameter& p) { p.zero_grad(); });
}

/// Bit-exact comparison of every parameter value.
template <class Module>
bool same_parameters(const Module& a, const Module& b) {
    const auto pa = parameters_of(a);
    const auto pb = parameters_of(b);
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!(pa[i]->value == pb[i]->value)) return false;
    return true;
}

}  // namespace lgap::nn
