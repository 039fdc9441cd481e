#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lgap/tensor.hpp"

namespace lgap::nn {

/// Trainable tensor owned by a model. `grad` is written by backward passes
/// through const forward calls, hence mutable; `value` is only changed by
/// optimizers and loaders.
struct Parameter {
    std::string name;
    Tensor value;
    mutable Tensor grad;

    void zero_grad() const { grad = Tensor{}; }
};

/// Thread-local switch for graph recording.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Node handle in a dynamically recorded computation graph.
class Variable {
public:
    using BackwardFn = std::function<void(const Tensor& grad_out, std::vector<Variable>& inputs)>;

    Variable() = default;
    /// Constant input; never receives gradient.
    explicit Variable(Tensor value);

    /// Leaf whose gradient accumulates into `p.grad`.
    static Variable from_parameter(const Parameter& p);

    /// Result of an op. Inputs and closure are kept only when recording is
    /// enabled and at least one input requires gradient.
    static Variable from_op(Tensor value, std::vector<Variable> inputs, BackwardFn backward);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const noexcept;

    /// Gradient accumulated by the last backward pass, or nullptr.
    const Tensor* grad() const;

    /// Zero-initialised gradient buffer for in-place accumulation by ops.
    Tensor& grad_buffer() const;
    void accumulate_grad(const Tensor& g) const;

private:
    struct Node;
    std::shared_ptr<Node> node_;

    friend void backward(const Variable& root);
};

/// Reverse-mode sweep from a scalar root, seeding d(root)/d(root) = 1.
void backward(const Variable& root);

}  // namespace lgap::nn
