#include "lgap/autograd.hpp"

#include <unordered_set>

#include "lgap/error.hpp"

namespace lgap::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

bool GradMode::enabled() noexcept { return t_grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { t_grad_enabled = on; }

struct Variable::Node {
    Tensor owned;
    const Parameter* param = nullptr;
    Tensor grad;
    std::vector<Variable> inputs;
    BackwardFn backward;
    bool requires_grad = false;

    const Tensor& value() const { return param ? param->value : owned; }
    Tensor& grad_ref() { return param ? param->grad : grad; }
};

Variable::Variable(Tensor value) : node_(std::make_shared<Node>()) { node_->owned = std::move(value); }

Variable Variable::from_parameter(const Parameter& p) {
    Variable v;
    v.node_ = std::make_shared<Node>();
    v.node_->param = &p;
    v.node_->requires_grad = GradMode::enabled();
    return v;
}

Variable Variable::from_op(Tensor value, std::vector<Variable> inputs, BackwardFn backward) {
    Variable v(std::move(value));
    if (!GradMode::enabled()) return v;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return v;
    v.node_->inputs = std::move(inputs);
    v.node_->backward = std::move(backward);
    v.node_->requires_grad = true;
    return v;
}

const Tensor& Variable::value() const {
    require(defined(), "use of undefined Variable");
    return node_->value();
}

bool Variable::requires_grad() const noexcept { return node_ && node_->requires_grad; }

const Tensor* Variable::grad() const {
    if (!node_) return nullptr;
    const Tensor& g = node_->grad_ref();
    return g.empty() ? nullptr : &g;
}

Tensor& Variable::grad_buffer() const {
    Tensor& g = node_->grad_ref();
    if (g.numel() != node_->value().numel()) g = Tensor(node_->value().shape(), 0.0f);
    return g;
}

void Variable::accumulate_grad(const Tensor& g) const {
    if (!requires_grad()) return;
    grad_buffer() += g;
}

void backward(const Variable& root) {
    require(root.defined(), "backward on undefined Variable");
    require(root.value().numel() == 1, "backward root must be a scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order of the recorded graph.
    std::vector<Variable::Node*> order;
    std::unordered_set<Variable::Node*> seen;
    std::vector<std::pair<Variable::Node*, std::size_t>> stack;
    stack.emplace_back(root.node_.get(), 0);
    seen.insert(root.node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Variable::Node* child = node->inputs[next++].node_.get();
            if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.grad_buffer().fill(1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Variable::Node* node = *it;
        if (!node->backward) continue;
        if (node->grad.empty()) continue;
        node->backward(node->grad, node->inputs);
        // Intermediate gradients are no longer needed once propagated.
        node->grad = Tensor{};
    }
}

}  // namespace lgap::nn
