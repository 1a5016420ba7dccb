#include "omnisal/autograd.hpp"

#include <unordered_set>

namespace omnisal {

namespace {
thread_local bool g_grad_enabled = true;
thread_local MacCounter g_macs;
}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor::zeros(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (!node_->grad.empty()) return node_->grad;
    return Tensor::zeros(node_->value.shape());
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

MacCounter& mac_counter() { return g_macs; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!g_grad_enabled) return Var(std::move(node));
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return Var(std::move(node));
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (root.numel() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order DFS; the tape can be thousands of nodes deep.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

}  // namespace omnisal
