#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "omnisal/tensor.hpp"

namespace omnisal {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. The backward closure reads `grad`
/// and accumulates into each parent's grad.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

/// Handle to a value on the tape. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int64_t dim(int64_t axis) const { return node_->value.dim(axis); }
    int64_t numel() const { return node_->value.numel(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    /// Zero-filled when backward never reached this node.
    Tensor grad() const;
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad();

    const NodePtr& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    NodePtr node_;
};

/// Disables tape recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Builds the output var of an op. Records parents and the closure only when
/// recording is on and some parent requires grad.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and runs the tape in reverse topological order.
void backward(const Var& root);

/// Multiply-accumulate tallies for cost accounting. Linear and convolution
/// layers add to `layer`; attention score/value products add to `attention`.
struct MacCounter {
    int64_t layer = 0;
    int64_t attention = 0;
};

MacCounter& mac_counter();

}  // namespace omnisal
