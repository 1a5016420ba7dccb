#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "omnisal/autograd.hpp"
#include "omnisal/rng.hpp"

namespace omnisal {

/// Ordered registry of trainable tensors, keyed by dotted names such as
/// `backbone.blocks.3.attn.qkv.weight`. Registration order is the
/// serialization and optimizer order.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Var var;
    };

    Var add(const std::string& name, Tensor init);
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    size_t size() const noexcept { return entries_.size(); }

    /// Scalar count of every parameter whose name starts with `prefix`.
    int64_t count(std::string_view prefix = "") const;
    void zero_grad();

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

namespace init {
Tensor trunc_normal(const Shape& shape, double std, Rng& rng);
/// He-normal for ReLU convolutions: std = sqrt(2 / fan_in).
Tensor kaiming_normal(const Shape& shape, Rng& rng);
}  // namespace init

struct Linear {
    Var weight;  // (out, in)
    Var bias;    // (out) or empty

    static Linear create(ParamStore& store, const std::string& name, int64_t in, int64_t out, bool bias, Rng& rng);
    Var operator()(const Var& x) const;
};

struct LayerNorm {
    Var gamma;
    Var beta;

    static LayerNorm create(ParamStore& store, const std::string& name, int64_t channels);
    Var operator()(const Var& x) const;
};

struct Conv2d {
    Var weight;  // (out, in, k, k)
    Var bias;
    int64_t padding = 0;

    /// Same-size convolution (padding k / 2).
    static Conv2d create(ParamStore& store, const std::string& name, int64_t in, int64_t out, int64_t kernel,
                         bool bias, Rng& rng);
    Var operator()(const Var& x) const;
};

}  // namespace omnisal
