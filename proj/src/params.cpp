#include "omnisal/params.hpp"

#include <cmath>
#include <stdexcept>

#include "omnisal/ops.hpp"

namespace omnisal {

Var ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Var(std::move(init), true)});
    return entries_.back().var;
}

Var ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].var;
}

int64_t ParamStore::count(std::string_view prefix) const {
    int64_t n = 0;
    for (const auto& e : entries_)
        if (std::string_view(e.name).substr(0, prefix.size()) == prefix) n += e.var.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
}

namespace init {

Tensor trunc_normal(const Shape& shape, double std, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.values()) v = rng.truncated_normal(std);
    return t;
}

Tensor kaiming_normal(const Shape& shape, Rng& rng) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (auto& v : t.values()) v = rng.normal() * std;
    return t;
}

}  // namespace init

Linear Linear::create(ParamStore& store, const std::string& name, int64_t in, int64_t out, bool bias, Rng& rng) {
    Linear l;
    l.weight = store.add(name + ".weight", init::trunc_normal({out, in}, 0.02, rng));
    if (bias) l.bias = store.add(name + ".bias", Tensor::zeros({out}));
    return l;
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, int64_t channels) {
    LayerNorm n;
    n.gamma = store.add(name + ".weight", Tensor::ones({channels}));
    n.beta = store.add(name + ".bias", Tensor::zeros({channels}));
    return n;
}

Var LayerNorm::operator()(const Var& x) const { return ops::layer_norm(x, gamma, beta); }

Conv2d Conv2d::create(ParamStore& store, const std::string& name, int64_t in, int64_t out, int64_t kernel, bool bias,
                      Rng& rng) {
    Conv2d c;
    c.weight = store.add(name + ".weight", init::kaiming_normal({out, in, kernel, kernel}, rng));
    if (bias) c.bias = store.add(name + ".bias", Tensor::zeros({out}));
    c.padding = kernel / 2;
    return c;
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight, bias, padding); }

}  // namespace omnisal
