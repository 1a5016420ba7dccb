#include "check.hpp"

#include <algorithm>
#include <cmath>

namespace omnisal::testing {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckResult finite_difference_check(const std::function<double()>& loss, Var& var,
                                        const std::vector<int64_t>& indices, double step) {
    GradCheckResult r;
    const Tensor analytic = var.grad();
    for (int64_t i : indices) {
        double& x = var.mutable_value()[i];
        const double saved = x;
        x = saved + step;
        const double up = loss();
        x = saved - step;
        const double down = loss();
        x = saved;
        const double err = relative_error(analytic[i], (up - down) / (2.0 * step));
        if (err > r.max_rel_error || r.worst_index < 0) {
            r.max_rel_error = std::max(r.max_rel_error, err);
            r.worst_index = i;
        }
        ++r.checked;
    }
    return r;
}

GradCheckResult gradcheck(const std::function<Var()>& build, std::vector<Var> inputs, Rng& rng, int samples,
                          double step) {
    for (auto& v : inputs) v.zero_grad();
    backward(build());
    const auto value = [&] {
        NoGradGuard guard;
        return build().value()[0];
    };
    GradCheckResult total;
    for (auto& v : inputs) {
        std::vector<int64_t> idx;
        if (v.numel() <= samples) {
            for (int64_t i = 0; i < v.numel(); ++i) idx.push_back(i);
        } else {
            for (int s = 0; s < samples; ++s) idx.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(v.numel()))));
        }
        auto r = finite_difference_check(value, v, idx, step);
        total.checked += r.checked;
        if (r.max_rel_error >= total.max_rel_error) {
            total.max_rel_error = r.max_rel_error;
            total.worst_index = r.worst_index;
        }
    }
    return total;
}

}  // namespace omnisal::testing
