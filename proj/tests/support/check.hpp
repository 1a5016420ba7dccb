#pragma once

#include <functional>
#include <vector>

#include "omnisal/autograd.hpp"
#include "omnisal/rng.hpp"

namespace omnisal::testing {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
    int64_t worst_index = -1;
};

/// Compares var.grad() (already populated by a backward pass of `loss`) with
/// central differences of `loss` at the given flat indices.
GradCheckResult finite_difference_check(const std::function<double()>& loss, Var& var,
                                        const std::vector<int64_t>& indices, double step = 1e-5);

/// Runs backward on a fresh evaluation, then checks up to `samples` random
/// entries of every input.
GradCheckResult gradcheck(const std::function<Var()>& build, std::vector<Var> inputs, Rng& rng, int samples = 20,
                          double step = 1e-5);

/// |a - n| / max(|a|, |n|, floor): the floor keeps near-zero gradients from
/// turning rounding noise into huge relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-6);

}  // namespace omnisal::testing
