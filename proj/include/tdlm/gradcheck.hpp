#pragma once

#include <functional>
#include <vector>

#include "tdlm/autodiff.hpp"

namespace tdlm {

/// Builds a scalar loss from the checked inputs on the given tape.
using ScalarFunction = std::function<Tensor(Tape&)>;

/// Maximum over all input elements of |analytic - numeric| / max(|a|, |n|, 1e-8),
/// where numeric is the central difference (f(x+h) - f(x-h)) / 2h. Inputs are
/// perturbed in place and restored. Never throws for a well-formed f.
double grad_check(const ScalarFunction& f, std::vector<Tensor> inputs, double h = 1e-6);

} // namespace tdlm
