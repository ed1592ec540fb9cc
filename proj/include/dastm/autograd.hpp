#pragma once

#include <functional>
#include <vector>

#include "dastm/tensor.hpp"

namespace dastm {

/// Reverse-mode sweep from a scalar output. Gradients accumulate into every
/// reachable leaf that requires one. Throws DimensionError for non-scalars.
void backward(const Tensor4& output);

/// Zeroes the parameter gradients, runs backward(output) and returns one
/// gradient vector per parameter in ParamSet order (zeros when unreachable).
std::vector<std::vector<double>> backprop(const Tensor4& output, ParamSet& params);

/// Central-difference check of backprop against fn. fn must rebuild its graph
/// from the current parameter values on every call. Returns the maximum over
/// all coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const std::function<Tensor4()>& fn, ParamSet& params, double eps);

}  // namespace dastm
