#pragma once

#include <functional>
#include <vector>

#include "trusttune/tensor.hpp"

namespace trusttune {

// Central finite-difference gradient check.
//
// `loss_eval(with_grad)` must rebuild the loss from the params' current
// values on a fresh graph; when `with_grad` it must also run backward so the
// analytic gradient lands in each param's grad buffer. Returns the maximum
// over all parameter entries of
//   |analytic - (f(x+h) - f(x-h)) / 2h| / max(1e-8, |analytic|, |numeric|).
// The loss is assumed smooth at the evaluation point.
double check_gradients(const std::function<double(bool)>& loss_eval,
                       const std::vector<Tensor*>& params, double h);

}  // namespace trusttune
