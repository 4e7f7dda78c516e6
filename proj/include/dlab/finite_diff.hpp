#pragma once

#include <functional>
#include <map>
#include <string>

#include "dlab/tensor.hpp"

namespace dlab {

using ParamMap = std::map<std::string, DenseTensor>;

// Central-difference gradient check. For every coordinate of every entry in
// `analytic`, perturbs the matching parameter by +/- epsilon, evaluates f,
// and returns the worst relative disagreement
//     |analytic - central| / (|central| + 1e-8).
// A NaN from f propagates into the returned value.
double finite_diff_check(const std::function<double(const ParamMap&)>& f,
                         const ParamMap& params, const ParamMap& analytic,
                         double epsilon = 1e-3);

// Same central-difference sweep, but reports the worst absolute deviation
// relative to the largest central-difference magnitude in the checked set:
//     max_i |analytic_i - central_i| / (max_j |central_j| + 1e-8).
// Coordinates whose true derivative sits near zero contribute deviation but
// not denominator, so the result measures agreement at the gradient's scale.
double finite_diff_scale_error(const std::function<double(const ParamMap&)>& f,
                               const ParamMap& params, const ParamMap& analytic,
                               double epsilon = 1e-3);

}  // namespace dlab
