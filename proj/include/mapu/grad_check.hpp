#pragma once

#include <functional>
#include <vector>

#include "mapu/tensor.hpp"

namespace mapu {

/// Scalar-valued function of one or more tensors.
using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;  // which argument
    std::size_t worst_index = 0;  // flat index inside it
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares reverse-mode gradients of `f` at `point` against central
/// differences (f(x+h) - f(x-h)) / 2h, element by element. The relative error
/// uses max(|analytic|, 1e-8) as denominator. Throws NumericError if `f` is not
/// finite at a probe. Callers keep probes away from non-smooth points (relu
/// kinks) themselves.
GradCheckResult grad_check(const TensorFn& f, const std::vector<Tensor>& point, double h = 1e-5);

}  // namespace mapu
