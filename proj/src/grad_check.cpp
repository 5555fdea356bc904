#include "mapu/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mapu {

GradCheckResult grad_check(const TensorFn& f, const std::vector<Tensor>& point, double h) {
    std::vector<Tensor> args;
    args.reserve(point.size());
    for (const auto& p : point) {
        auto leaf = p.detach();
        leaf.set_requires_grad(true);
        args.push_back(leaf);
    }

    auto& tape = Tape::current();
    tape.clear();
    Tensor loss = f(args);
    backward(loss);
    tape.clear();

    auto probe = [&](std::size_t which, std::size_t idx, double delta) {
        NoGradGuard guard;
        std::vector<Tensor> moved;
        moved.reserve(args.size());
        for (const auto& a : args) moved.push_back(a.detach());
        moved[which].mutable_data()[idx] += delta;
        const double v = f(moved).item();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value at probe");
        return v;
    };

    GradCheckResult result;
    for (std::size_t a = 0; a < args.size(); ++a) {
        const auto analytic = args[a].grad();
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double numeric = (probe(a, i, h) - probe(a, i, -h)) / (2.0 * h);
            const double rel = std::abs(numeric - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
            if (rel > result.max_rel_error || (a == 0 && i == 0)) {
                result = {rel, a, i, analytic[i], numeric};
            }
        }
    }
    return result;
}

}  // namespace mapu
