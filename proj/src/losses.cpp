#include "mapu/losses.hpp"

#include <cmath>
#include <string>

#include "mapu/ops.hpp"

namespace mapu {

void check_probability_rows(const char* op, const Tensor& probs, double tol) {
    if (probs.rank() != 2) throw ShapeError(std::string(op) + ": expected [B, K] probabilities");
    const std::size_t rows = probs.dim(0), k = probs.dim(1);
    auto p = probs.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (p[r * k + j] < 0.0) throw DomainError(std::string(op) + ": negative probability");
            s += p[r * k + j];
        }
        if (std::abs(s - 1.0) > tol) {
            throw DomainError(std::string(op) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
        }
    }
}

Tensor row_entropy(const Tensor& probs) {
    return neg(sum_axis(mul(probs, log(clamp_min(probs, kProbFloor))), 1));
}

Tensor smoothed_ce(const Tensor& logits, std::span<const int> labels, double eta) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("smoothed_ce: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
    }
    if (!(eta >= 0.0 && eta < 1.0)) throw DomainError("smoothed_ce: eta must lie in [0, 1)");
    const std::size_t k = logits.dim(1);
    Tensor target = one_hot(labels, k);
    {
        auto t = target.mutable_data();
        for (double& v : t) v = (1.0 - eta) * v + eta / static_cast<double>(k);
    }
    Tensor per_row = sum_axis(mul(target, log_softmax(logits)), 1);
    return neg(mean(per_row));
}

Tensor imputation_mse(const FeatureMap& original, const FeatureMap& imputed) {
    if (original.value.shape() != imputed.value.shape()) {
        throw ShapeError("imputation_mse: " + shape_str(original.value.shape()) + " vs " +
                         shape_str(imputed.value.shape()));
    }
    return mean(square(sub(original.value, imputed.value)));
}

Tensor infomax_loss(const Tensor& probs) {
    check_probability_rows("infomax_loss", probs);
    Tensor conditional = mean(row_entropy(probs));
    Tensor marginal = reshape(mean_axis(probs, 0), {1, probs.dim(1)});
    return sub(conditional, row_entropy(marginal));
}

}  // namespace mapu
