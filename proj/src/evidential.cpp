#include "mapu/evidential.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "mapu/losses.hpp"
#include "mapu/ops.hpp"
#include "mapu/special.hpp"

namespace mapu {

namespace {

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected [B, K], got " + shape_str(t.shape()));
}

void require_at_least_one(const char* op, const Tensor& alpha) {
    require_rank2(op, alpha);
    for (double a : alpha.data()) {
        if (!(a >= 1.0)) throw DomainError(std::string(op) + ": concentration below 1 (" + std::to_string(a) + ")");
    }
}

void require_one_hot(const char* op, const Tensor& y, const Shape& shape) {
    if (y.shape() != shape) throw ShapeError(std::string(op) + ": label shape " + shape_str(y.shape()));
    const std::size_t k = shape[1];
    auto v = y.data();
    for (std::size_t r = 0; r < shape[0]; ++r) {
        int ones = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const double x = v[r * k + j];
            if (x == 1.0) {
                ++ones;
            } else if (x != 0.0) {
                ones = -1;
                break;
            }
        }
        if (ones != 1) throw DomainError(std::string(op) + ": row " + std::to_string(r) + " is not one-hot");
    }
}

Tensor row_broadcast(const Tensor& per_row, std::size_t k) { return broadcast_axis(per_row, 1, k); }

}  // namespace

DirichletOutcome dirichlet_from_evidence(const Tensor& evidence) {
    require_rank2("dirichlet_from_evidence", evidence);
    for (double e : evidence.data()) {
        if (e < 0.0) throw DomainError("dirichlet_from_evidence: negative evidence");
    }
    const std::size_t rows = evidence.dim(0), k = evidence.dim(1);
    DirichletOutcome out;
    out.evidence = evidence;
    out.alpha = add_scalar(evidence, 1.0);
    out.strength = sum_axis(out.alpha, 1);
    Tensor s = row_broadcast(out.strength, k);
    out.belief = div(evidence, s);
    out.probs = div(out.alpha, s);
    out.uncertainty = div(Tensor::full({rows}, static_cast<double>(k)), out.strength);
    return out;
}

DirichletOutcome dirichlet_stats(const Tensor& logits) {
    require_rank2("dirichlet_stats", logits);
    return dirichlet_from_evidence(softplus(logits));
}

Tensor evd_ce(const Tensor& alpha, const Tensor& labels_onehot) {
    require_at_least_one("evd_ce", alpha);
    require_one_hot("evd_ce", labels_onehot, alpha.shape());
    const std::size_t k = alpha.dim(1);
    Tensor psi_s = row_broadcast(digamma(sum_axis(alpha, 1)), k);
    Tensor per_row = sum_axis(mul(labels_onehot, sub(psi_s, digamma(alpha))), 1);
    return mean(per_row);
}

Tensor kl_to_uniform(const Tensor& alpha_adjusted) {
    require_at_least_one("kl_to_uniform", alpha_adjusted);
    const std::size_t k = alpha_adjusted.dim(1);
    Tensor s = sum_axis(alpha_adjusted, 1);
    // ln Γ(S) - ln Γ(K) - Σ ln Γ(α_k)
    Tensor log_norm = add_scalar(sub(lgamma(s), sum_axis(lgamma(alpha_adjusted), 1)),
                                 -special::lgamma(static_cast<double>(k)));
    // Σ (α_k - 1)(ψ(α_k) - ψ(S))
    Tensor cross = sum_axis(
        mul(add_scalar(alpha_adjusted, -1.0), sub(digamma(alpha_adjusted), row_broadcast(digamma(s), k))), 1);
    return mean(add(log_norm, cross));
}

Tensor adjust_alpha(const Tensor& alpha, const Tensor& labels_onehot) {
    require_rank2("adjust_alpha", alpha);
    require_one_hot("adjust_alpha", labels_onehot, alpha.shape());
    std::vector<double> keep(labels_onehot.numel());
    auto y = labels_onehot.data();
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = 1.0 - y[i];
    return add(mul(Tensor::from(alpha.shape(), std::move(keep)), alpha), labels_onehot);
}

Tensor evd_entropy(const Tensor& probs) {
    check_probability_rows("evd_entropy", probs);
    return mean(row_entropy(probs));
}

Tensor evd_diversity(const Tensor& probs) {
    check_probability_rows("evd_diversity", probs);
    Tensor marginal = reshape(mean_axis(probs, 0), {1, probs.dim(1)});
    return neg(row_entropy(marginal));
}

Tensor evd_selfsup(const Tensor& alpha, double lambda) {
    require_at_least_one("evd_selfsup", alpha);
    const std::size_t rows = alpha.dim(0), k = alpha.dim(1);
    std::vector<int> pseudo(rows);
    auto a = alpha.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.data() + r * k;
        pseudo[r] = static_cast<int>(std::max_element(row, row + k) - row);  // first maximum
    }
    Tensor y = one_hot(pseudo, k);
    return add(evd_ce(alpha, y), scale(kl_to_uniform(adjust_alpha(alpha, y)), lambda));
}

double lambda_schedule(std::size_t epoch) { return std::min(static_cast<double>(epoch) / 10.0, 1.0); }

EvdLossTerms evd_adaptation_loss(const DirichletOutcome& outcome, const EvdWeights& w, double lambda,
                                 bool literal_sums) {
    if (w.entropy < 0.0 || w.diversity < 0.0 || w.selfsup < 0.0) {
        throw DomainError("evd_adaptation_loss: weights must be non-negative");
    }
    EvdLossTerms t;
    if (literal_sums) {
        Tensor h = evd_entropy(outcome.probs);
        t.entropy = neg(h);
        t.diversity = h;
    } else {
        t.entropy = evd_entropy(outcome.probs);
        t.diversity = evd_diversity(outcome.probs);
    }
    t.selfsup = evd_selfsup(outcome.alpha, lambda);
    t.total = add(add(scale(t.entropy, w.entropy), scale(t.diversity, w.diversity)), scale(t.selfsup, w.selfsup));
    return t;
}

}  // namespace mapu
