#pragma once

// Dirichlet evidence statistics and the evidential objectives.
//
// Evidence e = softplus(logits), concentration α = e + 1, strength S = Σα,
// belief b = e / S, uncertainty u = K / S, expected probabilities p̂ = α / S.
// u + Σb = 1 holds row-wise.

#include <cstddef>

#include "mapu/tensor.hpp"

namespace mapu {

struct DirichletOutcome {
    Tensor evidence;     // [B, K]
    Tensor alpha;        // [B, K]
    Tensor strength;     // [B]
    Tensor belief;       // [B, K]
    Tensor uncertainty;  // [B]
    Tensor probs;        // [B, K]
};

DirichletOutcome dirichlet_stats(const Tensor& logits);
/// Same statistics from evidence given directly (must be >= 0).
DirichletOutcome dirichlet_from_evidence(const Tensor& evidence);

/// Σ_k y_k (ψ(S) - ψ(α_k)), batch mean. DomainError if any α < 1.
Tensor evd_ce(const Tensor& alpha, const Tensor& labels_onehot);

/// KL(Dir(α̃) || Dir(1, ..., 1)), batch mean. DomainError if any α̃ < 1.
Tensor kl_to_uniform(const Tensor& alpha_adjusted);

/// y + (1 - y) ⊙ α: sets the labelled class's concentration to 1.
Tensor adjust_alpha(const Tensor& alpha, const Tensor& labels_onehot);

/// Mean Shannon entropy of the rows of p̂.
Tensor evd_entropy(const Tensor& probs);

/// Σ_k p̄_k log p̄_k of the batch-mean distribution p̄ (minimizing it spreads
/// predictions over classes).
Tensor evd_diversity(const Tensor& probs);

/// Evidential loss against detached argmax pseudo-labels (ties go to the
/// lowest class index): evd_ce + λ · kl_to_uniform(adjusted α).
Tensor evd_selfsup(const Tensor& alpha, double lambda);

/// min(t / 10, 1) for 0-based epoch t.
double lambda_schedule(std::size_t epoch);

struct EvdWeights {
    double entropy = 0.5;    // γ1
    double diversity = 0.5;  // γ2
    double selfsup = 0.5;    // γ3
};

struct EvdLossTerms {
    Tensor total;
    Tensor entropy;    // unweighted
    Tensor diversity;  // unweighted
    Tensor selfsup;    // unweighted
};

/// γ1 · entropy + γ2 · diversity + γ3 · selfsup. With `literal_sums` the
/// entropy and diversity terms take the literal per-sample signs instead:
/// mean Σ p̂ log p̂ and mean -Σ p̂ log p̂.
EvdLossTerms evd_adaptation_loss(const DirichletOutcome& outcome, const EvdWeights& weights, double lambda,
                                 bool literal_sums = false);

}  // namespace mapu
