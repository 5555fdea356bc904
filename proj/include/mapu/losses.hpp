#pragma once

#include <span>

#include "mapu/nets.hpp"
#include "mapu/tensor.hpp"

namespace mapu {

/// Probabilities are clamped to this floor inside logarithms, so 0 log 0 = 0.
inline constexpr double kProbFloor = 1e-12;

/// Label-smoothed cross-entropy, averaged over the batch. Targets are
/// (1 - eta) * onehot + eta / K.
Tensor smoothed_ce(const Tensor& logits, std::span<const int> labels, double eta);

/// Mean squared difference over every element.
Tensor imputation_mse(const FeatureMap& original, const FeatureMap& imputed);

/// Information maximization: mean per-row entropy minus entropy of the batch
/// mean distribution. DomainError if a row does not sum to 1 within 1e-6.
Tensor infomax_loss(const Tensor& probs);

/// -Σ p log p per row, [B, K] -> [B]. Shared by the entropy-style losses.
Tensor row_entropy(const Tensor& probs);
void check_probability_rows(const char* op, const Tensor& probs, double tol = 1e-6);

}  // namespace mapu
