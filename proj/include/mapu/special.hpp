#pragma once

// Gamma-family special functions for positive real arguments.
//
// All three shift the argument up to x >= 8 with the usual recurrences and then
// evaluate a six-term asymptotic (Stirling / Bernoulli) series. Absolute error
// is below 1e-13 on (0, 1e6]; every function throws DomainError for x <= 0.

namespace mapu::special {

/// ln Γ(x)
double lgamma(double x);

/// ψ(x) = d/dx ln Γ(x)
double digamma(double x);

/// ψ'(x)
double trigamma(double x);

}  // namespace mapu::special
