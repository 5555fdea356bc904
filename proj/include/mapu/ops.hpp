#pragma once

// Differentiable tensor operations. Elementwise binaries require equal shapes;
// broadcasting is explicit through broadcast_axis().

#include <cstddef>
#include <span>
#include <vector>

#include "mapu/tensor.hpp"

namespace mapu {

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
/// Natural log; DomainError on any non-positive entry.
Tensor log(const Tensor& x);
/// max(x, floor); gradient is passed only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);
/// ln(1 + e^x), evaluated as x + ln(1 + e^-x) above the overflow-safe threshold.
Tensor softplus(const Tensor& x);
double softplus(double x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

/// ln Γ(x), backward ψ(x).
Tensor lgamma(const Tensor& x);
/// ψ(x), backward ψ'(x).
Tensor digamma(const Tensor& x);

// ---- reductions and shape -------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums over one axis and drops it (a rank-1 input reduces to shape [1]).
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);
/// Inserts a new axis of extent n at `axis`, repeating the values.
Tensor broadcast_axis(const Tensor& x, std::size_t axis, std::size_t n);
Tensor reshape(const Tensor& x, Shape shape);

// ---- rows -----------------------------------------------------------------

/// Row-wise softmax of [B, K] logits, max-shifted.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

// ---- layers ---------------------------------------------------------------

/// x[B, F] · w[F, O] + b[O]
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

struct Padding {
    std::size_t left = 0;
    std::size_t right = 0;
};

/// Cross-correlation of x[B, Cin, L] with w[Cout, Cin, Kw] plus b[Cout].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, Padding pad);
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad);
/// Left/right padding that keeps the length at stride 1 (extra column goes right).
Padding same_padding(std::size_t kernel_width);

/// Applies w[F, O], b[O] independently at every time step of x[B, F, T].
Tensor time_dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// Single-layer tanh recurrence over x[B, F, T] from a zero state:
/// h_t = tanh(x_t · w_ih + h_{t-1} · w_hh + b). Returns [B, H, T].
Tensor rnn_tanh(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& b);

enum class Mode { train, eval };

struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;
};

struct BatchNormOptions {
    Mode mode = Mode::train;
    double momentum = 0.1;
    double eps = 1e-5;
    bool update_running = true;
};

/// Per-channel normalization of x[B, C, L]. Train mode uses biased batch
/// statistics and (optionally) folds the unbiased ones into `running`.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& running,
                 const BatchNormOptions& opts);

// ---- constants ------------------------------------------------------------

/// [B, K] one-hot rows; DomainError for labels outside [0, K).
Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace mapu
