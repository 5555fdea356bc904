#include "mapu/special.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mapu/errors.hpp"

namespace mapu::special {

namespace {

constexpr double kShiftTo = 8.0;

void require_positive(const char* fn, double x) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw DomainError(std::string(fn) + " requires a finite x > 0, got " + std::to_string(x));
    }
}

}  // namespace

double lgamma(double x) {
    require_positive("lgamma", x);
    if (x == 1.0 || x == 2.0) return 0.0;
    // ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))
    double log_shift = 0.0;
    double prod = 1.0;
    while (x < kShiftTo) {
        prod *= x;
        x += 1.0;
        if (prod > 1e280) {
            log_shift += std::log(prod);
            prod = 1.0;
        }
    }
    log_shift += std::log(prod);

    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // B2/(1*2 x) + B4/(3*4 x^3) + ... + B12/(11*12 x^11)
    const double series =
        inv * (1.0 / 12.0 +
               inv2 * (-1.0 / 360.0 +
                       inv2 * (1.0 / 1260.0 +
                               inv2 * (-1.0 / 1680.0 + inv2 * (1.0 / 1188.0 + inv2 * (-691.0 / 360360.0))))));
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    return (x - 0.5) * std::log(x) - x + half_log_2pi + series - log_shift;
}

double digamma(double x) {
    require_positive("digamma", x);
    // ψ(x) = ψ(x + 1) - 1/x
    double acc = 0.0;
    while (x < kShiftTo) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    const double series =
        inv2 * (1.0 / 12.0 -
                inv2 * (1.0 / 120.0 -
                        inv2 * (1.0 / 252.0 -
                                inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
    require_positive("trigamma", x);
    // ψ'(x) = ψ'(x + 1) + 1/x^2
    double acc = 0.0;
    while (x < kShiftTo) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // 1/x + 1/(2x^2) + Σ B_2k / x^(2k+1)
    const double series =
        inv * inv2 *
        (1.0 / 6.0 -
         inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0))))));
    return acc + inv + 0.5 * inv2 + series;
}

}  // namespace mapu::special
