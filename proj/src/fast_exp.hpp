#pragma once

// Branch-free exp for softmax inputs, written so loops over it vectorize.

#include <bit>
#include <cstdint>

namespace stegattn::detail {

/// exp(x) for x in [-700, 0], within 2 ulp of std::exp. Softmax arguments
/// are max-shifted clamped logits, so they lie in [-2 * kLogitClamp, 0].
inline double exp_nonpositive(double x) {
    constexpr double log2e = 1.4426950408889634;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    // Adding 1.5 * 2^52 rounds to the nearest integer in the low mantissa bits.
    constexpr double shifter = 0x1.8p52;
    const double t = x * log2e + shifter;
    const double n = t - shifter;
    const double r = (x - n * ln2_hi) - n * ln2_lo;  // |r| <= ln2 / 2
    // Taylor series to r^12; the truncation error is below 2e-16 relative.
    double p = 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const auto bits = static_cast<std::uint64_t>(static_cast<std::int64_t>(n) + 1023) << 52;
    return p * std::bit_cast<double>(bits);
}

}  // namespace stegattn::detail
