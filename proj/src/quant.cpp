#include "lowp/quant.hpp"

#include <cassert>
#include <cmath>

namespace lowp {

namespace {

constexpr std::uint32_t kExponentMask = 0x7F800000u;

inline std::uint32_t mantissa_mask(int mantissa_bits) {
    // keep sign, exponent, and the top `mantissa_bits` of the mantissa
    return ~((1u << (23 - mantissa_bits)) - 1u);
}

}  // namespace

float truncate(float x, const PrecisionConfig& cfg) {
    assert(cfg.mantissa_bits >= 0 && cfg.mantissa_bits <= 23);
    if (cfg.mantissa_bits == 23) return x;
    std::uint32_t bits = float_bits(x);
    if ((bits & kExponentMask) == kExponentMask) return x;  // NaN / inf
    return bits_float(bits & mantissa_mask(cfg.mantissa_bits));
}

GridNeighbors grid_neighbors(float x, const PrecisionConfig& cfg) {
    if (std::isnan(x)) return {x, x};  // NaN != NaN would defeat the check below
    const float toward_zero = truncate(x, cfg);
    if (toward_zero == x) return {x, x};

    // Stepping the bit pattern by one grid unit walks to the next
    // representable value of the reduced format; mantissa overflow carries
    // into the exponent, which is exactly the binade crossing we want.
    const std::uint32_t step = 1u << (23 - cfg.mantissa_bits);
    const float away_from_zero = bits_float(float_bits(toward_zero) + step);
    if (x > 0.0f) return {toward_zero, away_from_zero};
    return {away_from_zero, toward_zero};
}

float stochastic_round(float x, const PrecisionConfig& cfg, Rng& rng) {
    const auto [lo, hi] = grid_neighbors(x, cfg);
    if (lo == hi) return x;
    // Both neighbors and x are binary32 values, so the gap arithmetic is
    // exact in binary64. A neighbor that saturated to +-inf gets probability
    // zero (p_hi is 0 when hi overflowed, and NaN when lo did); the draw
    // still happens so the stream stays aligned across values.
    double p_hi = (static_cast<double>(x) - lo) /
                  (static_cast<double>(hi) - static_cast<double>(lo));
    if (std::isnan(p_hi)) p_hi = 1.0;
    return rng.next_double() < p_hi ? hi : lo;
}

float quantize(float x, const PrecisionConfig& cfg, Rng& rng) {
    if (cfg.granularity == Granularity::None) return x;
    if (!std::isfinite(x)) return x;
    switch (cfg.rounding) {
        case Rounding::Truncate: return truncate(x, cfg);
        case Rounding::Stochastic: return stochastic_round(x, cfg, rng);
    }
    return x;
}

void quantize(std::span<float> values, const PrecisionConfig& cfg, Rng& rng) {
    if (cfg.granularity == Granularity::None) return;
    for (float& v : values) v = quantize(v, cfg, rng);
}

}  // namespace lowp
