#pragma once

#include <bit>
#include <cstdint>
#include <span>

namespace lowp {

enum class Rounding { Truncate, Stochastic };

// When quantization is applied during training:
//   PerBatch     - weights quantized after each mini-batch update
//   PerLayer     - additionally, every layer's output (forward and backward)
//   PerOperation - every elementary add/multiply result inside the kernels
//   None         - full binary32 everywhere
enum class Granularity { PerBatch, PerLayer, PerOperation, None };

// Reduced-precision format on top of the binary32 layout. The sign and all
// 8 exponent bits are always kept; only the number of retained mantissa bits
// varies. A total "bit size" of B corresponds to mantissa_bits = B - 9
// (e.g. the 16-bit filter keeps 7 mantissa bits).
struct PrecisionConfig {
    int mantissa_bits = 23;                       // in [0, 23]
    Rounding rounding = Rounding::Truncate;
    Granularity granularity = Granularity::PerBatch;

    int bitsize() const { return 1 + 8 + mantissa_bits; }

    static PrecisionConfig from_bitsize(int bits,
                                        Rounding r = Rounding::Truncate,
                                        Granularity g = Granularity::PerBatch) {
        return PrecisionConfig{bits - 9, r, g};
    }
};

// splitmix64: single 64-bit word of state, bit-exact on every platform.
// All derived draws (doubles, bounded ints) are built from next_u64() with
// fixed integer arithmetic only, so identical seeds give identical streams
// everywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    // 53-bit uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [-1, 1)
    float uniform_symmetric() {
        return static_cast<float>(2.0 * next_double() - 1.0);
    }

    // uniform in [0, n), n > 0; multiply-shift reduction (no modulo bias
    // worth worrying about at 64 bits, and fully deterministic)
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    std::uint64_t state() const { return state_; }

    // stateless scrambler, also used to derive independent sub-streams
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // deterministic stream key for (seed, salt) pairs, e.g. per-epoch shuffles
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
        return mix(seed ^ mix(salt + 0x9E3779B97F4A7C15ULL));
    }

  private:
    std::uint64_t state_;
};

// Zeroes the low (23 - mantissa_bits) mantissa bits of the binary32
// representation. Sign and exponent are untouched, so truncation moves the
// magnitude toward zero; NaN and +/-inf pass through unchanged.
float truncate(float x, const PrecisionConfig& cfg);

struct GridNeighbors {
    float lo;  // largest grid value <= x
    float hi;  // smallest grid value >= x
};

// Adjacent representable values at the reduced precision. On-grid inputs
// give lo == hi == x. For |x| above the largest finite grid point, the
// outward neighbor is +/-inf (the exponent field saturates).
GridNeighbors grid_neighbors(float x, const PrecisionConfig& cfg);

// Rounds to lo with probability (hi - x)/(hi - lo) and to hi with
// probability (x - lo)/(hi - lo), so the expectation over the rng stream
// equals x. On-grid values are returned unchanged.
float stochastic_round(float x, const PrecisionConfig& cfg, Rng& rng);

// Dispatch on cfg.rounding; identity when cfg.granularity == None.
float quantize(float x, const PrecisionConfig& cfg, Rng& rng);

// Element-wise, in place.
void quantize(std::span<float> values, const PrecisionConfig& cfg, Rng& rng);

inline std::uint32_t float_bits(float x) { return std::bit_cast<std::uint32_t>(x); }
inline float bits_float(std::uint32_t b) { return std::bit_cast<float>(b); }

}  // namespace lowp
