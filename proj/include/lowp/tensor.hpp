#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "lowp/quant.hpp"

namespace lowp {

class DimensionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor of binary32 scalars. data.size() always equals the
// shape product; every kernel validates shapes before touching data.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, float fill = 0.0f);
    Tensor(std::initializer_list<std::size_t> s, float fill = 0.0f)
        : Tensor(std::vector<std::size_t>(s), fill) {}

    static Tensor row_major(std::vector<std::size_t> s, std::vector<float> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }

    float& at(std::size_t i) { return data[i]; }
    const float& at(std::size_t i) const { return data[i]; }
    float& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const float& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    float& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const float& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    float& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const float& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

// Quantization context threaded through the kernels. Under PerOperation
// granularity every elementary add/multiply result is quantized before
// further use; under any other granularity the kernels compute in full
// binary32 and quantization happens outside.
struct ArithContext {
    PrecisionConfig cfg;
    Rng* rng = nullptr;

    bool per_op() const { return cfg.granularity == Granularity::PerOperation; }

    float q(float v) const { return per_op() ? quantize(v, cfg, *rng) : v; }

    static ArithContext full_precision() {
        return ArithContext{PrecisionConfig{23, Rounding::Truncate, Granularity::None}, nullptr};
    }
};

// a[r x k] * b[k x c]. Fixed accumulation order: left-to-right running sum
// over k, so results are bit-reproducible and PerOperation truncation has a
// defined elementary-operation sequence.
Tensor matmul(const Tensor& a, const Tensor& b, const ArithContext& ctx);

// Valid-mode cross-correlation (no kernel flip):
//   out(i, j) = sum_m sum_n in(i + m, j + n) * k(m, n)
Tensor conv2d_valid(const Tensor& input, const Tensor& kernel, const ArithContext& ctx);

// Multi-channel variant: input [C x H x W], kernels [F x C x M x N],
// one output plane per filter, summed over input channels.
Tensor conv2d_valid_multi(const Tensor& input, const Tensor& kernels, const ArithContext& ctx);

// 2x2 non-overlapping max; trailing odd row/column dropped. Selection only,
// never quantized.
Tensor maxpool2(const Tensor& input);

// Same, also reporting the flat input offset of each selected element
// (the row-major index into `input`), for gradient routing.
struct PoolResult {
    Tensor output;
    std::vector<std::size_t> argmax;  // one entry per output element
};
PoolResult maxpool2_with_argmax(const Tensor& input);

// max(0, x) elementwise; selection, not arithmetic, so never quantized.
Tensor relu(const Tensor& t);

// Row-stable softmax: subtracts the row max (the subtraction itself is an
// elementary op and quantized under PerOperation), exponentiates, normalizes.
Tensor softmax_rows(const Tensor& t, const ArithContext& ctx);

// rows[r x c] + bias[c], broadcast over rows.
Tensor add_bias(const Tensor& t, const Tensor& bias, const ArithContext& ctx);

Tensor add(const Tensor& a, const Tensor& b, const ArithContext& ctx);
Tensor sub(const Tensor& a, const Tensor& b, const ArithContext& ctx);
Tensor hadamard(const Tensor& a, const Tensor& b, const ArithContext& ctx);
Tensor scale(const Tensor& t, float s, const ArithContext& ctx);

}  // namespace lowp
