#include "lowp/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace lowp {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

[[noreturn]] void dim_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw DimensionError(op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

[[noreturn]] void dim_error(const std::string& op, const Tensor& a) {
    throw DimensionError(op + ": bad shape " + a.shape_str());
}

// No-op quantizer for the full-precision instantiations.
struct NoQuant {
    float operator()(float v) const { return v; }
};

struct CtxQuant {
    const ArithContext& ctx;
    float operator()(float v) const { return quantize(v, ctx.cfg, *ctx.rng); }
};

template <class Q>
void matmul_impl(const Tensor& a, const Tensor& b, Tensor& out, Q q) {
    const std::size_t rows = a.shape[0], inner = a.shape[1], cols = b.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            float acc = 0.0f;
            for (std::size_t k = 0; k < inner; ++k) {
                acc = q(acc + q(a.at(i, k) * b.at(k, j)));
            }
            out.at(i, j) = acc;
        }
    }
}

template <class Q>
void conv2d_impl(const Tensor& in, const Tensor& ker, Tensor& out, Q q) {
    const std::size_t oh = out.shape[0], ow = out.shape[1];
    const std::size_t kh = ker.shape[0], kw = ker.shape[1];
    for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
            float acc = 0.0f;
            for (std::size_t m = 0; m < kh; ++m) {
                for (std::size_t n = 0; n < kw; ++n) {
                    acc = q(acc + q(in.at(i + m, j + n) * ker.at(m, n)));
                }
            }
            out.at(i, j) = acc;
        }
    }
}

template <class Q>
void conv2d_multi_impl(const Tensor& in, const Tensor& ker, Tensor& out, Q q) {
    const std::size_t channels = in.shape[0];
    const std::size_t filters = ker.shape[0], kh = ker.shape[2], kw = ker.shape[3];
    const std::size_t oh = out.shape[1], ow = out.shape[2];
    for (std::size_t f = 0; f < filters; ++f) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                float acc = 0.0f;
                for (std::size_t c = 0; c < channels; ++c) {
                    for (std::size_t m = 0; m < kh; ++m) {
                        for (std::size_t n = 0; n < kw; ++n) {
                            acc = q(acc + q(in.at(c, i + m, j + n) * ker.at(f, c, m, n)));
                        }
                    }
                }
                out.at(f, i, j) = acc;
            }
        }
    }
}

template <class Q, class F>
Tensor elementwise(const std::string& op, const Tensor& a, const Tensor& b, Q q, F f) {
    if (!a.same_shape(b)) dim_error(op, a, b);
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = q(f(a.data[i], b.data[i]));
    return out;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, float fill)
    : shape(std::move(s)), data(shape_product(shape), fill) {
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str());
    }
}

Tensor Tensor::row_major(std::vector<std::size_t> s, std::vector<float> values) {
    Tensor t(std::move(s));
    if (values.size() != t.size()) {
        throw DimensionError("row_major: " + std::to_string(values.size()) +
                             " values for shape " + t.shape_str());
    }
    t.data = std::move(values);
    return t;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor matmul(const Tensor& a, const Tensor& b, const ArithContext& ctx) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) dim_error("matmul", a, b);
    Tensor out({a.shape[0], b.shape[1]});
    if (ctx.per_op()) {
        matmul_impl(a, b, out, CtxQuant{ctx});
    } else {
        matmul_impl(a, b, out, NoQuant{});
    }
    return out;
}

Tensor conv2d_valid(const Tensor& input, const Tensor& kernel, const ArithContext& ctx) {
    if (input.rank() != 2 || kernel.rank() != 2) dim_error("conv2d_valid", input, kernel);
    if (kernel.shape[0] > input.shape[0] || kernel.shape[1] > input.shape[1]) {
        dim_error("conv2d_valid: kernel larger than input", input, kernel);
    }
    Tensor out({input.shape[0] - kernel.shape[0] + 1, input.shape[1] - kernel.shape[1] + 1});
    if (ctx.per_op()) {
        conv2d_impl(input, kernel, out, CtxQuant{ctx});
    } else {
        conv2d_impl(input, kernel, out, NoQuant{});
    }
    return out;
}

Tensor conv2d_valid_multi(const Tensor& input, const Tensor& kernels, const ArithContext& ctx) {
    if (input.rank() != 3 || kernels.rank() != 4 || kernels.shape[1] != input.shape[0]) {
        dim_error("conv2d_valid_multi", input, kernels);
    }
    if (kernels.shape[2] > input.shape[1] || kernels.shape[3] > input.shape[2]) {
        dim_error("conv2d_valid_multi: kernel larger than input", input, kernels);
    }
    Tensor out({kernels.shape[0], input.shape[1] - kernels.shape[2] + 1,
                input.shape[2] - kernels.shape[3] + 1});
    if (ctx.per_op()) {
        conv2d_multi_impl(input, kernels, out, CtxQuant{ctx});
    } else {
        conv2d_multi_impl(input, kernels, out, NoQuant{});
    }
    return out;
}

PoolResult maxpool2_with_argmax(const Tensor& input) {
    if (input.rank() != 2 || input.shape[0] < 2 || input.shape[1] < 2) {
        dim_error("maxpool2", input);
    }
    const std::size_t oh = input.shape[0] / 2, ow = input.shape[1] / 2;
    PoolResult r{Tensor({oh, ow}), {}};
    r.argmax.resize(oh * ow);
    for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
            std::size_t best = (2 * i) * input.shape[1] + 2 * j;
            float best_v = input.data[best];
            for (std::size_t m = 0; m < 2; ++m) {
                for (std::size_t n = 0; n < 2; ++n) {
                    const std::size_t idx = (2 * i + m) * input.shape[1] + (2 * j + n);
                    if (input.data[idx] > best_v) {  // ties keep the first seen
                        best_v = input.data[idx];
                        best = idx;
                    }
                }
            }
            r.output.at(i, j) = best_v;
            r.argmax[i * ow + j] = best;
        }
    }
    return r;
}

Tensor maxpool2(const Tensor& input) { return maxpool2_with_argmax(input).output; }

Tensor relu(const Tensor& t) {
    Tensor out(t.shape);
    for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = std::max(0.0f, t.data[i]);
    return out;
}

Tensor softmax_rows(const Tensor& t, const ArithContext& ctx) {
    if (t.rank() != 2) dim_error("softmax_rows", t);
    const std::size_t rows = t.shape[0], cols = t.shape[1];
    Tensor out(t.shape);
    for (std::size_t i = 0; i < rows; ++i) {
        float row_max = t.at(i, 0);
        for (std::size_t j = 1; j < cols; ++j) row_max = std::max(row_max, t.at(i, j));
        float sum = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) {
            const float e = ctx.q(std::exp(ctx.q(t.at(i, j) - row_max)));
            out.at(i, j) = e;
            sum = ctx.q(sum + e);
        }
        for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = ctx.q(out.at(i, j) / sum);
    }
    return out;
}

Tensor add_bias(const Tensor& t, const Tensor& bias, const ArithContext& ctx) {
    if (t.rank() != 2 || bias.rank() != 1 || bias.shape[0] != t.shape[1]) {
        dim_error("add_bias", t, bias);
    }
    Tensor out(t.shape);
    for (std::size_t i = 0; i < t.shape[0]; ++i) {
        for (std::size_t j = 0; j < t.shape[1]; ++j) {
            out.at(i, j) = ctx.q(t.at(i, j) + bias.at(j));
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, const ArithContext& ctx) {
    if (ctx.per_op()) {
        return elementwise("add", a, b, CtxQuant{ctx}, [](float x, float y) { return x + y; });
    }
    return elementwise("add", a, b, NoQuant{}, [](float x, float y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b, const ArithContext& ctx) {
    if (ctx.per_op()) {
        return elementwise("sub", a, b, CtxQuant{ctx}, [](float x, float y) { return x - y; });
    }
    return elementwise("sub", a, b, NoQuant{}, [](float x, float y) { return x - y; });
}

Tensor hadamard(const Tensor& a, const Tensor& b, const ArithContext& ctx) {
    if (ctx.per_op()) {
        return elementwise("hadamard", a, b, CtxQuant{ctx}, [](float x, float y) { return x * y; });
    }
    return elementwise("hadamard", a, b, NoQuant{}, [](float x, float y) { return x * y; });
}

Tensor scale(const Tensor& t, float s, const ArithContext& ctx) {
    Tensor out(t.shape);
    for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = ctx.q(t.data[i] * s);
    return out;
}

}  // namespace lowp
