#include "lowp/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

namespace lowp {

namespace {

constexpr std::uint64_t kQuantStreamSalt = 0x714E7A3D21B6C0DEULL;

struct NoQuant {
    float operator()(float v) const { return v; }
};

struct CtxQuant {
    const ArithContext& ctx;
    float operator()(float v) const { return quantize(v, ctx.cfg, *ctx.rng); }
};

bool per_layer(const ArithContext& ctx) {
    return ctx.cfg.granularity == Granularity::PerLayer;
}

void quantize_tensor(Tensor& t, const ArithContext& ctx) {
    quantize(std::span<float>(t.data), ctx.cfg, *ctx.rng);
}

void quantize_all(Params& p, const ArithContext& ctx) {
    p.for_each_tensor([&](Tensor& t) { quantize_tensor(t, ctx); });
}

[[noreturn]] void contract_error(const std::string& what) {
    throw std::invalid_argument("network: " + what);
}

// --- batched conv/pool kernels --------------------------------------------
// Sample-by-sample, row-major, left-to-right accumulation so PerOperation
// quantization and bit-reproducibility have a defined operation sequence.

template <class Q>
void conv_forward_batch(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& z, Q q) {
    const std::size_t batch = in.shape[0], channels = in.shape[1];
    const std::size_t ih = in.shape[2], iw = in.shape[3];
    const std::size_t filters = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const std::size_t oh = z.shape[2], ow = z.shape[3];
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t f = 0; f < filters; ++f) {
            for (std::size_t i = 0; i < oh; ++i) {
                for (std::size_t j = 0; j < ow; ++j) {
                    float acc = 0.0f;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const float* in_plane = &in.data[(s * channels + c) * ih * iw];
                        const float* w_plane = &w.data[(f * channels + c) * kh * kw];
                        for (std::size_t m = 0; m < kh; ++m) {
                            const float* in_row = in_plane + (i + m) * iw + j;
                            const float* w_row = w_plane + m * kw;
                            for (std::size_t n = 0; n < kw; ++n) {
                                acc = q(acc + q(in_row[n] * w_row[n]));
                            }
                        }
                    }
                    z.at(s, f, i, j) = q(acc + b.at(f));
                }
            }
        }
    }
}

void pool_forward_batch(const Tensor& a, Tensor& pooled, std::vector<std::size_t>& argmax) {
    const std::size_t batch = a.shape[0], filters = a.shape[1];
    const std::size_t ih = a.shape[2], iw = a.shape[3];
    const std::size_t oh = pooled.shape[2], ow = pooled.shape[3];
    argmax.assign(pooled.size(), 0);
    std::size_t out_idx = 0;
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t f = 0; f < filters; ++f) {
            const std::size_t plane = (s * filters + f) * ih * iw;
            for (std::size_t i = 0; i < oh; ++i) {
                for (std::size_t j = 0; j < ow; ++j) {
                    std::size_t best = plane + (2 * i) * iw + 2 * j;
                    float best_v = a.data[best];
                    for (std::size_t m = 0; m < 2; ++m) {
                        for (std::size_t n = 0; n < 2; ++n) {
                            const std::size_t idx = plane + (2 * i + m) * iw + (2 * j + n);
                            if (a.data[idx] > best_v) {
                                best_v = a.data[idx];
                                best = idx;
                            }
                        }
                    }
                    pooled.data[out_idx] = best_v;
                    argmax[out_idx] = best;
                    ++out_idx;
                }
            }
        }
    }
}

template <class Q>
void conv_backward_batch(const Tensor& in, const Tensor& w, const Tensor& dz, Tensor& dw,
                         Tensor& db, Tensor* din, Q q) {
    const std::size_t batch = in.shape[0], channels = in.shape[1];
    const std::size_t iw = in.shape[3];
    const std::size_t filters = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const std::size_t oh = dz.shape[2], ow = dz.shape[3];
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t f = 0; f < filters; ++f) {
            for (std::size_t i = 0; i < oh; ++i) {
                for (std::size_t j = 0; j < ow; ++j) {
                    const float g = dz.at(s, f, i, j);
                    db.at(f) = q(db.at(f) + g);
                    for (std::size_t c = 0; c < channels; ++c) {
                        const float* in_row0 = &in.at(s, c, i, j);
                        float* dw_plane = &dw.at(f, c, 0, 0);
                        const float* w_plane = &w.at(f, c, 0, 0);
                        float* din_row0 = din ? &din->at(s, c, i, j) : nullptr;
                        for (std::size_t m = 0; m < kh; ++m) {
                            const float* in_row = in_row0 + m * iw;
                            float* dw_row = dw_plane + m * kw;
                            for (std::size_t n = 0; n < kw; ++n) {
                                dw_row[n] = q(dw_row[n] + q(g * in_row[n]));
                            }
                            if (din) {
                                float* din_row = din_row0 + m * iw;
                                const float* w_row = w_plane + m * kw;
                                for (std::size_t n = 0; n < kw; ++n) {
                                    din_row[n] = q(din_row[n] + q(g * w_row[n]));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// Routes each pooled-cell gradient back to the element that won the max.
// Windows are disjoint, so plain stores suffice.
Tensor pool_backward(const Tensor& dpooled, const std::vector<std::size_t>& argmax,
                     const std::vector<std::size_t>& pre_pool_shape) {
    Tensor da(pre_pool_shape);
    for (std::size_t i = 0; i < dpooled.size(); ++i) {
        da.data[argmax[i]] = dpooled.data[i];
    }
    return da;
}

Tensor relu_backward(const Tensor& upstream, const Tensor& z) {
    Tensor out(upstream.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = z.data[i] > 0.0f ? upstream.data[i] : 0.0f;
    }
    return out;
}

Tensor transpose(const Tensor& t) {
    Tensor out({t.shape[1], t.shape[0]});
    for (std::size_t i = 0; i < t.shape[0]; ++i) {
        for (std::size_t j = 0; j < t.shape[1]; ++j) {
            out.at(j, i) = t.at(i, j);
        }
    }
    return out;
}

Tensor column_sums(const Tensor& t, const ArithContext& ctx) {
    Tensor out({t.shape[1]});
    for (std::size_t j = 0; j < t.shape[1]; ++j) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < t.shape[0]; ++i) {
            acc = ctx.q(acc + t.at(i, j));
        }
        out.at(j) = acc;
    }
    return out;
}

Tensor reshape(const Tensor& t, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape));
    if (out.size() != t.size()) contract_error("reshape size mismatch");
    out.data = t.data;
    return out;
}

// [B x H x W] batches get an implicit single channel.
Tensor as_batched_channels(const NetworkSpec& spec, const Tensor& batch_images) {
    if (batch_images.rank() == 4) {
        if (batch_images.shape[1] != spec.input_channels ||
            batch_images.shape[2] != spec.input_h || batch_images.shape[3] != spec.input_w) {
            contract_error("batch shape " + batch_images.shape_str() + " does not match spec");
        }
        return batch_images;
    }
    if (batch_images.rank() != 3 || spec.input_channels != 1 ||
        batch_images.shape[1] != spec.input_h || batch_images.shape[2] != spec.input_w) {
        contract_error("batch shape " + batch_images.shape_str() + " does not match spec");
    }
    return reshape(batch_images,
                   {batch_images.shape[0], 1, batch_images.shape[1], batch_images.shape[2]});
}

Params zero_params(const NetworkSpec& spec) {
    Params p;
    std::size_t channels = spec.input_channels;
    for (const auto& layer : spec.conv_layers) {
        p.conv_w.emplace_back(
            std::vector<std::size_t>{layer.filters, channels, layer.kernel_h, layer.kernel_w});
        p.conv_b.emplace_back(std::vector<std::size_t>{layer.filters});
        channels = layer.filters;
    }
    std::size_t in = spec.flatten_size();
    for (std::size_t i = 0; i < spec.dense_layers; ++i) {
        p.dense_w.emplace_back(std::vector<std::size_t>{in, spec.dense_units});
        p.dense_b.emplace_back(std::vector<std::size_t>{spec.dense_units});
        in = spec.dense_units;
    }
    p.dense_w.emplace_back(std::vector<std::size_t>{in, spec.classes});
    p.dense_b.emplace_back(std::vector<std::size_t>{spec.classes});
    return p;
}

}  // namespace

void NetworkSpec::validate() const {
    if (dense_layers < 1 || dense_layers > 5) {
        throw std::invalid_argument("dense_layers must be in [1, 5], got " +
                                    std::to_string(dense_layers));
    }
    if (dense_units == 0 || classes == 0 || input_channels == 0) {
        throw std::invalid_argument("dense_units, classes and input_channels must be positive");
    }
    std::size_t h = input_h, w = input_w;
    for (std::size_t k = 0; k < conv_layers.size(); ++k) {
        const auto& layer = conv_layers[k];
        if (layer.filters == 0) {
            throw std::invalid_argument("conv layer " + std::to_string(k) + " has zero filters");
        }
        if (layer.kernel_h > h || layer.kernel_w > w) {
            throw std::invalid_argument("conv layer " + std::to_string(k) + " kernel " +
                                        std::to_string(layer.kernel_h) + "x" +
                                        std::to_string(layer.kernel_w) +
                                        " exceeds input " + std::to_string(h) + "x" +
                                        std::to_string(w));
        }
        h = h - layer.kernel_h + 1;
        w = w - layer.kernel_w + 1;
        if (h < 2 || w < 2) {
            throw std::invalid_argument("conv layer " + std::to_string(k) +
                                        " output too small to pool: " + std::to_string(h) + "x" +
                                        std::to_string(w));
        }
        h /= 2;
        w /= 2;
    }
}

std::size_t NetworkSpec::flatten_size() const {
    std::size_t h = input_h, w = input_w, channels = input_channels;
    for (const auto& layer : conv_layers) {
        h = (h - layer.kernel_h + 1) / 2;
        w = (w - layer.kernel_w + 1) / 2;
        channels = layer.filters;
    }
    return h * w * channels;
}

bool Params::all_finite() const {
    auto finite = [](const Tensor& t) {
        for (float v : t.data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    };
    for (const auto& t : conv_w) {
        if (!finite(t)) return false;
    }
    for (const auto& t : conv_b) {
        if (!finite(t)) return false;
    }
    for (const auto& t : dense_w) {
        if (!finite(t)) return false;
    }
    for (const auto& t : dense_b) {
        if (!finite(t)) return false;
    }
    return true;
}

Params init_weights(const NetworkSpec& spec, const TrainConfig& cfg) {
    spec.validate();
    if (cfg.init_perturbation < 0.0f) {
        throw std::invalid_argument("init_perturbation must be >= 0");
    }
    Params p = zero_params(spec);
    Rng rng(cfg.seed);
    // weights drawn in tensor order, row-major within each tensor; biases stay zero
    auto fill = [&](Tensor& t) {
        for (float& v : t.data) {
            v = cfg.init_scale * rng.uniform_symmetric() + cfg.init_perturbation;
        }
    };
    for (auto& t : p.conv_w) fill(t);
    for (auto& t : p.dense_w) fill(t);
    return p;
}

ForwardTrace forward(const NetworkSpec& spec, const Params& params, const Tensor& batch_images,
                     const ArithContext& ctx) {
    spec.validate();
    if (params.conv_w.size() != spec.conv_layers.size() ||
        params.dense_w.size() != spec.dense_layers + 1) {
        contract_error("params do not match spec");
    }

    ForwardTrace trace;
    trace.images = as_batched_channels(spec, batch_images);
    const std::size_t batch = trace.images.shape[0];

    Tensor x = trace.images;
    for (std::size_t k = 0; k < spec.conv_layers.size(); ++k) {
        Tensor w = params.conv_w[k];
        Tensor b = params.conv_b[k];
        if (per_layer(ctx)) {  // weights used by the layer are quantized too
            quantize_tensor(w, ctx);
            quantize_tensor(b, ctx);
        }
        ConvStageTrace stage;
        const std::size_t oh = x.shape[2] - w.shape[2] + 1;
        const std::size_t ow = x.shape[3] - w.shape[3] + 1;
        stage.z = Tensor({batch, w.shape[0], oh, ow});
        if (ctx.per_op()) {
            conv_forward_batch(x, w, b, stage.z, CtxQuant{ctx});
        } else {
            conv_forward_batch(x, w, b, stage.z, NoQuant{});
        }
        const Tensor a = relu(stage.z);
        stage.pooled = Tensor({batch, w.shape[0], oh / 2, ow / 2});
        pool_forward_batch(a, stage.pooled, stage.argmax);
        if (per_layer(ctx)) quantize_tensor(stage.pooled, ctx);
        x = stage.pooled;
        trace.conv.push_back(std::move(stage));
    }

    trace.flat = reshape(x, {batch, spec.flatten_size()});
    Tensor cur = trace.flat;
    for (std::size_t i = 0; i < spec.dense_layers; ++i) {
        Tensor w = params.dense_w[i];
        Tensor b = params.dense_b[i];
        if (per_layer(ctx)) {
            quantize_tensor(w, ctx);
            quantize_tensor(b, ctx);
        }
        DenseLayerTrace layer;
        layer.input = cur;
        layer.z = add_bias(matmul(cur, w, ctx), b, ctx);
        Tensor a = relu(layer.z);
        if (per_layer(ctx)) quantize_tensor(a, ctx);
        trace.dense.push_back(std::move(layer));
        cur = std::move(a);
    }

    Tensor w_out = params.dense_w.back();
    Tensor b_out = params.dense_b.back();
    if (per_layer(ctx)) {
        quantize_tensor(w_out, ctx);
        quantize_tensor(b_out, ctx);
    }
    trace.head.input = cur;
    trace.head.z = add_bias(matmul(cur, w_out, ctx), b_out, ctx);
    trace.probs = softmax_rows(trace.head.z, ctx);
    if (per_layer(ctx)) quantize_tensor(trace.probs, ctx);
    return trace;
}

Grads backward(const NetworkSpec& spec, const Params& params, const ForwardTrace& trace,
               const Tensor& targets, const ArithContext& ctx) {
    if (trace.conv.size() != spec.conv_layers.size() || trace.dense.size() != spec.dense_layers) {
        contract_error("trace does not match spec");
    }
    if (!trace.probs.same_shape(targets)) {
        contract_error("targets shape " + shape_to_string(targets.shape) +
                       " does not match trace output " + shape_to_string(trace.probs.shape));
    }
    const std::size_t batch = trace.batch_size();
    Grads grads = zero_params(spec);

    // softmax + cross-entropy head: dlogits = (probs - onehot) / B
    Tensor gz = scale(sub(trace.probs, targets, ctx), 1.0f / static_cast<float>(batch), ctx);
    if (per_layer(ctx)) quantize_tensor(gz, ctx);

    grads.dense_w.back() = matmul(transpose(trace.head.input), gz, ctx);
    grads.dense_b.back() = column_sums(gz, ctx);
    Tensor ga = matmul(gz, transpose(params.dense_w.back()), ctx);
    if (per_layer(ctx)) quantize_tensor(ga, ctx);

    for (std::size_t i = spec.dense_layers; i-- > 0;) {
        gz = relu_backward(ga, trace.dense[i].z);
        grads.dense_w[i] = matmul(transpose(trace.dense[i].input), gz, ctx);
        grads.dense_b[i] = column_sums(gz, ctx);
        ga = matmul(gz, transpose(params.dense_w[i]), ctx);
        if (per_layer(ctx)) quantize_tensor(ga, ctx);
    }

    Tensor dpool = reshape(ga, trace.conv.back().pooled.shape);
    for (std::size_t k = spec.conv_layers.size(); k-- > 0;) {
        const ConvStageTrace& stage = trace.conv[k];
        const Tensor& stage_input = (k == 0) ? trace.images : trace.conv[k - 1].pooled;
        const Tensor da = pool_backward(dpool, stage.argmax, stage.z.shape);
        const Tensor dz = relu_backward(da, stage.z);
        Tensor din;
        if (k > 0) din = Tensor(stage_input.shape);
        if (ctx.per_op()) {
            conv_backward_batch(stage_input, params.conv_w[k], dz, grads.conv_w[k],
                                grads.conv_b[k], k > 0 ? &din : nullptr, CtxQuant{ctx});
        } else {
            conv_backward_batch(stage_input, params.conv_w[k], dz, grads.conv_w[k],
                                grads.conv_b[k], k > 0 ? &din : nullptr, NoQuant{});
        }
        if (k > 0) {
            if (per_layer(ctx)) quantize_tensor(din, ctx);
            dpool = std::move(din);
        }
    }
    return grads;
}

Tensor sigmoid_squared_error_head(const Tensor& y, const Tensor& y0, const ArithContext& ctx) {
    const Tensor residual = sub(y0, y, ctx);
    const Tensor y_sq = hadamard(y, y, ctx);
    const Tensor slope = sub(y, y_sq, ctx);
    return hadamard(residual, slope, ctx);
}

void rmsprop_step(Params& params, const Grads& grads, Params& cache, const TrainConfig& cfg,
                  const ArithContext& ctx) {
    const float decay = cfg.rmsprop_decay;
    const float one_minus = 1.0f - decay;
    const float lr = cfg.learning_rate;
    const float eps = cfg.rmsprop_epsilon;
    auto q = [&](float v) { return ctx.q(v); };

    auto update = [&](Tensor& p, const Tensor& g, Tensor& c) {
        if (!p.same_shape(g) || !p.same_shape(c)) {
            contract_error("rmsprop state shape mismatch: " + p.shape_str() + " vs " +
                           g.shape_str() + " vs " + c.shape_str());
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            const float gv = g.data[i];
            if (!std::isfinite(gv)) throw DivergenceError("non-finite gradient");
            const float g_sq = q(gv * gv);
            c.data[i] = q(q(decay * c.data[i]) + q(one_minus * g_sq));
            const float denom = q(q(std::sqrt(c.data[i])) + eps);
            p.data[i] = q(p.data[i] - q(q(lr * gv) / denom));
        }
    };

    for (std::size_t k = 0; k < params.conv_w.size(); ++k) {
        update(params.conv_w[k], grads.conv_w[k], cache.conv_w[k]);
        update(params.conv_b[k], grads.conv_b[k], cache.conv_b[k]);
    }
    for (std::size_t k = 0; k < params.dense_w.size(); ++k) {
        update(params.dense_w[k], grads.dense_w[k], cache.dense_w[k]);
        update(params.dense_b[k], grads.dense_b[k], cache.dense_b[k]);
    }
}

double cross_entropy(const Tensor& probs, const Tensor& targets) {
    if (!probs.same_shape(targets)) contract_error("cross_entropy shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.shape[0]; ++i) {
        for (std::size_t j = 0; j < probs.shape[1]; ++j) {
            if (targets.at(i, j) != 0.0f) {
                total -= targets.at(i, j) *
                         std::log(std::max(static_cast<double>(probs.at(i, j)), 1e-30));
            }
        }
    }
    return total / static_cast<double>(probs.shape[0]);
}

double evaluate(const NetworkSpec& spec, const Params& params, const Dataset& test_set) {
    if (test_set.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    const ArithContext ctx = ArithContext::full_precision();
    const std::size_t chunk = 256;
    const std::size_t rows = test_set.images.shape[1], cols = test_set.images.shape[2];
    std::size_t correct = 0;
    for (std::size_t first = 0; first < test_set.size(); first += chunk) {
        const std::size_t count = std::min(chunk, test_set.size() - first);
        Tensor batch({count, rows, cols});
        std::copy_n(test_set.images.data.begin() + first * rows * cols, count * rows * cols,
                    batch.data.begin());
        const ForwardTrace trace = forward(spec, params, batch, ctx);
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t arg = 0;
            float best = trace.probs.at(i, 0);
            for (std::size_t j = 1; j < spec.classes; ++j) {
                if (trace.probs.at(i, j) > best) {  // ties keep the lowest class index
                    best = trace.probs.at(i, j);
                    arg = j;
                }
            }
            if (arg == test_set.labels[first + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const Dataset& train_set,
                  const Dataset& test_set) {
    spec.validate();
    if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    result.params = init_weights(spec, cfg);

    Rng quant_rng(Rng::derive(cfg.seed, kQuantStreamSalt));
    const ArithContext ctx{cfg.precision, &quant_rng};
    const Granularity gran = cfg.precision.granularity;
    const bool quantize_weights =
        gran == Granularity::PerBatch || gran == Granularity::PerLayer;

    // start from grid-aligned parameters under any truncation policy
    if (gran != Granularity::None) quantize_all(result.params, ctx);

    Params cache = zero_params(spec);
    auto finish = [&](RunStatus status, std::size_t diverged_epoch) {
        result.status = status;
        result.diverged_epoch = diverged_epoch;
        result.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return result;
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto perm = epoch_permutation(train_set.size(), cfg.seed, epoch);
        for (std::size_t first = 0; first < train_set.size(); first += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, train_set.size() - first);
            const Batch batch = gather_batch(train_set, perm, first, count, spec.classes);
            const ForwardTrace trace = forward(spec, result.params, batch.images, ctx);
            const double loss = cross_entropy(trace.probs, batch.targets);
            if (!std::isfinite(loss)) return finish(RunStatus::Diverged, epoch);
            try {
                const Grads grads = backward(spec, result.params, trace, batch.targets, ctx);
                rmsprop_step(result.params, grads, cache, cfg, ctx);
            } catch (const DivergenceError&) {
                return finish(RunStatus::Diverged, epoch);
            }
            if (quantize_weights && !cfg.quantize_once_per_epoch) {
                quantize_all(result.params, ctx);
            }
            if (!result.params.all_finite()) return finish(RunStatus::Diverged, epoch);
        }
        if (quantize_weights && cfg.quantize_once_per_epoch) {
            quantize_all(result.params, ctx);
        }
        result.epoch_accuracy.push_back(evaluate(spec, result.params, test_set));
    }
    return finish(RunStatus::Completed, 0);
}

}  // namespace lowp
