#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lowp/data.hpp"
#include "lowp/quant.hpp"
#include "lowp/tensor.hpp"

namespace lowp {

class DivergenceError : public std::runtime_error {
  public:
    explicit DivergenceError(const std::string& what, std::size_t epoch = 0)
        : std::runtime_error(what), epoch(epoch) {}
    std::size_t epoch;
};

struct ConvLayerSpec {
    std::size_t filters;
    std::size_t kernel_h;
    std::size_t kernel_w;
};

// Two conv+pool stages followed by a relu dense stack and a softmax
// classifier. Every conv is valid-mode and every pool is 2x2 max.
struct NetworkSpec {
    std::vector<ConvLayerSpec> conv_layers{{8, 5, 5}, {16, 5, 5}};
    std::size_t dense_layers = 1;  // hidden relu layers, in [1, 5]
    std::size_t dense_units = 100;
    std::size_t input_h = 28;
    std::size_t input_w = 28;
    std::size_t input_channels = 1;
    std::size_t classes = 10;

    // Throws std::invalid_argument if any conv/pool stage would collapse a
    // spatial dimension or dense_layers is out of range.
    void validate() const;

    std::size_t flatten_size() const;
};

struct TrainConfig {
    std::size_t batch_size = 128;
    std::size_t epochs = 30;
    float learning_rate = 1e-3f;
    float rmsprop_decay = 0.9f;
    float rmsprop_epsilon = 1e-8f;
    std::uint64_t seed = 1;
    float init_scale = 0.05f;
    float init_perturbation = 0.0f;  // constant added to every initial weight
    PrecisionConfig precision{23, Rounding::Truncate, Granularity::None};
    // PerBatch normally quantizes after every mini-batch update; this switch
    // defers it to once per epoch for comparison.
    bool quantize_once_per_epoch = false;
};

// Weight and bias tensors, also reused for gradients and optimizer caches.
//   conv_w[k]: [F x C x M x N], conv_b[k]: [F]
//   dense_w[k]: [in x out] (hidden layers first, classifier last), dense_b[k]: [out]
struct Params {
    std::vector<Tensor> conv_w, conv_b;
    std::vector<Tensor> dense_w, dense_b;

    template <class Fn>
    void for_each_tensor(Fn fn) {
        for (auto& t : conv_w) fn(t);
        for (auto& t : conv_b) fn(t);
        for (auto& t : dense_w) fn(t);
        for (auto& t : dense_b) fn(t);
    }
    bool all_finite() const;
};

using Grads = Params;

struct ConvStageTrace {
    Tensor z;                         // [B x F x H' x W'] conv + bias
    Tensor pooled;                    // [B x F x H'/2 x W'/2]
    std::vector<std::size_t> argmax;  // flat index into the relu output, per pooled element
};

struct DenseLayerTrace {
    Tensor input;  // [B x in]
    Tensor z;      // [B x out]
};

struct ForwardTrace {
    Tensor images;  // [B x C x H x W]
    std::vector<ConvStageTrace> conv;
    Tensor flat;  // [B x D]
    std::vector<DenseLayerTrace> dense;  // hidden layers
    DenseLayerTrace head;                // classifier; head.z are the logits
    Tensor probs;                        // [B x classes] softmax output
    std::size_t batch_size() const { return probs.shape.empty() ? 0 : probs.shape[0]; }
};

// Weights ~ init_scale * uniform[-1, 1) + init_perturbation, biases zero,
// drawn in fixed tensor order from Rng(cfg.seed). Bit-identical for equal
// (seed, init_perturbation).
Params init_weights(const NetworkSpec& spec, const TrainConfig& cfg);

// conv -> relu -> pool per stage, flatten, relu dense stack, softmax head.
// batch_images is [B x H x W] (single input channel) or [B x C x H x W].
// Under PerLayer granularity each stage's output tensor (and the weights it
// used) is quantized after the stage computes; PerOperation is handled by
// the kernels; PerBatch/None do not quantize here.
ForwardTrace forward(const NetworkSpec& spec, const Params& params,
                     const Tensor& batch_images, const ArithContext& ctx);

// Softmax + cross-entropy head (logits gradient = (probs - onehot)/B), dense
// recursion g <- W^T g with dW = a^T g, conv/pool adjoints of the forward
// kernels. Under PerLayer the propagated gradient is quantized after each
// stage's backward step.
Grads backward(const NetworkSpec& spec, const Params& params, const ForwardTrace& trace,
               const Tensor& targets, const ArithContext& ctx);

// Gradient of the squared-error loss with a sigmoid output, with respect to
// the final pre-activation: (y0 - y) .* (y - y^2). Alternative head used by
// the error-analysis tooling, not by training.
Tensor sigmoid_squared_error_head(const Tensor& y, const Tensor& y0, const ArithContext& ctx);

// cache <- decay*cache + (1-decay)*g^2; p <- p - lr*g/(sqrt(cache)+eps).
// Throws DivergenceError on non-finite gradients.
void rmsprop_step(Params& params, const Grads& grads, Params& cache, const TrainConfig& cfg,
                  const ArithContext& ctx);

// Mean cross-entropy of the batch, for divergence monitoring.
double cross_entropy(const Tensor& probs, const Tensor& targets);

// Fraction of argmax-correct predictions under a full-precision forward
// pass; argmax ties resolve to the lowest class index.
double evaluate(const NetworkSpec& spec, const Params& params, const Dataset& test_set);

enum class RunStatus { Completed, Diverged };

struct TrainResult {
    std::vector<double> epoch_accuracy;  // test accuracy after each epoch
    RunStatus status = RunStatus::Completed;
    std::size_t diverged_epoch = 0;  // 1-based, set when status == Diverged
    double wall_seconds = 0.0;
    Params params;
};

// Mini-batch training with the configured truncation policy. Deterministic
// given cfg.seed (including Stochastic rounding, whose draws come from a
// seed-derived stream). Divergence halts the run gracefully with a partial
// record.
TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const Dataset& train_set,
                  const Dataset& test_set);

}  // namespace lowp
