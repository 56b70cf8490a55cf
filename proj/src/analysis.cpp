#include "lowp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lowp {

namespace {

// Minimal binary64 plane just for the oracle; deliberately independent of
// the float Tensor kernels it is used to check.
struct Plane {
    std::size_t h = 0, w = 0;
    std::vector<double> v;

    Plane(std::size_t h_, std::size_t w_, double fill) : h(h_), w(w_), v(h_ * w_, fill) {}
    double at(std::size_t i, std::size_t j) const { return v[i * w + j]; }
    double& at(std::size_t i, std::size_t j) { return v[i * w + j]; }
};

Plane conv_valid(const Plane& in, const Plane& k) {
    if (k.h > in.h || k.w > in.w) {
        throw std::invalid_argument("conv stack geometry invalid: kernel " + std::to_string(k.h) +
                                    "x" + std::to_string(k.w) + " on plane " +
                                    std::to_string(in.h) + "x" + std::to_string(in.w));
    }
    Plane out(in.h - k.h + 1, in.w - k.w + 1, 0.0);
    for (std::size_t i = 0; i < out.h; ++i) {
        for (std::size_t j = 0; j < out.w; ++j) {
            double acc = 0.0;
            for (std::size_t m = 0; m < k.h; ++m) {
                for (std::size_t n = 0; n < k.w; ++n) {
                    acc += in.at(i + m, j + n) * k.at(m, n);
                }
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

// Runs the constant stack with each stored constant mapped through
// `store` (identity for the exact pipeline, a perturbation otherwise).
// Input sized so the final plane is exactly 1x1.
template <class StoreFn>
double run_stack(const ConvStackModel& model, StoreFn store) {
    std::size_t h = 1, w = 1;
    for (const auto& layer : model.layers) {
        h += layer.m - 1;
        w += layer.n - 1;
    }
    Plane plane(h, w, store(model.input));
    for (const auto& layer : model.layers) {
        plane = conv_valid(plane, Plane(layer.m, layer.n, store(layer.w)));
    }
    return plane.at(0, 0);
}

}  // namespace

void ConvStackModel::validate() const {
    if (input == 0.0) throw std::invalid_argument("conv stack input value must be nonzero");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].w == 0.0) {
            throw std::invalid_argument("conv stack layer " + std::to_string(i + 1) +
                                        " weight must be nonzero");
        }
        if (layers[i].m == 0 || layers[i].n == 0) {
            throw std::invalid_argument("conv stack layer " + std::to_string(i + 1) +
                                        " kernel dims must be positive");
        }
    }
}

double forward_error_coefficient(const ConvStackModel& model) {
    model.validate();
    double prod = model.input;  // M0 = N0 = 1, W0 = input
    double inv_sum = 1.0 / model.input;
    for (const auto& layer : model.layers) {
        prod *= static_cast<double>(layer.m) * static_cast<double>(layer.n) * layer.w;
        inv_sum += 1.0 / layer.w;
    }
    return prod * inv_sum;
}

double predicted_forward_error(const ConvStackModel& model, double eps) {
    return forward_error_coefficient(model) * eps;
}

double measured_forward_error(const ConvStackModel& model, double eps) {
    model.validate();
    const double exact = run_stack(model, [](double x) { return x; });
    const double shifted = run_stack(model, [&](double x) { return x - eps; });
    return exact - shifted;
}

double measured_truncation_error(const ConvStackModel& model, int mantissa_bits) {
    model.validate();
    const PrecisionConfig cfg{mantissa_bits, Rounding::Truncate, Granularity::PerBatch};
    const double exact = run_stack(model, [](double x) { return x; });
    const double stored = run_stack(model, [&](double x) {
        return static_cast<double>(truncate(static_cast<float>(x), cfg));
    });
    return exact - stored;
}

std::vector<ForwardErrorRow> forward_error_scaling_report(const ConvStackModel& model,
                                                          const std::vector<double>& eps_values,
                                                          const std::vector<std::size_t>& ns) {
    model.validate();
    std::vector<ForwardErrorRow> rows;
    for (std::size_t n : ns) {
        if (n > model.layers.size()) {
            throw std::invalid_argument("report depth " + std::to_string(n) + " exceeds stack of " +
                                        std::to_string(model.layers.size()) + " layers");
        }
        ConvStackModel prefix = model;
        prefix.layers.resize(n);
        for (double eps : eps_values) {
            ForwardErrorRow row;
            row.n = n;
            row.eps = eps;
            row.predicted = predicted_forward_error(prefix, eps);
            row.measured = measured_forward_error(prefix, eps);
            row.ratio = row.predicted == 0.0 ? (row.measured == 0.0 ? 1.0 : INFINITY)
                                             : row.measured / row.predicted;
            // mantissa width whose grid spacing at 1.0 best matches eps
            const int width = eps > 0.0
                                  ? std::clamp(static_cast<int>(std::lround(-std::log2(eps))), 0, 23)
                                  : 23;
            row.measured_trunc = measured_truncation_error(prefix, width);
            rows.push_back(row);
        }
    }
    return rows;
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("slope fit needs at least two points");
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= 0.0 || y[i] <= 0.0) {
            throw std::invalid_argument("slope fit needs positive values");
        }
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = static_cast<double>(x.size());
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void BackpropErrorCase::validate() const {
    if (!(y > 0.0 && y < 1.0)) {
        throw std::invalid_argument("sigmoid output y must lie in (0, 1), got " +
                                    std::to_string(y));
    }
}

BackpropExpansion backprop_error_expansion(const BackpropErrorCase& c) {
    c.validate();
    const double g = c.g, y = c.y, e = c.eps_y;
    BackpropExpansion out;
    out.exact = (g - e) * (y - e) * (1.0 - y + e);
    out.terms = {
        g * y * (1.0 - y),
        (-g + 2.0 * g * y - y + y * y) * e,
        (-g + 1.0 - 2.0 * y) * e * e,
        e * e * e,
    };
    return out;
}

Step1Error step1_output_error(double y, double y0, double eps_y) {
    Step1Error out;
    out.g = y0 - y;
    out.g_tilde = y0 - (y - eps_y);
    out.alt_g_tilde = out.g - eps_y;
    out.discrepancy = out.g_tilde - out.alt_g_tilde;
    return out;
}

}  // namespace lowp
