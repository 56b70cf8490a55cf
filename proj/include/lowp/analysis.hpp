#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "lowp/quant.hpp"

namespace lowp {

// Constant-valued conv stack: every entry of the input plane equals `input`,
// every entry of kernel i equals layers[i].w. Layer 0 is the input by
// convention (M0 = N0 = 1, W0 = input).
struct ConvStackLayer {
    std::size_t m = 2;  // kernel height
    std::size_t n = 2;  // kernel width
    double w = 1.0;     // shared kernel value, nonzero
};

struct ConvStackModel {
    double input = 1.0;  // shared input value, nonzero
    std::vector<ConvStackLayer> layers;

    // Throws std::invalid_argument when input or any layer value is zero
    // (the error predictor divides by each of them).
    void validate() const;
};

// T_n = (prod_{i=0..n} M_i N_i W_i) * (sum_{i=0..n} 1/W_i).
double forward_error_coefficient(const ConvStackModel& model);

// First-order prediction of the output shift when every stored value
// (input and kernels) is lowered by eps: returns T_n * eps.
double predicted_forward_error(const ConvStackModel& model, double eps);

// Brute-force measurement: builds the constant tensors at the exact sizes
// that leave a single output cell, runs the stack twice in binary64 (exact
// and with eps subtracted from every stored entry), returns S_n - S~_n.
double measured_forward_error(const ConvStackModel& model, double eps);

// Same measurement, but instead of a shared eps each stored tensor is
// truncated to `mantissa_bits` as a binary32 value, so every tensor carries
// its own toward-zero error. Reported for comparison, not asserted against
// the shared-eps predictor.
double measured_truncation_error(const ConvStackModel& model, int mantissa_bits);

struct ForwardErrorRow {
    std::size_t n;    // stack depth used
    double eps;
    double predicted;
    double measured;
    double ratio;     // measured / predicted, 1.0 when both are zero
    double measured_trunc;  // truncation-error variant, informational only
};

// Cross product of prefix depths `ns` (each <= model.layers.size()) and
// perturbations `eps_values`. The truncation column uses the mantissa width
// whose grid spacing at 1.0 is closest to eps.
std::vector<ForwardErrorRow> forward_error_scaling_report(const ConvStackModel& model,
                                                          const std::vector<double>& eps_values,
                                                          const std::vector<std::size_t>& ns);

// Least-squares slope of log|y| vs log|x|; the measured error of a constant
// stack must scale linearly in eps, i.e. slope 1.
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Scalar sigmoid + squared-loss model used to check the backprop error
// expansion: g is the loss gradient at the output, y the sigmoid output,
// eps_y the error carried by y.
struct BackpropErrorCase {
    double g = 0.0;
    double y = 0.5;    // in (0, 1)
    double eps_y = 0.0;

    void validate() const;  // throws when y is outside (0, 1)
};

// exact            = (g - eps)(y - eps)(1 - y + eps)
// terms            = { g*y*(1-y),
//                      (-g + 2*g*y - y + y^2) * eps,
//                      (-g + 1 - 2*y) * eps^2,
//                      eps^3 }
// The sum of the four terms equals `exact` identically (a polynomial
// identity, checked to binary64 round-off).
struct BackpropExpansion {
    double exact;
    std::array<double, 4> terms;
    double term_sum() const { return terms[0] + terms[1] + terms[2] + terms[3]; }
    double residual() const { return exact - term_sum(); }
};

BackpropExpansion backprop_error_expansion(const BackpropErrorCase& c);

// Output-layer gradient with a perturbed activation y~ = y - eps_y. Two sign
// conventions exist for the perturbed gradient; both are returned so callers
// can report the discrepancy instead of silently picking one.
struct Step1Error {
    double g;             // y0 - y
    double g_tilde;       // y0 - (y - eps_y) = g + eps_y
    double alt_g_tilde;   // g - eps_y, the opposite sign convention
    double discrepancy;   // g_tilde - alt_g_tilde = 2*eps_y
};

Step1Error step1_output_error(double y, double y0, double eps_y);

}  // namespace lowp
