#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "lowp/analysis.hpp"

using namespace lowp;

namespace {

ConvStackModel unit_stack(std::size_t depth) {
    ConvStackModel m;
    m.input = 1.0;
    m.layers.assign(depth, ConvStackLayer{2, 2, 1.0});
    return m;
}

}  // namespace

TEST_CASE("error coefficient reproduces hand-computed closed forms") {
    // depth 0: the stack is just the stored input, so the coefficient is 1
    ConvStackModel none;
    none.input = 3.75;
    CHECK(forward_error_coefficient(none) == doctest::Approx(1.0));

    // depth 1: (M1 N1 W1 I) * (1/I + 1/W1) = M1 N1 (I + W1)
    ConvStackModel one;
    one.input = 2.0;
    one.layers = {{2, 2, 3.0}};
    CHECK(forward_error_coefficient(one) == doctest::Approx(2.0 * 2.0 * (2.0 + 3.0)));

    // depth 2, all kernel entries 2x2 of ones on a unit input: 4*4*(1+1+1)
    const ConvStackModel two = unit_stack(2);
    CHECK(forward_error_coefficient(two) == doctest::Approx(48.0));

    // rectangular kernels and mixed weights
    ConvStackModel mixed;
    mixed.input = 1.5;
    mixed.layers = {{2, 3, 1.25}, {3, 2, 0.5}};
    const double prod = 1.5 * (2 * 3 * 1.25) * (3 * 2 * 0.5);
    const double inv = 1.0 / 1.5 + 1.0 / 1.25 + 1.0 / 0.5;
    CHECK(forward_error_coefficient(mixed) == doctest::Approx(prod * inv));
}

TEST_CASE("measured error matches the first-order prediction") {
    ConvStackModel one;
    one.input = 2.0;
    one.layers = {{2, 2, 3.0}};
    // S = 4*2*3 = 24, shifted = 4(2-e)(3-e), error = 20e - 4e^2
    const double eps = 1e-6;
    CHECK(measured_forward_error(one, eps) == doctest::Approx(20e-6).epsilon(1e-5));
    CHECK(predicted_forward_error(one, eps) == doctest::Approx(20e-6));

    // the 48-eps depth-2 unit stack
    const ConvStackModel two = unit_stack(2);
    CHECK(measured_forward_error(two, eps) == doctest::Approx(48e-6).epsilon(1e-4));

    // zero perturbation leaves the stack untouched
    CHECK(measured_forward_error(two, 0.0) == 0.0);

    // doubling one kernel area doubles the error, to first order
    ConvStackModel wide = one;
    wide.layers[0].n = 4;
    CHECK(measured_forward_error(wide, 1e-8) ==
          doctest::Approx(2.0 * measured_forward_error(one, 1e-8)).epsilon(1e-3));
}

TEST_CASE("prediction ratio stays within a tenth of a percent at small eps") {
    ConvStackModel model;
    model.input = 1.5;
    model.layers = {{2, 2, 1.25}, {2, 2, 1.25}, {2, 2, 1.25}};
    for (std::size_t n : {std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
        ConvStackModel prefix = model;
        prefix.layers.resize(n);
        for (double eps : {1e-8, 1e-7, 1e-6}) {
            const double ratio =
                measured_forward_error(prefix, eps) / predicted_forward_error(prefix, eps);
            INFO("depth ", n, " eps ", eps);
            CHECK(std::fabs(ratio - 1.0) < 1e-3);
        }
    }
}

TEST_CASE("coefficient grows strictly with stack depth") {
    const ConvStackModel deep = unit_stack(5);
    double prev = 0.0;
    for (std::size_t n = 1; n <= 5; ++n) {
        ConvStackModel prefix = deep;
        prefix.layers.resize(n);
        const double t = forward_error_coefficient(prefix);
        CHECK(t > prev);
        prev = t;
    }
}

TEST_CASE("measured error scales linearly in eps (log-log slope 1)") {
    ConvStackModel model;
    model.input = 1.5;
    model.layers = {{2, 2, 1.25}, {2, 2, 1.25}};
    std::vector<double> xs, ys;
    for (double eps = 1e-8; eps <= 1.01e-4; eps *= 10.0) {
        xs.push_back(eps);
        ys.push_back(std::fabs(measured_forward_error(model, eps)));
    }
    const double slope = fit_loglog_slope(xs, ys);
    CHECK(std::fabs(slope - 1.0) < 0.01);
}

TEST_CASE("scaling report combines depths, ratios and the truncation column") {
    ConvStackModel model;
    model.input = 1.5;
    model.layers = {{2, 2, 1.25}, {2, 2, 1.25}};
    const std::vector<double> eps = {1e-6, 1e-4};
    const std::vector<std::size_t> ns = {0, 1, 2};
    const auto rows = forward_error_scaling_report(model, eps, ns);
    REQUIRE(rows.size() == 6);

    for (const auto& row : rows) {
        INFO("depth ", row.n, " eps ", row.eps);
        CHECK(row.predicted != 0.0);
        CHECK(std::fabs(row.ratio - 1.0) < 1e-3);
    }
    // depth 0 measures the stored input directly: error == eps, ratio == 1
    CHECK(rows[0].n == 0);
    CHECK(rows[0].measured == doctest::Approx(1e-6));
    CHECK(rows[0].ratio == doctest::Approx(1.0));

    // 1.5 and 1.25 are exact at >= 2 mantissa bits, so truncation at the
    // width matching eps=1e-6 (20 bits) leaves no error at all
    CHECK(rows[0].measured_trunc == 0.0);

    CHECK_THROWS_AS(forward_error_scaling_report(model, eps, {3}), std::invalid_argument);
}

TEST_CASE("truncation measurement is zero on-grid and positive off-grid") {
    ConvStackModel grid;
    grid.input = 1.5;
    grid.layers = {{2, 2, 1.25}};
    CHECK(measured_truncation_error(grid, 23) == 0.0);
    CHECK(measured_truncation_error(grid, 2) == 0.0);  // 1.5, 1.25 need 1-2 bits

    ConvStackModel off;
    off.input = 1.3;  // not a dyadic rational, truncates at every width
    off.layers = {{2, 2, 1.7}};
    const double err = measured_truncation_error(off, 7);
    CHECK(err > 0.0);  // toward-zero shrinks positive products
    // coarser grids hurt at least as much
    CHECK(measured_truncation_error(off, 3) >= err);
}

TEST_CASE("stack validation rejects degenerate values") {
    ConvStackModel zero_input;
    zero_input.input = 0.0;
    zero_input.layers = {{2, 2, 1.0}};
    CHECK_THROWS_AS(zero_input.validate(), std::invalid_argument);

    ConvStackModel zero_w;
    zero_w.layers = {{2, 2, 0.0}};
    CHECK_THROWS_AS(zero_w.validate(), std::invalid_argument);
    CHECK_THROWS_AS(forward_error_coefficient(zero_w), std::invalid_argument);

    ConvStackModel zero_dim;
    zero_dim.layers = {{0, 2, 1.0}};
    CHECK_THROWS_AS(zero_dim.validate(), std::invalid_argument);
}

TEST_CASE("log-log slope fit recovers synthetic power laws and rejects bad input") {
    std::vector<double> xs, ys;
    for (double x = 1e-6; x <= 1.01e-2; x *= 10.0) {
        xs.push_back(x);
        ys.push_back(3.0 * std::pow(x, 1.7));
    }
    CHECK(fit_loglog_slope(xs, ys) == doctest::Approx(1.7).epsilon(1e-9));

    CHECK_THROWS_AS(fit_loglog_slope({1.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(fit_loglog_slope({1.0, 2.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(fit_loglog_slope({1.0, -2.0}, {1.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(fit_loglog_slope({1.0, 2.0}, {0.0, 1.0}), std::invalid_argument);
}

TEST_CASE("gradient error expansion is an exact polynomial identity") {
    // worked example: g=0.5, y=0.5, eps=0.1 -> 0.4 * 0.4 * 0.6 = 0.096
    const BackpropExpansion w = backprop_error_expansion({0.5, 0.5, 0.1});
    CHECK(w.exact == doctest::Approx(0.096).epsilon(1e-12));
    CHECK(w.terms[0] == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(w.terms[1] == doctest::Approx(-0.025).epsilon(1e-12));
    CHECK(w.terms[2] == doctest::Approx(-0.005).epsilon(1e-12));
    CHECK(w.terms[3] == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(std::fabs(w.residual()) < 1e-12);

    // zero perturbation reduces to the unperturbed gradient term
    const BackpropExpansion base = backprop_error_expansion({0.7, 0.3, 0.0});
    CHECK(base.exact == doctest::Approx(0.7 * 0.3 * 0.7));
    CHECK(base.terms[1] == 0.0);
    CHECK(base.terms[2] == 0.0);
    CHECK(base.terms[3] == 0.0);

    // the identity holds over a large random sample
    Rng rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        BackpropErrorCase c;
        c.g = -1.0 + 2.0 * rng.next_double();
        c.y = 0.01 + 0.98 * rng.next_double();
        c.eps_y = -0.1 + 0.2 * rng.next_double();
        worst = std::max(worst, std::fabs(backprop_error_expansion(c).residual()));
    }
    CHECK(worst < 1e-12);

    CHECK_THROWS_AS(backprop_error_expansion({0.5, 0.0, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(backprop_error_expansion({0.5, 1.0, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(backprop_error_expansion({0.5, -0.2, 0.1}), std::invalid_argument);
}

TEST_CASE("output-layer gradient error carries the activation error") {
    const Step1Error s = step1_output_error(0.7, 1.0, 0.05);
    CHECK(s.g == doctest::Approx(0.3));
    CHECK(s.g_tilde == doctest::Approx(0.35));       // y0 - (y - eps) = g + eps
    CHECK(s.alt_g_tilde == doctest::Approx(0.25));   // the g - eps convention
    CHECK(s.discrepancy == doctest::Approx(0.1));    // always 2*eps

    const Step1Error none = step1_output_error(0.7, 1.0, 0.0);
    CHECK(none.g_tilde == none.g);
    CHECK(none.alt_g_tilde == none.g);
    CHECK(none.discrepancy == 0.0);

    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double y = rng.next_double();
        const double y0 = rng.next_double();
        const double eps = -0.2 + 0.4 * rng.next_double();
        const Step1Error e = step1_output_error(y, y0, eps);
        CHECK(std::fabs(e.g_tilde - e.g) == doctest::Approx(std::fabs(eps)));
        CHECK(e.discrepancy == doctest::Approx(2.0 * eps));
    }
}
