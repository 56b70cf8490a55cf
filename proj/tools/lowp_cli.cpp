#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lowp/analysis.hpp"
#include "lowp/data.hpp"
#include "lowp/network.hpp"
#include "lowp/sweep.hpp"

namespace {

std::vector<lowp::ConvLayerSpec> parse_conv(const std::vector<std::string>& items) {
    std::vector<lowp::ConvLayerSpec> layers;
    for (const auto& item : items) {
        std::size_t f = 0, kh = 0, kw = 0;
        if (std::sscanf(item.c_str(), "%zux%zux%zu", &f, &kh, &kw) != 3) {
            throw CLI::ValidationError("--conv", "expected FxKHxKW items, got '" + item + "'");
        }
        layers.push_back({f, kh, kw});
    }
    return layers;
}

int run_report(const std::string& report, const std::vector<double>& eps_values,
               const std::vector<std::size_t>& depths, std::uint64_t seed, std::size_t samples,
               std::string out_path) {
    if (report == "forward") {
        if (out_path.empty()) out_path = "forward.csv";
        lowp::ConvStackModel model;
        model.input = 1.5;
        std::size_t max_depth = 1;
        for (std::size_t n : depths) max_depth = std::max(max_depth, n);
        model.layers.assign(max_depth, lowp::ConvStackLayer{2, 2, 1.25});
        const auto rows = lowp::forward_error_scaling_report(model, eps_values, depths);
        lowp::write_forward_error_csv(rows, out_path);
        std::printf("wrote %zu rows to %s\n", rows.size(), out_path.c_str());
        return 0;
    }
    if (report == "backprop") {
        if (out_path.empty()) out_path = "backprop.csv";
        const auto rows = lowp::backprop_report_rows(seed, samples);
        lowp::write_backprop_csv(rows, out_path);
        std::printf("wrote %zu rows to %s\n", rows.size(), out_path.c_str());
        return 0;
    }
    throw CLI::ValidationError("--report", "expected forward or backprop, got '" + report + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reduced-precision CNN training sweeps and error-analysis reports"};
    app.set_config("--config", "", "flat key=value config file (flags override it)");

    std::string data_dir = "data";
    std::string sweep_name;
    std::string report_name;
    std::vector<std::string> values;
    std::vector<int> mantissa_bits{23};
    std::string rounding = "truncate";
    std::string granularity = "batch";
    std::vector<std::uint64_t> seeds{1};
    std::size_t epochs = 15;
    std::size_t subset = 2000;
    std::size_t test_subset = 0;
    std::size_t batch_size = 128;
    std::size_t dense_layers = 1;
    std::size_t dense_units = 100;
    std::vector<std::string> conv_items;
    double learning_rate = 1e-3;
    double init_scale = 0.05;
    double threshold = 0.9;
    bool quantize_once = false;
    bool full_scale = false;
    std::size_t workers = 1;
    std::string out_path;
    std::vector<double> eps_values{1e-8, 1e-7, 1e-6, 1e-5, 1e-4};
    std::vector<std::size_t> report_depths{1, 2, 3, 4};
    std::size_t report_samples = 10000;

    app.add_option("--data-dir", data_dir, "directory holding the MNIST IDX files");
    app.add_option("--sweep", sweep_name,
                   "parameter to sweep: bitsize|rounding|dense-layers|dense-units|batch-size|"
                   "init-perturbation");
    app.add_option("--report", report_name, "emit an analysis report instead: forward|backprop");
    app.add_option("--values", values,
                   "swept values (comma separated); bitsize sweeps use --mantissa-bits instead")
        ->delimiter(',');
    app.add_option("--mantissa-bits", mantissa_bits, "mantissa widths to run, e.g. 0,3,7,23")
        ->delimiter(',');
    app.add_option("--rounding", rounding, "rounding mode: truncate|stochastic");
    app.add_option("--granularity", granularity, "quantization granularity: batch|layer|op|none");
    app.add_option("--seed", seeds, "replicate seeds, e.g. 1,2,3")->delimiter(',');
    app.add_option("--epochs", epochs, "training epochs per run");
    app.add_option("--subset", subset, "training subset size, 0 = full split");
    app.add_option("--test-subset", test_subset, "test subset size, 0 = full split");
    app.add_option("--batch-size", batch_size, "mini-batch size (when not swept)");
    app.add_option("--dense-layers", dense_layers, "hidden dense layers (when not swept)");
    app.add_option("--dense-units", dense_units, "units per hidden dense layer (when not swept)");
    app.add_option("--conv", conv_items, "conv stages as FxKHxKW items, e.g. 8x5x5,16x5x5")
        ->delimiter(',');
    app.add_option("--lr", learning_rate, "learning rate");
    app.add_option("--init-scale", init_scale, "uniform init half-width");
    app.add_option("--threshold", threshold, "test-accuracy threshold for epochs_to_90");
    app.add_flag("--quantize-once-per-epoch", quantize_once,
                 "defer per-batch weight quantization to the end of each epoch");
    app.add_flag("--full-scale", full_scale,
                 "use the full 60k/10k splits and 30 epochs (unless --epochs is given)");
    app.add_option("--workers", workers, "concurrent sweep cells (output order is unchanged)");
    app.add_option("--out", out_path, "output CSV path");
    app.add_option("--eps", eps_values, "report mode: perturbation magnitudes")->delimiter(',');
    app.add_option("--layers", report_depths, "report mode: conv stack depths")->delimiter(',');
    app.add_option("--samples", report_samples, "report mode: random cases for backprop report");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sweep_name.empty() == report_name.empty()) {
            std::fprintf(stderr, "error: exactly one of --sweep or --report is required\n");
            return 1;
        }
        if (!report_name.empty()) {
            return run_report(report_name, eps_values, report_depths, seeds.front(),
                              report_samples, out_path);
        }

        if (full_scale) {
            subset = 0;
            test_subset = 0;
            if (app.count("--epochs") == 0) epochs = 30;
        }
        if (out_path.empty()) out_path = "sweep.csv";

        lowp::SweepSpec spec;
        spec.param = lowp::parse_swept_param(sweep_name);
        spec.values = values;
        if (spec.param == lowp::SweptParam::Rounding && values.empty()) {
            spec.values = {"truncate", "stochastic"};
        }
        spec.mantissa_bits = mantissa_bits;
        spec.seeds = seeds;
        if (!conv_items.empty()) spec.net.conv_layers = parse_conv(conv_items);
        spec.net.dense_layers = dense_layers;
        spec.net.dense_units = dense_units;
        spec.base.batch_size = batch_size;
        spec.base.epochs = epochs;
        spec.base.learning_rate = static_cast<float>(learning_rate);
        spec.base.init_scale = static_cast<float>(init_scale);
        spec.base.precision.rounding = lowp::parse_rounding(rounding);
        spec.base.precision.granularity = lowp::parse_granularity(granularity);
        spec.base.quantize_once_per_epoch = quantize_once;
        spec.train_subset = subset;
        spec.test_subset = test_subset;
        spec.threshold = threshold;
        spec.workers = workers;

        const lowp::Dataset train_set = lowp::load_mnist_split(data_dir, "train");
        const lowp::Dataset test_set = lowp::load_mnist_split(data_dir, "test");
        const auto records = lowp::run_sweep(spec, train_set, test_set, out_path);
        for (const auto& record : records) {
            std::printf("%s: %s, final accuracy %s\n", record.run_id.c_str(),
                        record.status == lowp::RunStatus::Diverged ? "diverged" : "completed",
                        record.epoch_accuracy.empty()
                            ? "n/a"
                            : lowp::format_double(record.epoch_accuracy.back()).c_str());
        }
        std::printf("wrote %zu new rows to %s\n", records.size(), out_path.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
