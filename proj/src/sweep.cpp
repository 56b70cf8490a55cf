#include "lowp/sweep.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lowp {

namespace {

struct Cell {
    std::string value;  // canonical swept-value text
    int mantissa_bits;
    Rounding rounding;
    std::uint64_t seed;
};

double parse_number(const std::string& text, const std::string& what) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) {
        throw std::invalid_argument("cannot parse " + what + " value '" + text + "'");
    }
    return v;
}

std::size_t parse_count(const std::string& text, const std::string& what, std::size_t lo,
                        std::size_t hi) {
    const double v = parse_number(text, what);
    if (v != std::floor(v) || v < static_cast<double>(lo) || v > static_cast<double>(hi)) {
        throw std::invalid_argument(what + " value '" + text + "' must be an integer in [" +
                                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return static_cast<std::size_t>(v);
}

void apply_cell(SweptParam param, const Cell& cell, NetworkSpec& net, TrainConfig& cfg) {
    cfg.seed = cell.seed;
    cfg.precision.mantissa_bits = cell.mantissa_bits;
    cfg.precision.rounding = cell.rounding;
    switch (param) {
        case SweptParam::Bitsize:
        case SweptParam::Rounding: break;  // carried by the cell fields
        case SweptParam::DenseLayers:
            net.dense_layers = parse_count(cell.value, "dense-layers", 1, 5);
            break;
        case SweptParam::DenseUnits:
            net.dense_units = parse_count(cell.value, "dense-units", 1, 100000);
            break;
        case SweptParam::BatchSize:
            cfg.batch_size = parse_count(cell.value, "batch-size", 1, 1000000);
            break;
        case SweptParam::InitPerturbation: {
            const double v = parse_number(cell.value, "init-perturbation");
            if (v < 0.0) throw std::invalid_argument("init-perturbation must be >= 0");
            cfg.init_perturbation = static_cast<float>(v);
            break;
        }
    }
}

std::string canonical_value(SweptParam param, const std::string& raw) {
    if (param == SweptParam::Rounding) return rounding_name(parse_rounding(raw));
    return format_double(parse_number(raw, swept_param_name(param)));
}

std::vector<Cell> build_cells(const SweepSpec& spec) {
    if (spec.seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
    if (spec.mantissa_bits.empty()) {
        throw std::invalid_argument("sweep needs at least one mantissa width");
    }
    for (int bits : spec.mantissa_bits) {
        if (bits < 0 || bits > 23) {
            throw std::invalid_argument("mantissa width " + std::to_string(bits) +
                                        " outside [0, 23]");
        }
    }

    std::vector<Cell> cells;
    if (spec.param == SweptParam::Bitsize) {
        if (!spec.values.empty()) {
            throw std::invalid_argument(
                "bitsize sweeps take their values from the mantissa width list");
        }
        for (int bits : spec.mantissa_bits) {
            for (std::uint64_t seed : spec.seeds) {
                cells.push_back({std::to_string(bits), bits, spec.base.precision.rounding, seed});
            }
        }
    } else {
        if (spec.values.empty()) throw std::invalid_argument("sweep has an empty value list");
        for (const std::string& raw : spec.values) {
            const std::string value = canonical_value(spec.param, raw);
            const Rounding rounding = spec.param == SweptParam::Rounding
                                          ? parse_rounding(value)
                                          : spec.base.precision.rounding;
            for (int bits : spec.mantissa_bits) {
                for (std::uint64_t seed : spec.seeds) {
                    cells.push_back({value, bits, rounding, seed});
                }
            }
        }
    }

    // Dry-run every cell's config so bad values fail before any file I/O,
    // and reject duplicate cells (they would break resume-by-id).
    std::set<std::string> ids;
    for (const Cell& cell : cells) {
        NetworkSpec net = spec.net;
        TrainConfig cfg = spec.base;
        apply_cell(spec.param, cell, net, cfg);
        net.validate();
        const std::string id = make_run_id(spec.param, cell.value, cell.mantissa_bits,
                                           cell.rounding, cfg.precision.granularity, cell.seed);
        if (!ids.insert(id).second) {
            throw std::invalid_argument("duplicate sweep cell " + id);
        }
    }
    return cells;
}

// run_ids of rows already terminal in an existing CSV; partial trailing
// lines (interrupted writes) are ignored so the cell gets recomputed.
std::set<std::string> completed_ids(const std::string& path) {
    std::set<std::string> done;
    std::ifstream in(path);
    if (!in) return done;
    std::string line;
    if (!std::getline(in, line)) return done;
    if (line != kSweepCsvHeader) {
        throw std::runtime_error(path + " exists but its header does not match the sweep schema");
    }
    while (std::getline(in, line)) {
        const auto first_comma = line.find(',');
        const auto last_comma = line.rfind(',');
        if (first_comma == std::string::npos || last_comma <= first_comma) continue;
        const std::string status = line.substr(last_comma + 1);
        if (status == "completed" || status == "diverged") {
            done.insert(line.substr(0, first_comma));
        }
    }
    return done;
}

std::string csv_row(const SweepSpec& spec, const Cell& cell, const RunRecord& record) {
    std::ostringstream out;
    const std::size_t epochs_run =
        record.status == RunStatus::Diverged ? record.diverged_epoch
                                             : record.epoch_accuracy.size();
    out << record.run_id << ',' << record.swept_param << ',' << record.swept_value << ','
        << cell.mantissa_bits << ',' << rounding_name(cell.rounding) << ','
        << granularity_name(record.config.precision.granularity) << ',' << cell.seed << ','
        << epochs_run << ','
        << (record.epoch_accuracy.empty() ? "-1" : format_double(record.epoch_accuracy.back()))
        << ','
        << (record.epochs_to_threshold ? std::to_string(*record.epochs_to_threshold) : "-1")
        << ',' << (record.status == RunStatus::Diverged ? "diverged" : "completed");
    (void)spec;
    return out.str();
}

}  // namespace

std::string swept_param_name(SweptParam p) {
    switch (p) {
        case SweptParam::Bitsize: return "bitsize";
        case SweptParam::Rounding: return "rounding";
        case SweptParam::DenseLayers: return "dense-layers";
        case SweptParam::DenseUnits: return "dense-units";
        case SweptParam::BatchSize: return "batch-size";
        case SweptParam::InitPerturbation: return "init-perturbation";
    }
    throw std::invalid_argument("unknown swept parameter");
}

SweptParam parse_swept_param(const std::string& name) {
    if (name == "bitsize") return SweptParam::Bitsize;
    if (name == "rounding") return SweptParam::Rounding;
    if (name == "dense-layers") return SweptParam::DenseLayers;
    if (name == "dense-units") return SweptParam::DenseUnits;
    if (name == "batch-size") return SweptParam::BatchSize;
    if (name == "init-perturbation") return SweptParam::InitPerturbation;
    throw std::invalid_argument("unknown sweep parameter '" + name + "'");
}

std::string rounding_name(Rounding r) {
    return r == Rounding::Truncate ? "truncate" : "stochastic";
}

Rounding parse_rounding(const std::string& name) {
    if (name == "truncate") return Rounding::Truncate;
    if (name == "stochastic") return Rounding::Stochastic;
    throw std::invalid_argument("unknown rounding '" + name + "' (truncate|stochastic)");
}

std::string granularity_name(Granularity g) {
    switch (g) {
        case Granularity::PerBatch: return "batch";
        case Granularity::PerLayer: return "layer";
        case Granularity::PerOperation: return "op";
        case Granularity::None: return "none";
    }
    throw std::invalid_argument("unknown granularity");
}

Granularity parse_granularity(const std::string& name) {
    if (name == "batch") return Granularity::PerBatch;
    if (name == "layer") return Granularity::PerLayer;
    if (name == "op") return Granularity::PerOperation;
    if (name == "none") return Granularity::None;
    throw std::invalid_argument("unknown granularity '" + name + "' (batch|layer|op|none)");
}

std::optional<std::size_t> epochs_to_threshold(const std::vector<double>& epoch_accuracy,
                                               double threshold) {
    for (std::size_t i = 0; i < epoch_accuracy.size(); ++i) {
        if (epoch_accuracy[i] >= threshold) return i + 1;
    }
    return std::nullopt;
}

std::optional<std::size_t> epochs_to_threshold(const RunRecord& record, double threshold) {
    return epochs_to_threshold(record.epoch_accuracy, threshold);
}

std::string make_run_id(SweptParam param, const std::string& value, int mantissa_bits,
                        Rounding rounding, Granularity granularity, std::uint64_t seed) {
    std::ostringstream out;
    out << swept_param_name(param) << '=' << value << "_mb" << mantissa_bits << '_'
        << rounding_name(rounding) << '_' << granularity_name(granularity) << "_s" << seed;
    return out.str();
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::vector<RunRecord> run_sweep(const SweepSpec& spec, const Dataset& train_full,
                                 const Dataset& test_full, const std::string& out_path) {
    spec.net.validate();
    const std::vector<Cell> cells = build_cells(spec);
    const std::set<std::string> done = completed_ids(out_path);

    const Dataset train_set =
        spec.train_subset > 0 ? train_full.subset(spec.train_subset) : train_full;
    const Dataset test_set =
        spec.test_subset > 0 ? test_full.subset(spec.test_subset) : test_full;

    const bool fresh = !std::filesystem::exists(out_path);
    std::ofstream out(out_path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
    if (fresh) out << kSweepCsvHeader << '\n';

    auto run_cell = [&](const Cell& cell) {
        NetworkSpec net = spec.net;
        TrainConfig cfg = spec.base;
        apply_cell(spec.param, cell, net, cfg);
        const TrainResult result = train(net, cfg, train_set, test_set);
        RunRecord record;
        record.run_id = make_run_id(spec.param, cell.value, cell.mantissa_bits, cell.rounding,
                                    cfg.precision.granularity, cell.seed);
        record.swept_param = swept_param_name(spec.param);
        record.swept_value = cell.value;
        record.net = net;
        record.config = cfg;
        record.epoch_accuracy = result.epoch_accuracy;
        record.epochs_to_threshold = epochs_to_threshold(result.epoch_accuracy, spec.threshold);
        record.wall_seconds = result.wall_seconds;
        record.status = result.status;
        record.diverged_epoch = result.diverged_epoch;
        return record;
    };

    // Compute up to `workers` cells ahead, but always append rows in grid
    // order so resumed and fresh sweeps produce identical bytes.
    const std::size_t window = std::max<std::size_t>(1, spec.workers);
    std::vector<std::future<RunRecord>> pending(cells.size());
    std::vector<bool> skip(cells.size(), false);
    std::size_t launched = 0;
    auto launch_up_to = [&](std::size_t bound) {
        for (; launched < bound && launched < cells.size(); ++launched) {
            const Cell& cell = cells[launched];
            NetworkSpec net = spec.net;
            TrainConfig cfg = spec.base;
            apply_cell(spec.param, cell, net, cfg);
            const std::string id = make_run_id(spec.param, cell.value, cell.mantissa_bits,
                                               cell.rounding, cfg.precision.granularity,
                                               cell.seed);
            if (done.count(id)) {
                skip[launched] = true;
                continue;
            }
            pending[launched] = std::async(std::launch::async, run_cell, std::cref(cell));
        }
    };

    std::vector<RunRecord> computed;
    for (std::size_t k = 0; k < cells.size(); ++k) {
        launch_up_to(k + window);
        if (skip[k]) continue;
        RunRecord record = pending[k].get();
        out << csv_row(spec, cells[k], record) << '\n';
        out.flush();
        computed.push_back(std::move(record));
    }
    return computed;
}

void write_forward_error_csv(const std::vector<ForwardErrorRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "n,eps,predicted,measured,ratio,measured_trunc\n";
    for (const auto& row : rows) {
        out << row.n << ',' << format_double(row.eps) << ',' << format_double(row.predicted)
            << ',' << format_double(row.measured) << ',' << format_double(row.ratio) << ','
            << format_double(row.measured_trunc) << '\n';
    }
}

std::vector<BackpropReportRow> backprop_report_rows(std::uint64_t seed, std::size_t samples) {
    std::vector<BackpropErrorCase> cases;
    cases.push_back({0.5, 0.5, 0.1});
    cases.push_back({0.25, 0.75, 0.0});
    Rng rng(seed);
    for (std::size_t i = 0; i < samples; ++i) {
        BackpropErrorCase c;
        c.g = rng.uniform_symmetric();
        c.y = 0.01 + 0.98 * rng.next_double();
        c.eps_y = 0.1 * rng.uniform_symmetric();
        cases.push_back(c);
    }
    std::vector<BackpropReportRow> rows;
    rows.reserve(cases.size());
    for (const auto& c : cases) {
        BackpropReportRow row;
        row.c = c;
        row.expansion = backprop_error_expansion(c);
        row.step1 = step1_output_error(c.y, c.y + c.g, c.eps_y);
        rows.push_back(row);
    }
    return rows;
}

void write_backprop_csv(const std::vector<BackpropReportRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "g,y,eps_y,exact,term_sum,residual,step1_g_tilde,step1_alt,step1_discrepancy\n";
    for (const auto& row : rows) {
        out << format_double(row.c.g) << ',' << format_double(row.c.y) << ','
            << format_double(row.c.eps_y) << ',' << format_double(row.expansion.exact) << ','
            << format_double(row.expansion.term_sum()) << ','
            << format_double(row.expansion.residual()) << ','
            << format_double(row.step1.g_tilde) << ',' << format_double(row.step1.alt_g_tilde)
            << ',' << format_double(row.step1.discrepancy) << '\n';
    }
}

}  // namespace lowp
