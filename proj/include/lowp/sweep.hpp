#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lowp/analysis.hpp"
#include "lowp/data.hpp"
#include "lowp/network.hpp"

namespace lowp {

enum class SweptParam { Bitsize, Rounding, DenseLayers, DenseUnits, BatchSize, InitPerturbation };

// Canonical names used in CSV columns and run ids:
// bitsize, rounding, dense-layers, dense-units, batch-size, init-perturbation.
std::string swept_param_name(SweptParam p);
SweptParam parse_swept_param(const std::string& name);

std::string rounding_name(Rounding r);
Rounding parse_rounding(const std::string& name);
std::string granularity_name(Granularity g);
Granularity parse_granularity(const std::string& name);

// One parameter varies per sweep; everything else is pinned by `net`/`base`.
// The cell grid is values x mantissa_bits x seeds, except the bitsize sweep
// whose swept values are the mantissa_bits list itself.
struct SweepSpec {
    SweptParam param = SweptParam::Bitsize;
    std::vector<std::string> values;  // parsed per param; unused for bitsize
    std::vector<int> mantissa_bits{23};
    std::vector<std::uint64_t> seeds{1};
    NetworkSpec net;
    TrainConfig base;
    std::size_t train_subset = 0;  // 0 keeps the whole split
    std::size_t test_subset = 0;
    double threshold = 0.9;       // convergence metric: epochs to this test accuracy
    std::size_t workers = 1;      // concurrent cells; output order stays deterministic
};

struct RunRecord {
    std::string run_id;
    std::string swept_param;
    std::string swept_value;
    NetworkSpec net;
    TrainConfig config;  // full snapshot, seed and precision included
    std::vector<double> epoch_accuracy;
    std::optional<std::size_t> epochs_to_threshold;  // 1-based
    double wall_seconds = 0.0;
    RunStatus status = RunStatus::Completed;
    std::size_t diverged_epoch = 0;
};

// First 1-based epoch whose test accuracy reaches `threshold`; nullopt when
// no epoch does.
std::optional<std::size_t> epochs_to_threshold(const std::vector<double>& epoch_accuracy,
                                               double threshold);
std::optional<std::size_t> epochs_to_threshold(const RunRecord& record, double threshold);

inline constexpr const char* kSweepCsvHeader =
    "run_id,swept_param,swept_value,mantissa_bits,rounding,granularity,seed,epoch,"
    "test_accuracy,epochs_to_90,status";

// Trains every cell of the grid and appends one CSV row per run to out_path
// (creating the file and header as needed). Cells whose run_id already has a
// row are skipped, so interrupted sweeps resume where they stopped. Rows are
// written in grid order regardless of `workers`, keeping reruns
// byte-identical. Returns the records computed by this invocation.
/// Numeric placeholders: test_accuracy and epochs_to_90 are -1 when absent
// (diverged before the first evaluation / threshold never reached).
std::vector<RunRecord> run_sweep(const SweepSpec& spec, const Dataset& train_full,
                                 const Dataset& test_full, const std::string& out_path);

// Deterministic cell id, e.g. "dense-layers=3_mb7_truncate_batch_s1".
std::string make_run_id(SweptParam param, const std::string& value, int mantissa_bits,
                        Rounding rounding, Granularity granularity, std::uint64_t seed);

// Shortest round-trip decimal formatting (17 significant digits never needed
// unless required); used for every float written to CSV so identical runs
// produce identical bytes.
std::string format_double(double v);

// Forward-error report (header: n,eps,predicted,measured,ratio,measured_trunc).
void write_forward_error_csv(const std::vector<ForwardErrorRow>& rows, const std::string& path);

// Backprop expansion residuals plus both step-1 sign conventions, with
// y0 = y + g so the case is fully determined by (g, y, eps_y).
// Header: g,y,eps_y,exact,term_sum,residual,step1_g_tilde,step1_alt,step1_discrepancy.
struct BackpropReportRow {
    BackpropErrorCase c;
    BackpropExpansion expansion;
    Step1Error step1;
};
std::vector<BackpropReportRow> backprop_report_rows(std::uint64_t seed, std::size_t samples);
void write_backprop_csv(const std::vector<BackpropReportRow>& rows, const std::string& path);

}  // namespace lowp
