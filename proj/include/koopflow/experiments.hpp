#pragma once

// End-to-end experiment drivers shared by the command line tool and the
// acceptance suite: train FlowDMD on a dataset, compare against Exact DMD,
// and the sensitivity sweeps.

#include "koopflow/config.hpp"
#include "koopflow/metrics.hpp"
#include "koopflow/training.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace koopflow {

struct Comparison {
    TrainedModel model;
    std::vector<ErrorReport> flowdmd;  // one per test trajectory
    std::vector<ErrorReport> exact;
    double mean_flowdmd = 0.0;
    double mean_exact = 0.0;
    int wins = 0;  // test trajectories where FlowDMD has the lower TRL2E
    double seconds = 0.0;

    double win_fraction() const { return flowdmd.empty() ? 0.0 : static_cast<double>(wins) / flowdmd.size(); }
};

using EpochHook = std::function<void(const EpochRecord&)>;

/// Trains with cfg.resolved_flowdmd() and scores both methods on data.test.
Comparison run_comparison(const ExperimentConfig& cfg, const Dataset& data, const EpochHook& hook = {});

/// Dataset for cfg (n_samples, seed, split, generation threads).
Dataset make_experiment_dataset(const ExperimentConfig& cfg);

struct ReportRow {
    std::string quantity;
    std::string reference;  // reference value, or "-" when there is none
    double obtained = 0.0;
    std::string criterion;  // e.g. "<= 0.02"
    bool pass = true;
};

struct ReproduceReport {
    std::string target;
    std::string description;
    std::vector<ReportRow> rows;
    double seconds = 0.0;

    bool passed() const;
};

struct ReproduceOptions {
    std::optional<std::uint64_t> seed;    // dataset seed override
    std::optional<int> max_epochs;        // cap for quick runs
    std::optional<int> seeds;             // fig14: number of initialisations
    std::string out_dir;                  // when set, per-run CSVs are written here
    std::ostream* log = nullptr;          // progress lines
};

const std::vector<std::string>& reproduce_targets();
/// Throws UsageError listing the valid targets for an unknown name.
ReproduceReport reproduce(const std::string& target, const ReproduceOptions& opts = {});

/// target,quantity,reference,obtained,criterion,pass
void write_reproduce_csv(std::ostream& out, const ReproduceReport& report);
/// Fixed-width table for terminals.
void print_reproduce_report(std::ostream& out, const ReproduceReport& report);

/// Adjacent increases in a sequence that should be non-increasing.
int count_inversions(const std::vector<double>& v);

}  // namespace koopflow
