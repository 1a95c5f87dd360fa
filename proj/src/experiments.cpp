#include "koopflow/experiments.hpp"

#include "koopflow/errors.hpp"
#include "koopflow/textio.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace koopflow {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> trl2e_values(const std::vector<ErrorReport>& reports) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const auto& r : reports) v.push_back(r.trl2e);
    return v;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

ReportRow at_most(std::string quantity, std::string reference, double obtained, double bound) {
    return {std::move(quantity), std::move(reference), obtained, "<= " + fmt(bound), obtained <= bound};
}

ReportRow at_least(std::string quantity, std::string reference, double obtained, double bound) {
    return {std::move(quantity), std::move(reference), obtained, ">= " + fmt(bound), obtained >= bound};
}

ReportRow info(std::string quantity, std::string reference, double obtained) {
    return {std::move(quantity), std::move(reference), obtained, "-", true};
}

void log_line(const ReproduceOptions& opts, const std::string& msg) {
    if (opts.log) *opts.log << msg << std::endl;
}

ExperimentConfig target_config(SystemKind kind, const ReproduceOptions& opts) {
    ExperimentConfig cfg = preset(kind);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.max_epochs) cfg.flowdmd.training.max_epochs = *opts.max_epochs;
    return cfg;
}

void dump_comparison(const ReproduceOptions& opts, const std::string& stem, const Comparison& cmp) {
    if (opts.out_dir.empty()) return;
    std::filesystem::create_directories(opts.out_dir);
    const std::string path = (std::filesystem::path(opts.out_dir) / (stem + "_summary.csv")).string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    std::vector<ErrorReport> all = cmp.flowdmd;
    all.insert(all.end(), cmp.exact.begin(), cmp.exact.end());
    write_summary_csv(out, all);
}

EpochHook progress_hook(const ReproduceOptions& opts, const std::string& label) {
    if (!opts.log) return {};
    std::ostream* log = opts.log;
    return [log, label](const EpochRecord& r) {
        if (r.epoch % 100 == 0)
            *log << "  [" << label << "] epoch " << r.epoch << " train " << fmt(r.total) << " val " << fmt(r.val_total)
                 << " lr " << fmt(r.lr) << std::endl;
    };
}

// Allen-Cahn runs shared by the sensitivity targets: same data, one setting varied.
Comparison allen_cahn_run(const ReproduceOptions& opts, const Dataset& data, const std::string& label,
                          const std::function<void(ExperimentConfig&)>& adjust) {
    ExperimentConfig cfg = target_config(SystemKind::allen_cahn, opts);
    adjust(cfg);
    log_line(opts, "running " + label);
    Comparison cmp = run_comparison(cfg, data, progress_hook(opts, label));
    log_line(opts, "  " + label + ": mean TRL2E " + fmt(cmp.mean_flowdmd) + " (" + fmt(cmp.seconds) + " s)");
    dump_comparison(opts, label, cmp);
    return cmp;
}

ReproduceReport comparison_target(const std::string& target, SystemKind kind, const ReproduceOptions& opts) {
    ReproduceReport rep;
    rep.target = target;
    const ExperimentConfig cfg = target_config(kind, opts);
    log_line(opts, "generating " + to_string(kind) + " dataset (" + std::to_string(cfg.n_samples) + " samples)");
    const Dataset data = make_experiment_dataset(cfg);
    const Comparison cmp = run_comparison(cfg, data, progress_hook(opts, target));
    dump_comparison(opts, target, cmp);

    const double wins = cmp.win_fraction();
    if (kind == SystemKind::fixed_point) {
        rep.description = "fixed-point attractor, depth-3 affine flow, r=2";
        rep.rows.push_back(at_most("mean test TRL2E FlowDMD", "0.003", cmp.mean_flowdmd, 0.02));
        rep.rows.push_back(at_least("mean test TRL2E Exact DMD", "0.2448 (one sample)", cmp.mean_exact, 0.05));
        rep.rows.push_back(at_least("fraction of test samples FlowDMD < Exact DMD", "almost all", wins, 0.8));
        // The showcased sample: first test trajectory.
        rep.rows.push_back(info("showcase FlowDMD TRL2E", "0.0018", cmp.flowdmd.front().trl2e));
        rep.rows.push_back(info("showcase Exact DMD TRL2E", "0.2448", cmp.exact.front().trl2e));
        rep.rows.push_back({"showcase FlowDMD below Exact DMD", "yes", cmp.flowdmd.front().trl2e, "< exact",
                            cmp.flowdmd.front().trl2e < cmp.exact.front().trl2e});
    } else if (kind == SystemKind::burgers) {
        rep.description = "Burgers, nx=30, residual flow, r=3";
        rep.rows.push_back(at_most("mean test TRL2E FlowDMD", "0.015", cmp.mean_flowdmd, 0.08));
        rep.rows.push_back(info("mean test TRL2E Exact DMD", "0.08 (one sample)", cmp.mean_exact));
        rep.rows.push_back(at_least("fraction of test samples FlowDMD < Exact DMD", "most", wins, 0.6));
    } else {
        rep.description = "Allen-Cahn, nx=20, residual flow, r=3";
        rep.rows.push_back(at_most("mean test TRL2E FlowDMD", "0.09", cmp.mean_flowdmd, 0.2));
        rep.rows.push_back(info("mean test TRL2E Exact DMD", "0.6129 (one sample)", cmp.mean_exact));
        rep.rows.push_back(info("fraction of test samples FlowDMD < Exact DMD", "most", wins));
    }
    rep.rows.push_back(info("best epoch", "-", cmp.model.best_epoch));
    return rep;
}

ReproduceReport rank_target(const ReproduceOptions& opts) {
    ReproduceReport rep;
    rep.target = "table_rank";
    rep.description = "Allen-Cahn, TRL2E against DMD rank";
    const ExperimentConfig base = target_config(SystemKind::allen_cahn, opts);
    const Dataset data = make_experiment_dataset(base);
    const int ranks[] = {1, 3, 5, 7, 9};
    const char* reference[] = {"0.174", "0.068", "0.067", "0.009", "0.003"};
    std::vector<double> values;
    for (int i = 0; i < 5; ++i) {
        const int r = ranks[i];
        const Comparison cmp = allen_cahn_run(opts, data, "table_rank_r" + std::to_string(r),
                                              [r](ExperimentConfig& c) { c.flowdmd.rank = r; });
        values.push_back(cmp.mean_flowdmd);
        rep.rows.push_back(info("mean test TRL2E r=" + std::to_string(r), reference[i], cmp.mean_flowdmd));
    }
    rep.rows.push_back(at_least("TRL2E(r=1) / TRL2E(r=9)", "58", values.front() / values.back(), 5.0));
    const int inversions = count_inversions(values);
    rep.rows.push_back({"adjacent increases over r", "0", static_cast<double>(inversions), "<= 1", inversions <= 1});
    return rep;
}

ReproduceReport alpha_target(const ReproduceOptions& opts) {
    ReproduceReport rep;
    rep.target = "table_alpha";
    rep.description = "Allen-Cahn, TRL2E against loss weight alpha";
    const ExperimentConfig base = target_config(SystemKind::allen_cahn, opts);
    const Dataset data = make_experiment_dataset(base);
    const double alphas[] = {0.01, 0.1, 1.0, 10.0, 100.0};
    const char* reference[] = {"0.062", "0.068", "0.082", "0.032", "0.069"};
    for (int i = 0; i < 5; ++i) {
        const double a = alphas[i];
        const Comparison cmp = allen_cahn_run(opts, data, "table_alpha_" + textio::format_double(a),
                                              [a](ExperimentConfig& c) { c.flowdmd.alpha = a; });
        // The reference spread is small; hold every alpha to the main Allen-Cahn bound.
        rep.rows.push_back(at_most("mean test TRL2E alpha=" + textio::format_double(a), reference[i],
                                   cmp.mean_flowdmd, 0.2));
    }
    return rep;
}

ReproduceReport seeds_target(const ReproduceOptions& opts) {
    ReproduceReport rep;
    rep.target = "fig14";
    rep.description = "Allen-Cahn, TRL2E across network initialisations";
    const ExperimentConfig base = target_config(SystemKind::allen_cahn, opts);
    const Dataset data = make_experiment_dataset(base);
    const int n = opts.seeds.value_or(15);
    std::vector<double> values;
    for (int s = 1; s <= n; ++s) {
        const Comparison cmp = allen_cahn_run(opts, data, "fig14_seed" + std::to_string(s), [s](ExperimentConfig& c) {
            c.init_seed = static_cast<std::uint64_t>(s);
        });
        values.push_back(cmp.mean_flowdmd);
        rep.rows.push_back(info("mean test TRL2E init seed " + std::to_string(s), "-", cmp.mean_flowdmd));
    }
    const double mu = mean(values), sd = stddev(values);
    rep.rows.push_back(info("mean over seeds", "0.065", mu));
    rep.rows.push_back(info("std over seeds", "0.016", sd));
    rep.rows.push_back({"std <= mean", "yes", sd, "<= " + fmt(mu), sd <= mu});
    return rep;
}

ReproduceReport ae_target(const ReproduceOptions& opts) {
    ReproduceReport rep;
    rep.target = "fig2";
    rep.description = "autoencoder on fixed-point data, out-of-distribution probes";
    ExperimentConfig cfg = target_config(SystemKind::fixed_point, opts);
    cfg.ae.seed = cfg.training_seed();
    const Dataset data = make_experiment_dataset(cfg);
    log_line(opts, "training autoencoder");
    const AeResult ae = train_ae_baseline(cfg.ae, data);
    const AeReport& r = ae.report;
    rep.rows.push_back(info("mean ||D(E(x)) - x|| training", "-", r.train_error));
    rep.rows.push_back(info("mean ||D(E(x)) - x|| held-out", "near zero", r.in_distribution_error));
    rep.rows.push_back(info("mean ||D(E(x)) - x|| sin curve", "large", r.sin_error));
    rep.rows.push_back(info("mean ||D(E(x)) - x|| S curve", "large", r.s_curve_error));
    rep.rows.push_back(info("mean ||D(E(x)) - x|| standard normal", "large", r.normal_error));
    rep.rows.push_back(info("mean ||E(D(z)) - z|| standard normal latents", "not small", r.latent_cycle_error));
    rep.rows.push_back(at_least("normal / held-out error", "-", r.normal_error / r.in_distribution_error, 5.0));
    rep.rows.push_back(at_least("latent cycle / training error", "-", r.latent_cycle_error / r.train_error, 5.0));
    return rep;
}

}  // namespace

Dataset make_experiment_dataset(const ExperimentConfig& cfg) {
    return make_dataset(cfg.system, cfg.n_samples, cfg.seed, cfg.split, generation_threads(cfg));
}

Comparison run_comparison(const ExperimentConfig& cfg, const Dataset& data, const EpochHook& hook) {
    const auto t0 = Clock::now();
    Comparison out;
    FlowDmdTrainer trainer(cfg.resolved_flowdmd(), data);
    trainer.on_epoch = hook;
    trainer.run();
    out.model = trainer.result();
    out.flowdmd = evaluate_flowdmd(out.model.flow, data.test, cfg.flowdmd.rank);
    out.exact = evaluate_exact_dmd(data.test, cfg.flowdmd.rank);
    out.mean_flowdmd = mean(trl2e_values(out.flowdmd));
    out.mean_exact = mean(trl2e_values(out.exact));
    for (std::size_t i = 0; i < out.flowdmd.size(); ++i)
        if (out.flowdmd[i].trl2e < out.exact[i].trl2e) ++out.wins;
    out.seconds = seconds_since(t0);
    return out;
}

bool ReproduceReport::passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.pass; });
}

const std::vector<std::string>& reproduce_targets() {
    static const std::vector<std::string> targets{"fig1", "fig7", "fig10", "table_rank", "table_alpha", "fig2", "fig14"};
    return targets;
}

ReproduceReport reproduce(const std::string& target, const ReproduceOptions& opts) {
    const auto t0 = Clock::now();
    ReproduceReport rep;
    if (target == "fig1")
        rep = comparison_target(target, SystemKind::fixed_point, opts);
    else if (target == "fig7")
        rep = comparison_target(target, SystemKind::burgers, opts);
    else if (target == "fig10")
        rep = comparison_target(target, SystemKind::allen_cahn, opts);
    else if (target == "table_rank")
        rep = rank_target(opts);
    else if (target == "table_alpha")
        rep = alpha_target(opts);
    else if (target == "fig2")
        rep = ae_target(opts);
    else if (target == "fig14")
        rep = seeds_target(opts);
    else {
        std::string valid;
        for (const auto& t : reproduce_targets()) valid += (valid.empty() ? "" : ", ") + t;
        throw UsageError("unknown reproduce target '" + target + "' (valid: " + valid + ")");
    }
    rep.seconds = seconds_since(t0);
    return rep;
}

void write_reproduce_csv(std::ostream& out, const ReproduceReport& report) {
    using textio::csv_field;
    out << "target,quantity,reference,obtained,criterion,pass\n";
    for (const auto& r : report.rows)
        out << csv_field(report.target) << ',' << csv_field(r.quantity) << ',' << csv_field(r.reference) << ','
            << textio::format_double(r.obtained) << ',' << csv_field(r.criterion) << ',' << (r.pass ? "pass" : "FAIL")
            << '\n';
}

void print_reproduce_report(std::ostream& out, const ReproduceReport& report) {
    out << report.target << ": " << report.description << "\n";
    std::size_t w = 8;
    for (const auto& r : report.rows) w = std::max(w, r.quantity.size());
    out << "  " << std::left << std::setw(static_cast<int>(w)) << "quantity" << "  " << std::setw(20) << "reference"
        << std::setw(14) << "obtained" << std::setw(12) << "criterion" << "result\n";
    for (const auto& r : report.rows)
        out << "  " << std::setw(static_cast<int>(w)) << r.quantity << "  " << std::setw(20) << r.reference
            << std::setw(14) << fmt(r.obtained) << std::setw(12) << r.criterion << (r.pass ? "pass" : "FAIL") << "\n";
    out << std::right << "  " << (report.passed() ? "PASS" : "FAIL") << " (" << fmt(report.seconds) << " s)\n";
}

int count_inversions(const std::vector<double>& v) {
    int n = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[i - 1]) ++n;
    return n;
}

}  // namespace koopflow
