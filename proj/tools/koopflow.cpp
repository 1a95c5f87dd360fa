// Command line front end: generate, train, evaluate, reproduce.

#include "koopflow/config.hpp"
#include "koopflow/errors.hpp"
#include "koopflow/experiments.hpp"
#include "koopflow/textio.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef KOOPFLOW_VERSION
#define KOOPFLOW_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace koopflow;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfigExit = 2, kNumericExit = 3, kIoExit = 4 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

ExperimentConfig load(const Common& c) {
    ExperimentConfig cfg = load_config_file(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
    fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
    out.close();
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string config_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    write_config(os, cfg);
    return os.str();
}

json manifest_base(const std::string& command, const ExperimentConfig& cfg) {
    return json{{"command", command},
                {"version", KOOPFLOW_VERSION},
                {"experiment", cfg.name},
                {"system", to_string(cfg.system.kind)},
                {"seed", cfg.seed},
                {"init_seed", cfg.training_seed()},
                {"config", config_text(cfg)}};
}

void write_manifest(const fs::path& dir, const std::string& name, const json& j) {
    const fs::path path = dir / name;
    auto out = open_out(path);
    out << j.dump(2) << "\n";
    close_out(out, path);
}

Dataset load_or_generate(const ExperimentConfig& cfg, const std::string& dataset_path, const fs::path& dir) {
    const fs::path p = dataset_path.empty() ? dir / "dataset.txt" : fs::path(dataset_path);
    if (fs::exists(p)) return read_dataset_file(p.string());
    if (!dataset_path.empty()) throw IoError("dataset file '" + p.string() + "' not found");
    std::cerr << "no dataset at " << p.string() << "; generating one\n";
    Dataset ds = make_experiment_dataset(cfg);
    write_dataset_file(ds, p.string());
    return ds;
}

void check_dataset(const ExperimentConfig& cfg, const Dataset& ds) {
    if (ds.system != cfg.system.kind)
        throw ConfigError("dataset holds " + to_string(ds.system) + " trajectories but the config declares " +
                          to_string(cfg.system.kind));
    if (ds.state_dim() != cfg.system.state_dim())
        throw ConfigError("dataset state dimension " + std::to_string(ds.state_dim()) + " differs from the config (" +
                          std::to_string(cfg.system.state_dim()) + ")");
}

int cmd_generate(const Common& c) {
    const ExperimentConfig cfg = load(c);
    const fs::path dir = out_dir(cfg);
    const Dataset ds = make_experiment_dataset(cfg);
    write_dataset_file(ds, (dir / "dataset.txt").string());
    {
        const fs::path p = dir / "dataset.csv";
        auto out = open_out(p);
        write_dataset_csv(ds, out);
        close_out(out, p);
    }
    json m = manifest_base("generate", cfg);
    m["counts"] = {{"train", ds.train.size()}, {"validation", ds.validation.size()}, {"test", ds.test.size()}};
    m["state_dim"] = ds.state_dim();
    m["steps"] = ds.steps();
    m["dt"] = ds.dt;
    m["files"] = {"dataset.txt", "dataset.csv"};
    write_manifest(dir, "generate_manifest.json", m);
    std::cout << "wrote " << ds.size() << " trajectories (" << ds.train.size() << "/" << ds.validation.size() << "/"
              << ds.test.size() << ") to " << dir.string() << "\n";
    return kOk;
}

int cmd_train(const Common& c, const std::string& dataset_path, bool resume, int checkpoint_every, bool quiet) {
    const ExperimentConfig cfg = load(c);
    const fs::path dir = out_dir(cfg);
    const Dataset ds = load_or_generate(cfg, dataset_path, dir);
    check_dataset(cfg, ds);

    FlowDmdTrainer trainer(cfg.resolved_flowdmd(), ds);
    const fs::path ckpt = dir / "checkpoint.txt";
    if (resume) {
        std::ifstream in(ckpt);
        if (!in) throw IoError("no checkpoint to resume from at '" + ckpt.string() + "'");
        trainer.load_state(in);
        std::cout << "resumed at epoch " << trainer.epoch() << "\n";
    }
    auto save = [&] {
        const fs::path tmp = dir / "checkpoint.txt.tmp";
        auto out = open_out(tmp);
        trainer.save_state(out);
        close_out(out, tmp);
        fs::rename(tmp, ckpt);
    };
    trainer.on_epoch = [&](const EpochRecord& r) {
        if (!quiet && (r.epoch % 50 == 0 || r.epoch == 1))
            std::cout << "epoch " << r.epoch << " l_linear " << r.l_linear << " l_rec " << r.l_rec << " val "
                      << r.val_total << " lr " << r.lr << std::endl;
    };
    while (!trainer.finished()) {
        trainer.run(checkpoint_every);
        save();
    }
    save();

    const TrainedModel model = trainer.result();
    save_flow_file(model.flow, (dir / "flow.txt").string());
    {
        const fs::path p = dir / "history.csv";
        auto out = open_out(p);
        write_history_csv(out, model.history);
        close_out(out, p);
    }
    json m = manifest_base("train", cfg);
    m["epochs"] = trainer.epoch();
    m["best_epoch"] = model.best_epoch;
    m["best_val"] = model.best_val;
    m["parameters"] = model.flow.parameter_count();
    m["files"] = {"flow.txt", "checkpoint.txt", "history.csv"};
    write_manifest(dir, "train_manifest.json", m);
    std::cout << "trained " << trainer.epoch() << " epochs; best validation loss " << model.best_val << " at epoch "
              << model.best_epoch << "\n";
    return kOk;
}

FlowNetwork load_model(const ExperimentConfig& cfg, const Dataset& ds, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("checkpoint '" + path.string() + "' not found");
    std::string head;
    in >> head;
    in.seekg(0);
    if (head == "koopflow-trainer") {
        FlowDmdTrainer trainer(cfg.resolved_flowdmd(), ds);
        trainer.load_state(in);
        return trainer.best_flow();
    }
    return load_flow(in);
}

void write_plot_data(const fs::path& dir, const std::vector<std::vector<ErrorReport>>& per_method,
                     const Trajectory& sample, const std::vector<Matrix>& reconstructions) {
    // TRL2E per test sample, one column per method.
    {
        const fs::path p = dir / "trl2e.dat";
        auto out = open_out(p);
        out << "# sample_id";
        for (const auto& m : per_method) out << ' ' << m.front().method;
        out << '\n';
        for (std::size_t i = 0; i < per_method.front().size(); ++i) {
            out << per_method.front()[i].sample_id;
            for (const auto& m : per_method) out << ' ' << textio::format_double(m[i].trl2e);
            out << '\n';
        }
        close_out(out, p);
    }
    const std::string stem = "sample_" + std::to_string(sample.sample_id);
    {
        const fs::path p = dir / (stem + "_error.dat");
        auto out = open_out(p);
        out << "# t";
        for (const auto& m : per_method) out << " rl2e_" << m.front().method << " mse_" << m.front().method;
        out << '\n';
        const auto& first = per_method.front();
        std::size_t idx = 0;
        while (idx < first.size() && first[idx].sample_id != sample.sample_id) ++idx;
        for (std::size_t t = 0; t < first[idx].rl2e.size(); ++t) {
            out << textio::format_double(static_cast<double>(t + 1) * sample.dt);
            for (const auto& m : per_method)
                out << ' ' << textio::format_double(m[idx].rl2e[t]) << ' ' << textio::format_double(m[idx].mse[t]);
            out << '\n';
        }
        close_out(out, p);
    }
    {
        // Blocks separated by blank lines (gnuplot "index"): truth, then each method.
        const fs::path p = dir / (stem + "_states.dat");
        auto out = open_out(p);
        auto block = [&](const std::string& label, const Matrix& x) {
            out << "# " << label << "\n";
            for (Eigen::Index t = 0; t < x.rows(); ++t) {
                out << textio::format_double(static_cast<double>(t) * sample.dt);
                for (Eigen::Index j = 0; j < x.cols(); ++j) out << ' ' << textio::format_double(x(t, j));
                out << '\n';
            }
            out << "\n\n";
        };
        block("truth", sample.states);
        for (std::size_t k = 0; k < per_method.size(); ++k) block(per_method[k].front().method, reconstructions[k]);
        close_out(out, p);
    }
}

int cmd_evaluate(const Common& c, const std::string& dataset_path, const std::string& checkpoint,
                 const std::vector<std::string>& methods, int sample_index) {
    const ExperimentConfig cfg = load(c);
    const fs::path dir = out_dir(cfg);
    const fs::path dpath = dataset_path.empty() ? dir / "dataset.txt" : fs::path(dataset_path);
    if (!fs::exists(dpath)) throw IoError("dataset file '" + dpath.string() + "' not found");
    const Dataset ds = read_dataset_file(dpath.string());
    check_dataset(cfg, ds);
    if (ds.test.empty()) throw ConfigError("dataset has no test trajectories");
    if (sample_index < 0 || sample_index >= static_cast<int>(ds.test.size()))
        throw ConfigError("--sample must lie in [0, " + std::to_string(ds.test.size() - 1) + "]");
    if (methods.empty()) throw ConfigError("--methods is empty");

    const int rank = cfg.flowdmd.rank;
    const Trajectory& sample = ds.test[static_cast<std::size_t>(sample_index)];
    std::vector<std::vector<ErrorReport>> per_method;
    std::vector<Matrix> sample_recon;
    json summary = json::object();
    for (const auto& method : methods) {
        if (method == "flowdmd") {
            const FlowNetwork flow = load_model(cfg, ds, checkpoint.empty() ? dir / "flow.txt" : fs::path(checkpoint));
            if (flow.dim() != ds.state_dim()) throw ConfigError("checkpoint dimension differs from the dataset");
            per_method.push_back(evaluate_flowdmd(flow, ds.test, rank));
            sample_recon.push_back(reconstruct_flowdmd(flow, sample.states, rank));
        } else if (method == "exact_dmd") {
            per_method.push_back(evaluate_exact_dmd(ds.test, rank));
            sample_recon.push_back(reconstruct_exact_dmd(sample.states, rank));
        } else if (method == "ae_baseline") {
            AeConfig ae = cfg.ae;
            ae.seed = cfg.training_seed();
            const int m = ds.state_dim();
            if (ae.encoder.front() != m || ae.decoder.back() != m)
                throw ConfigError("[ae] encoder/decoder widths must start/end with the state dimension " +
                                  std::to_string(m));
            if (ae.encoder.back() < rank) throw ConfigError("[ae] latent width is smaller than the DMD rank");
            const AeResult res = train_ae_baseline(ae, ds);
            std::vector<ErrorReport> reps;
            for (const auto& tr : ds.test)
                reps.push_back(make_error_report(reconstruct_ae_dmd(res.encoder, res.decoder, tr.states, rank), tr.states,
                                                 tr.sample_id, "ae_baseline"));
            per_method.push_back(std::move(reps));
            sample_recon.push_back(reconstruct_ae_dmd(res.encoder, res.decoder, sample.states, rank));
        } else {
            throw ConfigError("unknown method '" + method + "' (expected flowdmd, exact_dmd or ae_baseline)");
        }
        std::vector<double> v;
        for (const auto& r : per_method.back()) v.push_back(r.trl2e);
        summary[method] = {{"mean_trl2e", mean(v)}, {"std_trl2e", stddev(v)}};
        std::cout << method << ": mean TRL2E " << mean(v) << " over " << v.size() << " test trajectories\n";
    }

    std::vector<ErrorReport> all, designated;
    for (const auto& m : per_method) {
        all.insert(all.end(), m.begin(), m.end());
        for (const auto& r : m)
            if (r.sample_id == sample.sample_id) designated.push_back(r);
    }
    {
        const fs::path p = dir / "summary.csv";
        auto out = open_out(p);
        write_summary_csv(out, all);
        close_out(out, p);
    }
    {
        const fs::path p = dir / "report.csv";
        auto out = open_out(p);
        write_report_csv(out, designated);
        close_out(out, p);
    }
    write_plot_data(dir, per_method, sample, sample_recon);
    json m = manifest_base("evaluate", cfg);
    m["methods"] = methods;
    m["designated_sample"] = sample.sample_id;
    m["summary"] = summary;
    write_manifest(dir, "evaluate_manifest.json", m);
    return kOk;
}

int cmd_reproduce(const std::string& target, const std::string& out, std::optional<std::uint64_t> seed,
                  std::optional<int> max_epochs, std::optional<int> seeds) {
    ReproduceOptions opts;
    opts.seed = seed;
    opts.max_epochs = max_epochs;
    opts.seeds = seeds;
    opts.out_dir = out;
    opts.log = &std::cerr;
    const ReproduceReport rep = reproduce(target, opts);
    print_reproduce_report(std::cout, rep);
    if (!out.empty()) {
        fs::create_directories(out);
        const fs::path p = fs::path(out) / (target + "_report.csv");
        auto f = open_out(p);
        write_reproduce_csv(f, rep);
        close_out(f, p);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Koopman embeddings with coupling-flow networks and DMD"};
    app.set_version_flag("--version", std::string(KOOPFLOW_VERSION));
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "dataset seed (overrides the config)");
        sub->add_option("--out", common.out, "output directory (overrides the config)");
    };

    auto* gen = app.add_subcommand("generate", "simulate a dataset and write it with a manifest");
    add_common(gen);

    auto* train = app.add_subcommand("train", "train a FlowDMD model");
    add_common(train);
    std::string dataset;
    bool resume = false, quiet = false;
    int every = 50;
    train->add_option("--dataset", dataset, "dataset file (default <out>/dataset.txt, generated if absent)");
    train->add_flag("--resume", resume, "continue from <out>/checkpoint.txt");
    train->add_option("--checkpoint-every", every, "epochs between checkpoints")->check(CLI::PositiveNumber);
    train->add_flag("--quiet", quiet, "no per-epoch progress");

    auto* eval = app.add_subcommand("evaluate", "score methods on the test split and write plot data");
    add_common(eval);
    std::string checkpoint;
    std::string methods = "flowdmd,exact_dmd";
    int sample = 0;
    eval->add_option("--dataset", dataset, "dataset file (default <out>/dataset.txt)");
    eval->add_option("--checkpoint", checkpoint, "flow or trainer checkpoint (default <out>/flow.txt)");
    eval->add_option("--methods", methods, "comma list of flowdmd, exact_dmd, ae_baseline");
    eval->add_option("--sample", sample, "test-split index of the sample for per-step output");

    auto* repro = app.add_subcommand("reproduce", "run a reference experiment and compare");
    std::string target, repro_out;
    std::optional<std::uint64_t> repro_seed;
    std::optional<int> max_epochs, n_seeds;
    repro->add_option("target", target, "fig1, fig7, fig10, table_rank, table_alpha, fig2 or fig14")->required();
    repro->add_option("--out", repro_out, "directory for report and per-run CSVs");
    repro->add_option("--seed", repro_seed, "dataset seed");
    repro->add_option("--max-epochs", max_epochs, "cap on training epochs per run")->check(CLI::PositiveNumber);
    repro->add_option("--seeds", n_seeds, "fig14: number of initialisation seeds")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigExit;
    }

    try {
        if (*gen) return cmd_generate(common);
        if (*train) return cmd_train(common, dataset, resume, every, quiet);
        if (*eval) {
            std::vector<std::string> list;
            std::stringstream ss(methods);
            for (std::string item; std::getline(ss, item, ',');)
                if (!item.empty()) list.push_back(item);
            return cmd_evaluate(common, dataset, checkpoint, list, sample);
        }
        if (*repro) return cmd_reproduce(target, repro_out, repro_seed, max_epochs, n_seeds);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoExit;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericExit;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoExit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUnexpected;
    }
    return kUnexpected;
}
