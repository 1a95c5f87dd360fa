#include "koopflow/config.hpp"
#include "koopflow/errors.hpp"
#include "koopflow/experiments.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>

using namespace koopflow;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in, "test.ini");
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("presets follow the declared system") {
    const ExperimentConfig fp = parse("[experiment]\nsystem = fixed_point\n");
    CHECK(fp.n_samples == 120);
    CHECK(fp.flowdmd.network.kind == CouplingKind::affine);
    CHECK(fp.flowdmd.rank == 2);
    CHECK(fp.flowdmd.alpha == 1.0);

    // Keys before the system line still land on the matching preset.
    const ExperimentConfig b = parse("[dmd]\nrank = 4\n[experiment]\nsystem = burgers\n");
    CHECK(b.system.kind == SystemKind::burgers);
    CHECK(b.flowdmd.network.kind == CouplingKind::residual);
    CHECK(b.flowdmd.rank == 4);
    CHECK(b.resolved_flowdmd().network.dim == 30);

    const ExperimentConfig ac = parse("[experiment]\nsystem = allen_cahn\nseed = 9\n");
    CHECK(ac.resolved_flowdmd().network.dim == 20);
    CHECK(ac.training_seed() == 9);
    CHECK(parse("[experiment]\nseed = 9\ninit_seed = 3\n").training_seed() == 3);
}

TEST_CASE("values, lists and comments") {
    const ExperimentConfig c = parse(
        "# comment\n"
        "[experiment]\n"
        "name = demo ; trailing comment\n"
        "n_samples = 30\n"
        "split = 0.5, 0.25, 0.25\n"
        "[network]\n"
        "kind = residual\n"
        "hidden = 12, 6\n"
        "activation = tanh\n"
        "[loss]\n"
        "alpha = 0.1\n"
        "[training]\n"
        "max_epochs = 7\n"
        "gradient = frozen\n"
        "lr = 0.01\n"
        "plateau_patience = 4\n"
        "[system]\n"
        "steps = 12\n");
    CHECK(c.name == "demo");
    CHECK(c.n_samples == 30);
    CHECK(c.split.train == 0.5);
    CHECK(c.flowdmd.network.hidden == std::vector<int>{12, 6});
    CHECK(c.flowdmd.network.activation == Activation::tanh);
    CHECK(c.flowdmd.alpha == 0.1);
    CHECK(c.flowdmd.training.max_epochs == 7);
    CHECK(c.flowdmd.gradient == DmdGradient::frozen);
    CHECK(c.flowdmd.training.adam.lr == 0.01);
    CHECK(c.flowdmd.training.plateau.patience == 4);
    CHECK(c.system.steps == 12);
}

TEST_CASE("errors name the line and reject unknowns") {
    CHECK(error_of("[experiment]\nsytem = burgers\n").find("test.ini:2") != std::string::npos);
    CHECK(error_of("[nonsense]\n").find("unknown section") != std::string::npos);
    CHECK(error_of("[experiment]\nsystem = lorenz\n").find("lorenz") != std::string::npos);
    CHECK(error_of("[dmd]\nrank = 2\nrank = 3\n").find("duplicate") != std::string::npos);
    CHECK(!error_of("[dmd]\nrank = two\n").empty());
    CHECK(!error_of("[dmd]\nrank = 0\n").empty());
    CHECK(!error_of("[loss]\nalpha = -1\n").empty());
    CHECK(!error_of("rank = 2\n").empty());
    CHECK(!error_of("[dmd\n").empty());
    CHECK(!error_of("[experiment]\nsplit = 0.5, 0.5, 0.5\n").empty());
    CHECK(error_of("[experiment]\nsystem = fixed_point\n").empty());
}

TEST_CASE("write_config round trips") {
    ExperimentConfig c = parse(
        "[experiment]\nsystem = allen_cahn\nseed = 77\ninit_seed = 5\noutput = some dir\n"
        "[network]\nhidden = 9, 3\noutput_scale = 0.25\n[loss]\nalpha = 0.3\n[system]\nxi_variance = 0.01\n");
    std::stringstream ss;
    write_config(ss, c);
    const ExperimentConfig back = parse(ss.str());
    std::stringstream again;
    write_config(again, back);
    CHECK(again.str() == ss.str());
    CHECK(back.init_seed == std::optional<std::uint64_t>(5));
    CHECK(back.output_dir == "some dir");
    CHECK(back.system.ac_xi_variance == 0.01);
    CHECK(back.flowdmd.network.output_scale == 0.25);
}

TEST_CASE("missing file is an IO error") {
    CHECK_THROWS_AS(load_config_file("/nonexistent/cfg.ini"), IoError);
}

TEST_CASE("generation threads honour the environment cap") {
    ExperimentConfig c;
    c.threads = 8;
    ::setenv("KOOPMAN_FLOW_THREADS", "2", 1);
    CHECK(generation_threads(c) == 2);
    ::setenv("KOOPMAN_FLOW_THREADS", "zero", 1);
    CHECK_THROWS_AS(generation_threads(c), ConfigError);
    ::unsetenv("KOOPMAN_FLOW_THREADS");
    CHECK(generation_threads(c) == 8);
}

TEST_CASE("experiment helpers") {
    CHECK(count_inversions({5, 4, 4, 3}) == 0);
    CHECK(count_inversions({5, 6, 4, 5}) == 2);
    CHECK(reproduce_targets().size() == 7);
    CHECK_THROWS_AS(reproduce("fig99"), UsageError);
    try {
        reproduce("fig99");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("table_rank") != std::string::npos);
    }

    ReproduceReport r;
    r.target = "t";
    r.rows.push_back({"q, with comma", "0.1", 0.05, "<= 0.2", true});
    CHECK(r.passed());
    std::stringstream csv;
    write_reproduce_csv(csv, r);
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    CHECK(header == "target,quantity,reference,obtained,criterion,pass");
    CHECK(row == "t,\"q, with comma\",0.1,0.05,<= 0.2,pass");
    r.rows.push_back({"x", "-", 1.0, "<= 0", false});
    CHECK(!r.passed());
}

TEST_CASE("linear experiment: exact DMD is exact") {
    ExperimentConfig c = parse("[experiment]\nsystem = linear\nn_samples = 10\n");
    const Dataset ds = make_experiment_dataset(c);
    for (const auto& r : evaluate_exact_dmd(ds.test, 2)) CHECK(r.trl2e < 1e-8);
}
