// Runs the koopflow executable as a subprocess.

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("koopflow_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + KOOPFLOW_CLI + "\" " + args + " > \"" +
                            (workdir() / "last.log").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_log() {
    std::ifstream in(workdir() / "last.log");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write_config(const std::string& name, const std::string& body) {
    const fs::path p = workdir() / (name + ".ini");
    std::ofstream(p) << "[experiment]\noutput = " << (workdir() / name).string() << "\n" << body;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("generate: manifest counts, determinism, bad system") {
    const fs::path cfg = write_config("burgers", "system = burgers\nn_samples = 100\n");
    REQUIRE(run("generate --config \"" + cfg.string() + "\"") == 0);
    const fs::path out = workdir() / "burgers";
    const auto m = nlohmann::json::parse(slurp(out / "generate_manifest.json"));
    CHECK(m["counts"]["train"] == 60);
    CHECK(m["counts"]["validation"] == 20);
    CHECK(m["counts"]["test"] == 20);
    CHECK(m["seed"] == 42);
    CHECK(!m["version"].get<std::string>().empty());
    const std::string first = slurp(out / "dataset.txt");
    const std::string first_csv = slurp(out / "dataset.csv");
    REQUIRE(run("generate --config \"" + cfg.string() + "\"") == 0);
    CHECK(slurp(out / "dataset.txt") == first);
    CHECK(slurp(out / "dataset.csv") == first_csv);

    REQUIRE(run("generate --config \"" + cfg.string() + "\" --seed 7") == 0);
    CHECK(slurp(out / "dataset.txt") != first);

    const fs::path bad = write_config("bad", "system = lorenz\n");
    const int rc = run("generate --config \"" + bad.string() + "\"");
    CHECK(rc == 2);
    CHECK(last_log().find("lorenz") != std::string::npos);
}

TEST_CASE("train, resume and evaluate on the fixed point") {
    const std::string body = "system = fixed_point\n[training]\nmax_epochs = ";
    const fs::path short_cfg = write_config("fp", body + "4\n");
    REQUIRE(run("train --quiet --config \"" + short_cfg.string() + "\"") == 0);
    const fs::path out = workdir() / "fp";
    CHECK(fs::exists(out / "checkpoint.txt"));
    CHECK(fs::exists(out / "flow.txt"));
    auto hist = read_csv(out / "history.csv");
    REQUIRE(hist.size() == 5);
    for (const auto& cell : hist.back()) CHECK(std::isfinite(std::stod(cell)));

    // Continue the same run to 8 epochs; compare with an uninterrupted run.
    std::ofstream(short_cfg) << "[experiment]\noutput = " << out.string() << "\n" << body << "8\n";
    REQUIRE(run("train --quiet --resume --config \"" + short_cfg.string() + "\"") == 0);
    const fs::path full_cfg = write_config("fp_full", body + "8\n");
    REQUIRE(run("train --quiet --config \"" + full_cfg.string() + "\"") == 0);
    const auto resumed = read_csv(out / "history.csv");
    const auto straight = read_csv(workdir() / "fp_full" / "history.csv");
    REQUIRE(resumed.size() == 9);
    CHECK(resumed == straight);

    REQUIRE(run("evaluate --config \"" + short_cfg.string() + "\" --methods flowdmd,exact_dmd") == 0);
    const auto summary = read_csv(out / "summary.csv");
    CHECK(summary.size() == 1 + 2 * 24);
    const auto report = read_csv(out / "report.csv");
    CHECK(report.size() == 1 + 2 * 60);
    CHECK(fs::exists(out / "trl2e.dat"));

    // A trainer checkpoint is accepted as well as a flow file.
    REQUIRE(run("evaluate --config \"" + short_cfg.string() + "\" --methods flowdmd --checkpoint \"" +
                (out / "checkpoint.txt").string() + "\"") == 0);
    CHECK(read_csv(out / "summary.csv") == std::vector<std::vector<std::string>>(summary.begin(), summary.begin() + 25));

    CHECK(run("evaluate --config \"" + short_cfg.string() + "\" --checkpoint \"" +
              (workdir() / "missing.txt").string() + "\"") == 4);
    CHECK(last_log().find("not found") != std::string::npos);

    std::ofstream(out / "checkpoint.txt") << "koopflow-trainer 1\nepoch banana\n";
    CHECK(run("train --quiet --resume --config \"" + short_cfg.string() + "\"") == 4);
}

TEST_CASE("evaluate exact DMD on linear data") {
    const fs::path cfg = write_config("lin", "system = linear\nn_samples = 20\n");
    REQUIRE(run("generate --config \"" + cfg.string() + "\"") == 0);
    REQUIRE(run("evaluate --config \"" + cfg.string() + "\" --methods exact_dmd") == 0);
    const auto rows = read_csv(workdir() / "lin" / "summary.csv");
    REQUIRE(rows.size() == 5);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][2]) < 1e-8);

    CHECK(run("evaluate --config \"" + cfg.string() + "\" --methods magic") == 2);
}

TEST_CASE("usage errors") {
    CHECK(run("reproduce fig99") == 2);
    CHECK(last_log().find("table_rank") != std::string::npos);
    CHECK(run("generate") == 2);
    CHECK(run("--version") == 0);
}
