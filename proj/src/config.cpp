#include "koopflow/config.hpp"

#include "koopflow/errors.hpp"
#include "koopflow/textio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

namespace koopflow {

FlowDmdConfig ExperimentConfig::resolved_flowdmd() const {
    FlowDmdConfig out = flowdmd;
    out.network.dim = system.state_dim();
    out.seed = training_seed();
    return out;
}

ExperimentConfig preset(SystemKind kind) {
    ExperimentConfig cfg;
    cfg.system.kind = kind;
    cfg.name = to_string(kind);
    cfg.output_dir = "out/" + cfg.name;
    FlowSpec& net = cfg.flowdmd.network;
    switch (kind) {
        case SystemKind::fixed_point:
            cfg.n_samples = 120;
            net.kind = CouplingKind::affine;
            net.depth = 3;
            net.hidden = {8};
            cfg.flowdmd.rank = 2;
            break;
        case SystemKind::linear:
            cfg.n_samples = 20;
            net.kind = CouplingKind::affine;
            net.depth = 2;
            net.hidden = {8};
            cfg.flowdmd.rank = 2;
            break;
        case SystemKind::burgers:
            cfg.n_samples = 100;
            net.kind = CouplingKind::residual;
            net.depth = 3;
            net.hidden = {40};
            cfg.flowdmd.rank = 3;
            cfg.flowdmd.training.plateau.patience = 30;
            break;
        case SystemKind::allen_cahn:
            cfg.n_samples = 100;
            net.kind = CouplingKind::residual;
            net.depth = 3;
            net.hidden = {20};
            cfg.flowdmd.rank = 3;
            cfg.flowdmd.training.plateau.patience = 30;
            break;
    }
    cfg.flowdmd.network.dim = cfg.system.state_dim();
    return cfg;
}

namespace {

struct Entry {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

class Reader {
public:
    Reader(const Entry& e, const std::string& source) : e_(e), source_(source) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(source_ + ":" + std::to_string(e_.line) + ": " + e_.section + "." + e_.key + ": " + msg);
    }

    double real() const {
        try {
            const double v = textio::parse_double(e_.value);
            if (!std::isfinite(v)) fail("expected a finite number");
            return v;
        } catch (const IoError&) {
            fail("expected a number, got '" + e_.value + "'");
        }
    }
    double positive() const {
        const double v = real();
        if (!(v > 0.0)) fail("must be positive");
        return v;
    }
    long long integer(long long lo, long long hi) const {
        long long v = 0;
        try {
            v = textio::parse_int(e_.value);
        } catch (const IoError&) {
            fail("expected an integer, got '" + e_.value + "'");
        }
        if (v < lo || v > hi) fail("must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return v;
    }
    int integer(int lo) const { return static_cast<int>(integer(lo, 1'000'000'000LL)); }
    std::uint64_t seed() const {
        const std::string& s = e_.value;
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
            fail("expected a non-negative integer seed");
        try {
            return std::stoull(s);
        } catch (const std::exception&) {
            fail("seed out of range");
        }
    }
    bool boolean() const {
        const std::string& v = e_.value;
        if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
        if (v == "false" || v == "no" || v == "0" || v == "off") return false;
        fail("expected true or false");
    }
    std::vector<int> int_list(int min_len) const {
        std::vector<int> out;
        for (const auto& item : split_list(e_.value)) {
            try {
                const long long v = textio::parse_int(item);
                if (v < 1 || v > 100000) fail("widths must be positive");
                out.push_back(static_cast<int>(v));
            } catch (const IoError&) {
                fail("expected a comma-separated list of integers");
            }
        }
        if (static_cast<int>(out.size()) < min_len) fail("list needs at least " + std::to_string(min_len) + " entries");
        return out;
    }
    std::vector<double> real_list() const {
        std::vector<double> out;
        for (const auto& item : split_list(e_.value)) {
            try {
                out.push_back(textio::parse_double(item));
            } catch (const IoError&) {
                fail("expected a comma-separated list of numbers");
            }
        }
        return out;
    }
    const std::string& text() const { return e_.value; }
    template <typename F>
    auto parsed(F&& f) const {
        try {
            return f(e_.value);
        } catch (const ConfigError& err) {
            fail(err.what());
        }
    }

private:
    const Entry& e_;
    const std::string& source_;
};

using Setter = std::function<void(ExperimentConfig&, const Reader&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        // [experiment]
        t["experiment.name"] = [](ExperimentConfig& c, const Reader& r) { c.name = r.text(); };
        t["experiment.system"] = [](ExperimentConfig&, const Reader&) {};  // consumed up front
        t["experiment.n_samples"] = [](ExperimentConfig& c, const Reader& r) { c.n_samples = r.integer(5); };
        t["experiment.seed"] = [](ExperimentConfig& c, const Reader& r) { c.seed = r.seed(); };
        t["experiment.init_seed"] = [](ExperimentConfig& c, const Reader& r) { c.init_seed = r.seed(); };
        t["experiment.threads"] = [](ExperimentConfig& c, const Reader& r) { c.threads = r.integer(0); };
        t["experiment.output"] = [](ExperimentConfig& c, const Reader& r) {
            if (r.text().empty()) r.fail("output directory must not be empty");
            c.output_dir = r.text();
        };
        t["experiment.split"] = [](ExperimentConfig& c, const Reader& r) {
            const auto v = r.real_list();
            if (v.size() != 3) r.fail("expected three fractions train,validation,test");
            if (v[0] < 0.0 || v[1] < 0.0 || v[2] < 0.0 || std::abs(v[0] + v[1] + v[2] - 1.0) > 1e-9)
                r.fail("fractions must be non-negative and sum to 1");
            c.split = {v[0], v[1], v[2]};
        };
        // [system]
        t["system.steps"] = [](ExperimentConfig& c, const Reader& r) { c.system.steps = r.integer(1); };
        t["system.lambda"] = [](ExperimentConfig& c, const Reader& r) { c.system.lambda = r.real(); };
        t["system.mu"] = [](ExperimentConfig& c, const Reader& r) { c.system.mu = r.real(); };
        t["system.x0_low"] = [](ExperimentConfig& c, const Reader& r) { c.system.x0_low = r.real(); };
        t["system.x0_high"] = [](ExperimentConfig& c, const Reader& r) { c.system.x0_high = r.real(); };
        t["system.linear_matrix"] = [](ExperimentConfig& c, const Reader& r) {
            const auto v = r.real_list();
            const auto n = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(v.size()))));
            if (n < 1 || static_cast<std::size_t>(n * n) != v.size()) r.fail("expected n*n entries, row-major");
            Matrix a(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) a(i, j) = v[static_cast<std::size_t>(i * n + j)];
            c.system.linear_matrix = a;
        };
        t["system.nx"] = [](ExperimentConfig& c, const Reader& r) {
            const int nx = r.integer(4);
            c.system.burgers.nx = nx;
            c.system.allen_cahn.nx = nx;
        };
        t["system.dt"] = [](ExperimentConfig& c, const Reader& r) {
            const double dt = r.positive();
            c.system.burgers.dt = dt;
            c.system.allen_cahn.dt = dt;
        };
        t["system.t_end"] = [](ExperimentConfig& c, const Reader& r) {
            const double te = r.positive();
            c.system.burgers.t_end = te;
            c.system.allen_cahn.t_end = te;
        };
        t["system.viscosity"] = [](ExperimentConfig& c, const Reader& r) { c.system.burgers.viscosity = r.positive(); };
        t["system.include_boundary"] = [](ExperimentConfig& c, const Reader& r) {
            c.system.burgers.include_boundary = r.boolean();
        };
        t["system.gamma1"] = [](ExperimentConfig& c, const Reader& r) { c.system.allen_cahn.gamma1 = r.real(); };
        t["system.gamma2"] = [](ExperimentConfig& c, const Reader& r) { c.system.allen_cahn.gamma2 = r.real(); };
        t["system.xi_low"] = [](ExperimentConfig& c, const Reader& r) { c.system.burgers_xi_low = r.real(); };
        t["system.xi_high"] = [](ExperimentConfig& c, const Reader& r) { c.system.burgers_xi_high = r.real(); };
        t["system.xi_mean"] = [](ExperimentConfig& c, const Reader& r) { c.system.ac_xi_mean = r.real(); };
        t["system.xi_variance"] = [](ExperimentConfig& c, const Reader& r) {
            const double v = r.real();
            if (v < 0.0) r.fail("variance must be non-negative");
            c.system.ac_xi_variance = v;
        };
        t["system.newton_tolerance"] = [](ExperimentConfig& c, const Reader& r) {
            const double tol = r.positive();
            c.system.burgers.newton.tolerance = tol;
            c.system.allen_cahn.newton.tolerance = tol;
        };
        t["system.newton_max_iterations"] = [](ExperimentConfig& c, const Reader& r) {
            const int it = r.integer(1);
            c.system.burgers.newton.max_iterations = it;
            c.system.allen_cahn.newton.max_iterations = it;
        };
        // [network]
        t["network.kind"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.network.kind = r.parsed(parse_coupling_kind);
        };
        t["network.depth"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.network.depth = r.integer(1); };
        t["network.hidden"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.network.hidden = r.int_list(0); };
        t["network.split"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.network.split = r.integer(1); };
        t["network.activation"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.network.activation = r.parsed(parse_activation);
        };
        t["network.output_scale"] = [](ExperimentConfig& c, const Reader& r) {
            const double v = r.real();
            if (v < 0.0) r.fail("must be non-negative");
            c.flowdmd.network.output_scale = v;
        };
        // [dmd], [loss]
        t["dmd.rank"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.rank = r.integer(1); };
        t["loss.alpha"] = [](ExperimentConfig& c, const Reader& r) {
            const double v = r.real();
            if (v < 0.0) r.fail("must be non-negative");
            c.flowdmd.alpha = v;
        };
        // [training]
        t["training.max_epochs"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.training.max_epochs = r.integer(0);
        };
        t["training.early_stop"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.training.early_stop = r.integer(1);
        };
        t["training.shuffle"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.training.shuffle = r.boolean(); };
        t["training.gradient"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.gradient = r.parsed(parse_dmd_gradient);
        };
        t["training.lr"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.training.adam.lr = r.positive(); };
        t["training.beta1"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.training.adam.beta1 = r.real(); };
        t["training.beta2"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.training.adam.beta2 = r.real(); };
        t["training.eps"] = [](ExperimentConfig& c, const Reader& r) { c.flowdmd.training.adam.eps = r.positive(); };
        t["training.plateau_factor"] = [](ExperimentConfig& c, const Reader& r) {
            const double f = r.real();
            if (!(f > 0.0 && f < 1.0)) r.fail("must lie in (0, 1)");
            c.flowdmd.training.plateau.factor = f;
        };
        t["training.plateau_patience"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.training.plateau.patience = r.integer(0);
        };
        t["training.plateau_min_lr"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.training.plateau.min_lr = r.real();
        };
        t["training.plateau_threshold"] = [](ExperimentConfig& c, const Reader& r) {
            c.flowdmd.training.plateau.threshold = r.real();
        };
        // [ae]
        t["ae.encoder"] = [](ExperimentConfig& c, const Reader& r) { c.ae.encoder = r.int_list(2); };
        t["ae.decoder"] = [](ExperimentConfig& c, const Reader& r) { c.ae.decoder = r.int_list(2); };
        t["ae.activation"] = [](ExperimentConfig& c, const Reader& r) { c.ae.activation = r.parsed(parse_activation); };
        t["ae.epochs"] = [](ExperimentConfig& c, const Reader& r) { c.ae.epochs = r.integer(0); };
        t["ae.batch_size"] = [](ExperimentConfig& c, const Reader& r) { c.ae.batch_size = r.integer(1); };
        t["ae.early_stop"] = [](ExperimentConfig& c, const Reader& r) { c.ae.early_stop = r.integer(1); };
        t["ae.lr"] = [](ExperimentConfig& c, const Reader& r) { c.ae.adam.lr = r.positive(); };
        t["ae.plateau_patience"] = [](ExperimentConfig& c, const Reader& r) { c.ae.plateau.patience = r.integer(0); };
        t["ae.probe_points"] = [](ExperimentConfig& c, const Reader& r) { c.ae.probe_points = r.integer(1); };
        return t;
    }();
    return table;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
    std::vector<Entry> entries;
    std::map<std::string, int> seen;
    std::string section;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(source + ":" + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            static const char* const kSections[] = {"experiment", "system", "network", "dmd", "loss", "training", "ae"};
            if (std::find(std::begin(kSections), std::end(kSections), section) == std::end(kSections))
                throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError(source + ":" + std::to_string(lineno) + ": key outside of any [section]");
        Entry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
        const std::string full = e.section + "." + e.key;
        if (setters().count(full) == 0)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown key '" + e.key + "' in [" + section + "]");
        if (auto it = seen.find(full); it != seen.end())
            throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key " + full + " (first at line " +
                              std::to_string(it->second) + ")");
        seen[full] = lineno;
        entries.push_back(std::move(e));
    }
    if (in.bad()) throw IoError("failed reading " + source);

    SystemKind kind = SystemKind::fixed_point;
    for (const auto& e : entries)
        if (e.section == "experiment" && e.key == "system") kind = Reader(e, source).parsed(parse_system_kind);

    ExperimentConfig cfg = preset(kind);
    for (const auto& e : entries) setters().at(e.section + "." + e.key)(cfg, Reader(e, source));

    cfg.flowdmd.network.dim = cfg.system.state_dim();
    try {
        cfg.resolved_flowdmd().validate();
        const int m = cfg.flowdmd.network.dim;
        const int q = cfg.flowdmd.network.split.value_or(default_split(m));
        if (q < 1 || q > m - 1) throw ConfigError("network split " + std::to_string(q) + " out of range [1, m-1]");
        if (cfg.flowdmd.rank > m) throw ConfigError("dmd rank exceeds the state dimension");
        // Widths against the state dimension are checked when the baseline runs.
        if (cfg.ae.encoder.back() != cfg.ae.decoder.front())
            throw ConfigError("ae encoder output width must equal decoder input width");
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    return parse_config(in, path);
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

void write_config(std::ostream& out, const ExperimentConfig& cfg) {
    using textio::format_double;
    const SystemParams& sp = cfg.system;
    const FlowDmdConfig& fd = cfg.flowdmd;
    out << "[experiment]\n"
        << "name = " << cfg.name << "\n"
        << "system = " << to_string(sp.kind) << "\n"
        << "n_samples = " << cfg.n_samples << "\n"
        << "seed = " << cfg.seed << "\n";
    if (cfg.init_seed) out << "init_seed = " << *cfg.init_seed << "\n";
    out << "threads = " << cfg.threads << "\n"
        << "output = " << cfg.output_dir << "\n"
        << "split = " << format_double(cfg.split.train) << "," << format_double(cfg.split.validation) << ","
        << format_double(cfg.split.test) << "\n\n";

    out << "[system]\n";
    switch (sp.kind) {
        case SystemKind::fixed_point:
        case SystemKind::linear:
            out << "steps = " << sp.steps << "\n"
                << "x0_low = " << format_double(sp.x0_low) << "\n"
                << "x0_high = " << format_double(sp.x0_high) << "\n";
            if (sp.kind == SystemKind::fixed_point) {
                out << "lambda = " << format_double(sp.lambda) << "\n"
                    << "mu = " << format_double(sp.mu) << "\n";
            } else {
                out << "linear_matrix = ";
                for (Eigen::Index i = 0; i < sp.linear_matrix.size(); ++i)
                    out << (i ? "," : "") << format_double(sp.linear_matrix(i / sp.linear_matrix.cols(), i % sp.linear_matrix.cols()));
                out << "\n";
            }
            break;
        case SystemKind::burgers:
            out << "nx = " << sp.burgers.nx << "\n"
                << "dt = " << format_double(sp.burgers.dt) << "\n"
                << "t_end = " << format_double(sp.burgers.t_end) << "\n"
                << "viscosity = " << format_double(sp.burgers.viscosity) << "\n"
                << "include_boundary = " << (sp.burgers.include_boundary ? "true" : "false") << "\n"
                << "xi_low = " << format_double(sp.burgers_xi_low) << "\n"
                << "xi_high = " << format_double(sp.burgers_xi_high) << "\n"
                << "newton_tolerance = " << format_double(sp.burgers.newton.tolerance) << "\n"
                << "newton_max_iterations = " << sp.burgers.newton.max_iterations << "\n";
            break;
        case SystemKind::allen_cahn:
            out << "nx = " << sp.allen_cahn.nx << "\n"
                << "dt = " << format_double(sp.allen_cahn.dt) << "\n"
                << "t_end = " << format_double(sp.allen_cahn.t_end) << "\n"
                << "gamma1 = " << format_double(sp.allen_cahn.gamma1) << "\n"
                << "gamma2 = " << format_double(sp.allen_cahn.gamma2) << "\n"
                << "xi_mean = " << format_double(sp.ac_xi_mean) << "\n"
                << "xi_variance = " << format_double(sp.ac_xi_variance) << "\n"
                << "newton_tolerance = " << format_double(sp.allen_cahn.newton.tolerance) << "\n"
                << "newton_max_iterations = " << sp.allen_cahn.newton.max_iterations << "\n";
            break;
    }

    out << "\n[network]\n"
        << "kind = " << to_string(fd.network.kind) << "\n"
        << "depth = " << fd.network.depth << "\n"
        << "hidden = " << join_ints(fd.network.hidden) << "\n";
    if (fd.network.split) out << "split = " << *fd.network.split << "\n";
    out << "activation = " << to_string(fd.network.activation) << "\n"
        << "output_scale = " << format_double(fd.network.output_scale) << "\n\n"
        << "[dmd]\nrank = " << fd.rank << "\n\n"
        << "[loss]\nalpha = " << format_double(fd.alpha) << "\n\n"
        << "[training]\n"
        << "max_epochs = " << fd.training.max_epochs << "\n"
        << "early_stop = " << fd.training.early_stop << "\n"
        << "shuffle = " << (fd.training.shuffle ? "true" : "false") << "\n"
        << "gradient = " << to_string(fd.gradient) << "\n"
        << "lr = " << format_double(fd.training.adam.lr) << "\n"
        << "beta1 = " << format_double(fd.training.adam.beta1) << "\n"
        << "beta2 = " << format_double(fd.training.adam.beta2) << "\n"
        << "eps = " << format_double(fd.training.adam.eps) << "\n"
        << "plateau_factor = " << format_double(fd.training.plateau.factor) << "\n"
        << "plateau_patience = " << fd.training.plateau.patience << "\n"
        << "plateau_min_lr = " << format_double(fd.training.plateau.min_lr) << "\n"
        << "plateau_threshold = " << format_double(fd.training.plateau.threshold) << "\n\n"
        << "[ae]\n"
        << "encoder = " << join_ints(cfg.ae.encoder) << "\n"
        << "decoder = " << join_ints(cfg.ae.decoder) << "\n"
        << "activation = " << to_string(cfg.ae.activation) << "\n"
        << "epochs = " << cfg.ae.epochs << "\n"
        << "batch_size = " << cfg.ae.batch_size << "\n"
        << "early_stop = " << cfg.ae.early_stop << "\n"
        << "lr = " << format_double(cfg.ae.adam.lr) << "\n"
        << "plateau_patience = " << cfg.ae.plateau.patience << "\n"
        << "probe_points = " << cfg.ae.probe_points << "\n";
}

int generation_threads(const ExperimentConfig& cfg) {
    int n = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
    n = std::max(n, 1);
    if (const char* env = std::getenv("KOOPMAN_FLOW_THREADS")) {
        try {
            const long long cap = textio::parse_int(env);
            if (cap < 1) throw ConfigError("KOOPMAN_FLOW_THREADS must be a positive integer");
            n = static_cast<int>(std::min<long long>(n, cap));
        } catch (const IoError&) {
            throw ConfigError("KOOPMAN_FLOW_THREADS must be a positive integer, got '" + std::string(env) + "'");
        }
    }
    return n;
}

}  // namespace koopflow
