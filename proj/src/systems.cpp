#include "koopflow/systems.hpp"

#include "koopflow/errors.hpp"
#include "koopflow/textio.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace koopflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

int step_count(double t_end, double dt) {
    if (!(dt > 0.0) || !(t_end > 0.0)) throw ConfigError("time step and end time must be positive");
    const long n = std::lround(t_end / dt);
    if (n < 1) throw ConfigError("end time shorter than one step");
    return static_cast<int>(n);
}

/// Solves F(u) = 0 for one implicit-Euler step by damped Newton.
template <class Residual, class Jacobian>
Vector newton_solve(Vector u, const Residual& residual, const Jacobian& jacobian, const NewtonOptions& opts,
                    int step) {
    Vector f = residual(u);
    double fnorm = f.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < opts.max_iterations; ++it) {
        if (fnorm < opts.tolerance) return u;
        const Vector du = jacobian(u).partialPivLu().solve(-f);
        double alpha = 1.0;
        Vector trial = u + du;
        Vector ftrial = residual(trial);
        while (!(ftrial.lpNorm<Eigen::Infinity>() < fnorm) && alpha > 1.0 / 1024.0) {
            alpha *= 0.5;
            trial = u + alpha * du;
            ftrial = residual(trial);
        }
        u = std::move(trial);
        f = std::move(ftrial);
        fnorm = f.lpNorm<Eigen::Infinity>();
        if (!std::isfinite(fnorm)) break;
    }
    if (fnorm < opts.tolerance) return u;
    throw SolverError("Newton iteration did not converge at step " + std::to_string(step), step);
}

}  // namespace

Trajectory simulate_fixed_point(const Eigen::Vector2d& x0, int steps, double lambda, double mu) {
    if (steps < 1) throw ConfigError("trajectory needs at least one step");
    Trajectory traj;
    traj.system = "fixed_point";
    traj.dt = 1.0;
    traj.parameter = x0(0);
    traj.states.resize(steps + 1, 2);
    traj.states.row(0) = x0.transpose();
    for (int t = 0; t < steps; ++t) {
        const double a = traj.states(t, 0), b = traj.states(t, 1);
        traj.states(t + 1, 0) = lambda * a;
        traj.states(t + 1, 1) = mu * b + (lambda * lambda - mu) * a * a;
    }
    return traj;
}

Trajectory simulate_linear(const Matrix& a, const Vector& x0, int steps) {
    if (steps < 1) throw ConfigError("trajectory needs at least one step");
    if (a.rows() != a.cols() || a.cols() != x0.size()) throw ShapeError("simulate_linear: shape mismatch");
    Trajectory traj;
    traj.system = "linear";
    traj.dt = 1.0;
    traj.parameter = x0(0);
    traj.states.resize(steps + 1, x0.size());
    Vector x = x0;
    for (int t = 0; t <= steps; ++t) {
        traj.states.row(t) = x.transpose();
        x = a * x;
    }
    return traj;
}

Vector burgers_grid(int nx) {
    const double h = 2.0 / (nx + 1);
    Vector x(nx);
    for (int i = 0; i < nx; ++i) x(i) = -1.0 + (i + 1) * h;
    return x;
}

Trajectory solve_burgers_from(const Vector& u0, const BurgersOptions& opts) {
    const int nx = opts.nx;
    if (nx < 4) throw ConfigError("Burgers grid needs nx >= 4");
    if (u0.size() != nx) throw ShapeError("Burgers initial state must have nx entries");
    if (!u0.allFinite()) throw NumericError("Burgers initial state is not finite");
    const int steps = step_count(opts.t_end, opts.dt);
    const double h = 2.0 / (nx + 1);
    const double nu = opts.viscosity;
    const double dt = opts.dt;

    auto at = [nx](const Vector& u, int i) { return (i < 0 || i >= nx) ? 0.0 : u(i); };

    Trajectory traj;
    traj.system = "burgers";
    traj.dt = dt;
    const int width = opts.include_boundary ? nx + 2 : nx;
    const int off = opts.include_boundary ? 1 : 0;
    traj.states = Matrix::Zero(steps + 1, width);
    traj.states.block(0, off, 1, nx) = u0.transpose();

    Vector u = u0;
    for (int n = 1; n <= steps; ++n) {
        const Vector uold = u;
        auto residual = [&](const Vector& v) {
            Vector f(nx);
            for (int i = 0; i < nx; ++i) {
                const double l = at(v, i - 1), c = v(i), r = at(v, i + 1);
                const double adv = (c * (r - l) + (r * r - l * l)) / (6.0 * h);
                const double dif = nu * (r - 2.0 * c + l) / (h * h);
                f(i) = c - uold(i) + dt * (adv - dif);
            }
            return f;
        };
        auto jacobian = [&](const Vector& v) {
            Matrix j = Matrix::Identity(nx, nx);
            for (int i = 0; i < nx; ++i) {
                const double l = at(v, i - 1), c = v(i), r = at(v, i + 1);
                j(i, i) += dt * ((r - l) / (6.0 * h) + 2.0 * nu / (h * h));
                if (i > 0) j(i, i - 1) += dt * ((-c - 2.0 * l) / (6.0 * h) - nu / (h * h));
                if (i + 1 < nx) j(i, i + 1) += dt * ((c + 2.0 * r) / (6.0 * h) - nu / (h * h));
            }
            return j;
        };
        u = newton_solve(u, residual, jacobian, opts.newton, n);
        traj.states.block(n, off, 1, nx) = u.transpose();
    }
    return traj;
}

Trajectory solve_burgers(double xi, const BurgersOptions& opts) {
    if (!std::isfinite(xi)) throw NumericError("Burgers parameter is not finite");
    if (opts.nx < 4) throw ConfigError("Burgers grid needs nx >= 4");
    const Vector x = burgers_grid(opts.nx);
    const Vector u0 = (-xi * (kPi * x.array()).sin()).matrix();
    Trajectory traj = solve_burgers_from(u0, opts);
    traj.parameter = xi;
    return traj;
}

Vector allen_cahn_grid(int nx) {
    const double h = 2.0 / nx;
    Vector x(nx);
    for (int j = 0; j < nx; ++j) x(j) = -1.0 + j * h;
    return x;
}

Trajectory solve_allen_cahn_from(const Vector& u0, const AllenCahnOptions& opts) {
    const int nx = opts.nx;
    if (nx < 4) throw ConfigError("Allen-Cahn grid needs nx >= 4");
    if (u0.size() != nx) throw ShapeError("Allen-Cahn initial state must have nx entries");
    if (!u0.allFinite()) throw NumericError("Allen-Cahn initial state is not finite");
    const int steps = step_count(opts.t_end, opts.dt);
    const double h = 2.0 / nx;
    const double dt = opts.dt;
    const double g1 = opts.gamma1, g2 = opts.gamma2;

    Trajectory traj;
    traj.system = "allen_cahn";
    traj.dt = dt;
    traj.states.resize(steps + 1, nx);
    traj.states.row(0) = u0.transpose();

    Vector u = u0;
    for (int n = 1; n <= steps; ++n) {
        const Vector uold = u;
        auto residual = [&](const Vector& v) {
            Vector f(nx);
            for (int j = 0; j < nx; ++j) {
                const double l = v((j + nx - 1) % nx), c = v(j), r = v((j + 1) % nx);
                f(j) = c - uold(j) + dt * (-g1 * (r - 2.0 * c + l) / (h * h) + g2 * (c * c * c - c));
            }
            return f;
        };
        auto jacobian = [&](const Vector& v) {
            Matrix jac = Matrix::Zero(nx, nx);
            for (int j = 0; j < nx; ++j) {
                jac(j, j) = 1.0 + dt * (2.0 * g1 / (h * h) + g2 * (3.0 * v(j) * v(j) - 1.0));
                jac(j, (j + nx - 1) % nx) += -dt * g1 / (h * h);
                jac(j, (j + 1) % nx) += -dt * g1 / (h * h);
            }
            return jac;
        };
        u = newton_solve(u, residual, jacobian, opts.newton, n);
        traj.states.row(n) = u.transpose();
    }
    return traj;
}

Trajectory solve_allen_cahn(double xi, const AllenCahnOptions& opts) {
    if (!std::isfinite(xi)) throw NumericError("Allen-Cahn parameter is not finite");
    if (opts.nx < 4) throw ConfigError("Allen-Cahn grid needs nx >= 4");
    const Vector x = allen_cahn_grid(opts.nx);
    const Vector u0 = (xi * x.array().square() * (2.0 * kPi * x.array()).cos()).matrix();
    Trajectory traj = solve_allen_cahn_from(u0, opts);
    traj.parameter = xi;
    return traj;
}

SystemKind parse_system_kind(const std::string& name) {
    if (name == "fixed_point") return SystemKind::fixed_point;
    if (name == "burgers") return SystemKind::burgers;
    if (name == "allen_cahn") return SystemKind::allen_cahn;
    if (name == "linear") return SystemKind::linear;
    throw ConfigError("unknown system '" + name + "' (expected fixed_point, burgers, allen_cahn or linear)");
}

std::string to_string(SystemKind kind) {
    switch (kind) {
        case SystemKind::fixed_point: return "fixed_point";
        case SystemKind::burgers: return "burgers";
        case SystemKind::allen_cahn: return "allen_cahn";
        case SystemKind::linear: return "linear";
    }
    return "fixed_point";
}

int SystemParams::state_dim() const {
    switch (kind) {
        case SystemKind::fixed_point: return 2;
        case SystemKind::burgers: return burgers.include_boundary ? burgers.nx + 2 : burgers.nx;
        case SystemKind::allen_cahn: return allen_cahn.nx;
        case SystemKind::linear: return static_cast<int>(linear_matrix.rows());
    }
    return 0;
}

double SystemParams::dt() const {
    switch (kind) {
        case SystemKind::burgers: return burgers.dt;
        case SystemKind::allen_cahn: return allen_cahn.dt;
        default: return 1.0;
    }
}

Trajectory simulate_sample(const SystemParams& params, std::uint64_t seed, int index) {
    std::mt19937_64 rng(mix_seed(seed ^ static_cast<std::uint64_t>(index)));
    Trajectory traj;
    switch (params.kind) {
        case SystemKind::fixed_point: {
            std::uniform_real_distribution<double> u(params.x0_low, params.x0_high);
            Eigen::Vector2d x0;
            x0(0) = u(rng);
            x0(1) = u(rng);
            traj = simulate_fixed_point(x0, params.steps, params.lambda, params.mu);
            break;
        }
        case SystemKind::linear: {
            std::uniform_real_distribution<double> u(params.x0_low, params.x0_high);
            Vector x0(params.linear_matrix.rows());
            for (Eigen::Index i = 0; i < x0.size(); ++i) x0(i) = u(rng);
            traj = simulate_linear(params.linear_matrix, x0, params.steps);
            break;
        }
        case SystemKind::burgers: {
            std::uniform_real_distribution<double> u(params.burgers_xi_low, params.burgers_xi_high);
            traj = solve_burgers(u(rng), params.burgers);
            break;
        }
        case SystemKind::allen_cahn: {
            std::normal_distribution<double> nrm(params.ac_xi_mean, std::sqrt(params.ac_xi_variance));
            traj = solve_allen_cahn(nrm(rng), params.allen_cahn);
            break;
        }
    }
    traj.sample_id = index;
    return traj;
}

int Dataset::state_dim() const {
    for (const auto* part : {&train, &validation, &test})
        if (!part->empty()) return part->front().dim();
    return 0;
}

int Dataset::steps() const {
    for (const auto* part : {&train, &validation, &test})
        if (!part->empty()) return part->front().steps();
    return 0;
}

Dataset make_dataset(const SystemParams& params, int n_samples, std::uint64_t seed, SplitFractions split,
                     int threads) {
    if (n_samples < 5) throw ConfigError("dataset needs at least 5 samples");
    if (split.train < 0 || split.validation < 0 || split.test < 0 ||
        std::abs(split.train + split.validation + split.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must be non-negative and sum to 1");

    std::vector<Trajectory> samples(static_cast<std::size_t>(n_samples));
    std::vector<std::exception_ptr> failures(samples.size());
    auto work = [&](int first, int stride) {
        for (int i = first; i < n_samples; i += stride) {
            try {
                samples[i] = simulate_sample(params, seed, i);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    threads = std::clamp(threads, 1, n_samples);
    if (threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (!failures[i]) continue;
        try {
            std::rethrow_exception(failures[i]);
        } catch (const SolverError& e) {
            throw SolverError("sample " + std::to_string(i) + ": " + e.what(), e.step());
        } catch (const Error& e) {
            throw NumericError("sample " + std::to_string(i) + ": " + e.what());
        }
    }

    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed ^ 0x5eedULL));
    std::shuffle(order.begin(), order.end(), rng);

    const auto n = static_cast<std::size_t>(n_samples);
    const auto n_train = static_cast<std::size_t>(std::floor(split.train * n_samples + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(split.validation * n_samples + 1e-9));
    Dataset ds;
    ds.system = params.kind;
    ds.seed = seed;
    ds.split = split;
    ds.dt = params.dt();
    for (std::size_t k = 0; k < n; ++k) {
        Trajectory& tr = samples[order[k]];
        if (k < n_train)
            ds.train.push_back(std::move(tr));
        else if (k < n_train + n_val)
            ds.validation.push_back(std::move(tr));
        else
            ds.test.push_back(std::move(tr));
    }
    return ds;
}

namespace {

constexpr const char* kDatasetMagic = "koopflow-dataset";

const char* split_name(int part) {
    static const char* names[] = {"train", "validation", "test"};
    return names[part];
}

}  // namespace

void write_dataset(const Dataset& ds, std::ostream& out) {
    using textio::format_double;
    out << kDatasetMagic << " 1\n";
    out << "system " << to_string(ds.system) << '\n';
    out << "seed " << ds.seed << '\n';
    out << "dt " << format_double(ds.dt) << '\n';
    out << "m " << ds.state_dim() << '\n';
    out << "T " << ds.steps() << '\n';
    out << "split " << format_double(ds.split.train) << ' ' << format_double(ds.split.validation) << ' '
        << format_double(ds.split.test) << '\n';
    out << "counts " << ds.train.size() << ' ' << ds.validation.size() << ' ' << ds.test.size() << '\n';
    const std::vector<Trajectory>* parts[] = {&ds.train, &ds.validation, &ds.test};
    for (int p = 0; p < 3; ++p) {
        for (const auto& tr : *parts[p]) {
            out << "trajectory " << tr.sample_id << ' ' << split_name(p) << ' ' << format_double(tr.parameter) << ' '
                << tr.states.rows() << ' ' << tr.states.cols() << '\n';
            textio::write_matrix(out, tr.states);
        }
    }
    out << "end\n";
    if (!out) throw IoError("failed writing dataset");
}

Dataset read_dataset(std::istream& in) {
    using namespace textio;
    if (next_token(in, "dataset header") != kDatasetMagic) throw IoError("not a dataset file");
    if (parse_int(next_token(in, "version")) != 1) throw IoError("unsupported dataset version");
    Dataset ds;
    expect_token(in, "system");
    try {
        ds.system = parse_system_kind(next_token(in, "system"));
    } catch (const ConfigError& e) {
        throw IoError(e.what());
    }
    expect_token(in, "seed");
    ds.seed = static_cast<std::uint64_t>(std::stoull(next_token(in, "seed")));
    expect_token(in, "dt");
    ds.dt = parse_double(next_token(in, "dt"));
    expect_token(in, "m");
    const long long m = parse_int(next_token(in, "m"));
    expect_token(in, "T");
    const long long steps = parse_int(next_token(in, "T"));
    expect_token(in, "split");
    ds.split.train = parse_double(next_token(in, "split"));
    ds.split.validation = parse_double(next_token(in, "split"));
    ds.split.test = parse_double(next_token(in, "split"));
    expect_token(in, "counts");
    long long counts[3];
    for (auto& c : counts) c = parse_int(next_token(in, "count"));
    std::vector<Trajectory>* parts[] = {&ds.train, &ds.validation, &ds.test};
    for (int p = 0; p < 3; ++p) {
        for (long long k = 0; k < counts[p]; ++k) {
            expect_token(in, "trajectory");
            Trajectory tr;
            tr.sample_id = static_cast<int>(parse_int(next_token(in, "sample id")));
            if (next_token(in, "split name") != split_name(p)) throw IoError("trajectory listed under wrong split");
            tr.parameter = parse_double(next_token(in, "parameter"));
            const long long rows = parse_int(next_token(in, "rows"));
            const long long cols = parse_int(next_token(in, "cols"));
            if (rows != steps + 1 || cols != m) throw IoError("trajectory shape does not match header");
            tr.states = read_matrix(in, rows, cols);
            tr.dt = ds.dt;
            tr.system = to_string(ds.system);
            parts[p]->push_back(std::move(tr));
        }
    }
    expect_token(in, "end");
    return ds;
}

void write_dataset_file(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_dataset(ds, out);
}

Dataset read_dataset_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    return read_dataset(in);
}

void write_dataset_csv(const Dataset& ds, std::ostream& out) {
    out << "sample_id,split,t";
    for (int i = 1; i <= ds.state_dim(); ++i) out << ",x_" << i;
    out << '\n';
    const std::vector<Trajectory>* parts[] = {&ds.train, &ds.validation, &ds.test};
    for (int p = 0; p < 3; ++p)
        for (const auto& tr : *parts[p])
            for (Eigen::Index t = 0; t < tr.states.rows(); ++t) {
                out << tr.sample_id << ',' << split_name(p) << ',' << t;
                for (Eigen::Index c = 0; c < tr.states.cols(); ++c)
                    out << ',' << textio::format_double(tr.states(t, c));
                out << '\n';
            }
}

}  // namespace koopflow
