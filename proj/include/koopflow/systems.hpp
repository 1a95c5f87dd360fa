#pragma once

// Benchmark dynamical systems and dataset assembly.

#include "koopflow/nncore.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace koopflow {

struct Trajectory {
    Matrix states;  // [(T+1) x m], row k = x_k
    double dt = 1.0;
    std::string system;
    double parameter = 0.0;  // sampled xi; first initial coordinate for maps
    int sample_id = 0;

    int steps() const { return static_cast<int>(states.rows()) - 1; }
    int dim() const { return static_cast<int>(states.cols()); }
};

/// x1' = lambda x1, x2' = mu x2 + (lambda^2 - mu) x1^2.
Trajectory simulate_fixed_point(const Eigen::Vector2d& x0, int steps, double lambda = 0.9, double mu = 0.5);

/// x' = A x.
Trajectory simulate_linear(const Matrix& a, const Vector& x0, int steps);

struct NewtonOptions {
    double tolerance = 1e-10;  // max-norm of the implicit-Euler residual
    int max_iterations = 50;
};

struct BurgersOptions {
    int nx = 30;  // interior points; boundaries x = -1, 1 are fixed at 0
    double dt = 0.01;
    double t_end = 1.0;
    double viscosity = 0.01 / 3.14159265358979323846;
    bool include_boundary = false;  // append the two zero boundary columns
    NewtonOptions newton;
};

/// Interior grid points x_i = -1 + i h, h = 2/(nx+1), i = 1..nx.
Vector burgers_grid(int nx);

/// u_t + u u_x = nu u_xx on (-1, 1), u(+-1) = 0, u(x, 0) = -xi sin(pi x).
/// Central differences in space (skew-symmetric advection), implicit Euler
/// in time with damped Newton.
Trajectory solve_burgers(double xi, const BurgersOptions& opts = {});
Trajectory solve_burgers_from(const Vector& u0, const BurgersOptions& opts = {});

struct AllenCahnOptions {
    int nx = 20;  // periodic unknowns; x = 1 is identified with x = -1
    double dt = 0.02;
    double t_end = 1.0;
    double gamma1 = 1e-4;
    double gamma2 = 5.0;
    NewtonOptions newton;
};

/// Periodic grid x_j = -1 + j h, h = 2/nx, j = 0..nx-1.
Vector allen_cahn_grid(int nx);

/// u_t - gamma1 u_xx + gamma2 (u^3 - u) = 0, periodic on [-1, 1),
/// u(x, 0) = xi x^2 cos(2 pi x).
Trajectory solve_allen_cahn(double xi, const AllenCahnOptions& opts = {});
Trajectory solve_allen_cahn_from(const Vector& u0, const AllenCahnOptions& opts = {});

enum class SystemKind { fixed_point, burgers, allen_cahn, linear };

SystemKind parse_system_kind(const std::string& name);
std::string to_string(SystemKind kind);

/// Everything needed to draw and simulate samples of one system.
struct SystemParams {
    SystemKind kind = SystemKind::fixed_point;

    // fixed_point and linear maps
    int steps = 60;
    double lambda = 0.9;
    double mu = 0.5;
    double x0_low = 0.2;
    double x0_high = 4.2;
    Matrix linear_matrix = (Matrix(2, 2) << 0.9, 0.0, 0.1, 0.5).finished();

    BurgersOptions burgers;
    double burgers_xi_low = 0.2;
    double burgers_xi_high = 1.2;

    AllenCahnOptions allen_cahn;
    double ac_xi_mean = -0.1;
    double ac_xi_variance = 0.04;

    int state_dim() const;
    double dt() const;
};

/// Draws the parameters of sample `index` and simulates it. The draw uses
/// only (seed, index), so samples are independent of evaluation order.
Trajectory simulate_sample(const SystemParams& params, std::uint64_t seed, int index);

struct SplitFractions {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

struct Dataset {
    SystemKind system = SystemKind::fixed_point;
    std::uint64_t seed = 0;
    SplitFractions split;
    double dt = 1.0;
    std::vector<Trajectory> train;
    std::vector<Trajectory> validation;
    std::vector<Trajectory> test;

    std::size_t size() const { return train.size() + validation.size() + test.size(); }
    int state_dim() const;
    int steps() const;
};

/// Simulates n samples (optionally on several threads) and splits them
/// floor(f_train n) / floor(f_val n) / remainder by a seeded shuffle.
Dataset make_dataset(const SystemParams& params, int n_samples, std::uint64_t seed, SplitFractions split = {},
                     int threads = 1);

void write_dataset(const Dataset& ds, std::ostream& out);
Dataset read_dataset(std::istream& in);
void write_dataset_file(const Dataset& ds, const std::string& path);
Dataset read_dataset_file(const std::string& path);
/// sample_id,split,t,x_1..x_m
void write_dataset_csv(const Dataset& ds, std::ostream& out);

}  // namespace koopflow
