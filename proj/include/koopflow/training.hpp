#pragma once

// FlowDMD objective and training loop, plus the Exact DMD and autoencoder
// baselines it is compared against.

#include "koopflow/dmd.hpp"
#include "koopflow/flows.hpp"
#include "koopflow/metrics.hpp"
#include "koopflow/nncore.hpp"
#include "koopflow/systems.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace koopflow {

struct TrainingOptions {
    AdamOptions adam;
    PlateauOptions plateau;
    int max_epochs = 3000;
    int early_stop = 200;  // epochs without validation improvement
    bool shuffle = true;
};

/// How gradients treat the DMD fit inside the losses.
///  frozen:  modes and eigenvalues are constants for the backward pass.
///  through: the rank-r fit is differentiated as a function of the observables.
enum class DmdGradient { frozen, through };

DmdGradient parse_dmd_gradient(const std::string& name);
std::string to_string(DmdGradient g);

struct FlowDmdConfig {
    FlowSpec network;
    double alpha = 1.0;
    int rank = 2;
    DmdGradient gradient = DmdGradient::through;
    TrainingOptions training;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double l_linear = 0.0;  // training means over trajectories
    double l_rec = 0.0;
    double total = 0.0;
    double val_total = 0.0;
    double lr = 0.0;
};

struct TrainedModel {
    FlowNetwork flow;                    // best-validation parameters
    std::vector<DmdModel> train_models;  // per training trajectory, fit with `flow`
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val = 0.0;
};

struct LinearityResult {
    double loss = 0.0;
    DmdModel model;
};

/// Fits rank-r DMD on g(x_0..x_T) and returns sum_{t>=1} ||g(x_t) - ghat_t||^2.
LinearityResult linearity_loss(const FlowNetwork& flow, const Trajectory& traj, int rank);
/// sum_{t>=1} ||x_t - f(ghat_t)||^2 with ghat from `model`.
double reconstruction_loss(const FlowNetwork& flow, const Trajectory& traj, const DmdModel& model);

/// [M_1^T | ... | M_T^T] with M_t = Re(Phi Lambda^t Phi^+), shape [n x T n].
Matrix stacked_propagators(const DmdModel& model, int steps);

struct TapeLosses {
    Var linear;
    Var rec;
};

/// Records both losses with the spectral factors held fixed: the k-step
/// observable prediction is M_k g(x_0), where g(x_0) stays differentiable.
/// `g_states` is flow.forward(tape, states) if already recorded.
TapeLosses record_flowdmd_losses(Tape& tape, FlowNetwork& flow, Var states, Var g_states,
                                 const Matrix& stacked);

/// Same losses with the DMD fit recorded on the tape. For a non-defective fit
/// Re(Phi Lambda^t Phi^+) equals B K^t B^+ with B = Y V S^-1 and K = U^T B,
/// which is real and differentiable given the retained SVD subspace.
TapeLosses record_flowdmd_losses_through(Tape& tape, FlowNetwork& flow, Var states, Var g_states, int rank);

/// Trains a FlowDMD model; supports stepping epoch by epoch and checkpointing.
class FlowDmdTrainer {
public:
    FlowDmdTrainer(FlowDmdConfig config, const Dataset& data);

    /// Runs one epoch. Returns false once training has stopped.
    bool run_epoch();
    /// Runs until stopped, or at most `max_more` epochs when non-negative.
    void run(int max_more = -1);
    bool finished() const;
    int epoch() const { return epoch_; }

    TrainedModel result() const;
    const std::vector<EpochRecord>& history() const { return history_; }
    const FlowNetwork& flow() const { return flow_; }
    const FlowNetwork& best_flow() const { return best_flow_; }
    const FlowDmdConfig& config() const { return config_; }

    /// Mean L_linear + alpha L_rec over `trajs` for the current parameters.
    double mean_total_loss(const std::vector<Trajectory>& trajs) const;

    void save_state(std::ostream& out) const;
    void load_state(std::istream& in);

    /// Optional per-epoch hook (progress output).
    std::function<void(const EpochRecord&)> on_epoch;

private:
    FlowDmdConfig config_;
    const Dataset* data_;
    FlowNetwork flow_;
    FlowNetwork best_flow_;
    AdamState adam_;
    PlateauScheduler scheduler_;
    std::vector<EpochRecord> history_;
    int epoch_ = 0;
    double best_val_;
    int best_epoch_ = 0;
    int since_best_ = 0;
    bool stopped_ = false;
};

TrainedModel train_flowdmd(const FlowDmdConfig& config, const Dataset& data);

/// x_hat rows 0..T: fit DMD on g(states), predict, map back with f.
Matrix reconstruct_flowdmd(const FlowNetwork& flow, const Matrix& states, int rank);
/// Exact DMD (identity observables).
Matrix reconstruct_exact_dmd(const Matrix& states, int rank);

std::vector<ErrorReport> evaluate_flowdmd(const FlowNetwork& flow, const std::vector<Trajectory>& trajs, int rank);
std::vector<ErrorReport> evaluate_exact_dmd(const std::vector<Trajectory>& trajs, int rank);

/// Exact DMD reconstructions of every test trajectory.
std::vector<Matrix> exact_dmd_baseline(const Dataset& data, int rank);

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

// ---------------------------------------------------------------------------
// Autoencoder baseline

struct AeConfig {
    std::vector<int> encoder{2, 10, 10, 3};
    std::vector<int> decoder{3, 10, 10, 2};
    Activation activation = Activation::relu;
    int epochs = 400;
    int batch_size = 64;
    int early_stop = 100;
    AdamOptions adam;
    PlateauOptions plateau;
    std::uint64_t seed = 0;
    int probe_points = 500;  // size of each out-of-distribution probe set
};

struct AeReport {
    double train_error = 0.0;            // mean ||D(E(x)) - x|| on training states
    double in_distribution_error = 0.0;  // same on held-out test states
    double sin_error = 0.0;
    double s_curve_error = 0.0;
    double normal_error = 0.0;
    double latent_cycle_error = 0.0;  // mean ||E(D(z)) - z|| at standard-normal latents
};

struct AeResult {
    Fnn encoder;
    Fnn decoder;
    AeReport report;
    std::vector<double> val_history;
};

/// Probe sets: points on x2 = sin(x1), an S-shaped curve, and a standard normal cloud.
Matrix ood_sin_curve(int n);
Matrix ood_s_curve(int n, std::uint64_t seed);
Matrix ood_normal(int n, int dim, std::uint64_t seed);

/// Mean Euclidean reconstruction error ||D(E(x)) - x|| over rows.
double ae_mean_error(const Fnn& encoder, const Fnn& decoder, const Matrix& x);

/// Trains E, D on pooled training snapshots with the MSE of D(E(x)).
AeResult train_ae_baseline(const AeConfig& config, const Dataset& data);

/// Latent-space DMD: D(Re(Phi Lambda^t b)) with DMD fit on E(states).
Matrix reconstruct_ae_dmd(const Fnn& encoder, const Fnn& decoder, const Matrix& states, int rank);

}  // namespace koopflow
