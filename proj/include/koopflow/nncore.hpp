#pragma once

// Small differentiable-network substrate: a reverse-mode tape over dense
// matrices, fully connected networks, Adam and a plateau LR scheduler.
//
// Batches are stored row-wise: a matrix of shape [batch x features].

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace koopflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A trainable tensor and its accumulated gradient (same shape).
struct Parameter {
    Matrix value;
    Matrix grad;

    Parameter() = default;
    explicit Parameter(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

/// Records matrix operations for a single reverse sweep.
///
/// Nodes are appended in evaluation order, so the reverse sweep is a plain
/// backwards walk. Gradients of parameter leaves are added to
/// Parameter::grad; callers zero them between steps.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& upstream)>;

    Var constant(Matrix value);
    Var leaf(Parameter& p);

    /// Records a node computed by an op. `back` receives the node's gradient.
    Var push(Matrix value, Backward back);
    /// Replaces a node's backward rule; used by ops whose rule reads their own output.
    void set_backward(int id, Backward back);

    const Matrix& value(Var v) const;
    /// Gradient of the last backward() target w.r.t. `v` (zero if unreached).
    Matrix grad(Var v) const;

    /// Reverse sweep from a scalar (1x1) node of this tape.
    void backward(Var loss);

    void accumulate(int id, const Matrix& g);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward back;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

namespace ad {

/// X W^T + 1 b^T for X [n x in], W [out x in], b [out x 1].
Var linear(Var x, Var w, Var b);
Var matmul(Var a, Var b);
/// A C with C a constant matrix.
Var matmul_const(Var a, Matrix c);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var clamp(Var a, double lo, double hi);
Var cols(Var a, Eigen::Index start, Eigen::Index count);
Var rows(Var a, Eigen::Index start, Eigen::Index count);
Var hcat(Var a, Var b);
/// Reinterprets a 1 x (r*c) row as r x c, row t taken from entries [t*c, (t+1)*c).
Var fold_rows(Var a, Eigen::Index r, Eigen::Index c);
Var sum(Var a);
Var sum_squares(Var a);
Var transpose(Var a);
/// Inverse of a square matrix (LU); throws NumericError when singular.
Var inverse(Var a);
/// Orthonormal eigenvectors of the r largest eigenvalues of a symmetric
/// matrix, as columns. The gradient assumes the loss depends on the span only
/// (it is invariant under rotations within the retained block).
Var top_eigenvectors(Var c, Eigen::Index r);
/// Rows z_1..z_T of z_t = z_{t-1} a, for a row z_0 [1 x r] and a [r x r].
Var orbit(Var z0, Var a, Eigen::Index steps);

}  // namespace ad

enum class Activation { relu, tanh, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct DenseLayer {
    Parameter weight;  // [out x in]
    Parameter bias;    // [out x 1]
};

/// Fully connected network; the activation follows every layer but the last.
class Fnn {
public:
    Fnn() = default;
    Fnn(std::vector<DenseLayer> layers, Activation act);

    Vector forward(const Vector& x) const;
    /// Row-wise batch evaluation.
    Matrix forward_batch(const Matrix& x) const;
    Var forward(Tape& tape, Var x);

    Eigen::Index input_dim() const;
    Eigen::Index output_dim() const;
    std::vector<int> dims() const;
    Activation activation() const { return act_; }
    std::size_t parameter_count() const;

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    ParameterList parameters();

private:
    std::vector<DenseLayer> layers_;
    Activation act_ = Activation::relu;
};

/// Xavier-normal weights (std sqrt(2/(in+out))) and zero biases.
Fnn xavier_init(std::span<const int> dims, std::uint64_t seed, Activation act = Activation::relu);

void zero_grad(const ParameterList& params);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamOptions options;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::int64_t step = 0;

    AdamState() = default;
    AdamState(const ParameterList& params, AdamOptions opts);
};

/// One bias-corrected Adam update using each parameter's grad.
void adam_step(AdamState& state, const ParameterList& params);

struct PlateauOptions {
    double factor = 0.5;
    int patience = 10;
    double min_lr = 1e-6;
    double threshold = 1e-4;  // relative improvement
};

struct PlateauScheduler {
    PlateauOptions options;
    double lr = 1e-3;
    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    PlateauScheduler() = default;
    PlateauScheduler(double initial_lr, PlateauOptions opts) : options(opts), lr(initial_lr) {}

    /// Feeds one validation loss and returns the (possibly reduced) lr.
    double step(double val_loss);
};

/// splitmix64 finalizer; used to derive independent seeds from a counter.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace koopflow
