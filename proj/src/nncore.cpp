#include "koopflow/nncore.hpp"

#include "koopflow/errors.hpp"

#include <cmath>
#include <random>

namespace koopflow {

const Matrix& Var::value() const {
    if (tape == nullptr) throw UsageError("Var is not attached to a tape");
    return tape->value(*this);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Parameter& p) {
    nodes_.push_back(Node{p.value, Matrix(), nullptr, &p});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, Backward back) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(back), nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_backward(int id, Backward back) { nodes_.at(id).back = std::move(back); }

const Matrix& Tape::value(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw UsageError("variable does not belong to this tape");
    return nodes_[v.id].value;
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0)
        n.grad = g;
    else
        n.grad += g;
}

void Tape::backward(Var loss) {
    if (loss.tape != this || loss.id < 0 || static_cast<std::size_t>(loss.id) >= nodes_.size())
        throw UsageError("backward: loss was not recorded on this tape");
    if (nodes_[loss.id].value.size() != 1)
        throw UsageError("backward: loss must be a scalar (1x1) node");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.size() == 0) continue;
        if (n.back) n.back(*this, n.grad);
        if (n.param != nullptr) n.param->grad += n.grad;
    }
}

namespace ad {

namespace {

void same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
}

Tape& tape_of(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw UsageError("operands live on different tapes");
    return *a.tape;
}

}  // namespace

Var linear(Var x, Var w, Var b) {
    Tape& t = tape_of(x, w);
    tape_of(w, b);
    const Matrix& X = x.value();
    const Matrix& W = w.value();
    const Matrix& B = b.value();
    if (X.cols() != W.cols() || B.rows() != W.rows() || B.cols() != 1)
        throw ShapeError("linear: input width " + std::to_string(X.cols()) + " does not match weight " +
                         std::to_string(W.rows()) + "x" + std::to_string(W.cols()));
    Matrix y = X * W.transpose();
    y.rowwise() += B.col(0).transpose();
    const int xi = x.id, wi = w.id, bi = b.id;
    return t.push(std::move(y), [xi, wi, bi](Tape& tp, const Matrix& g) {
        const Matrix& Xv = tp.value(Var{&tp, xi});
        const Matrix& Wv = tp.value(Var{&tp, wi});
        tp.accumulate(xi, g * Wv);
        tp.accumulate(wi, g.transpose() * Xv);
        tp.accumulate(bi, g.colwise().sum().transpose());
    });
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    const int ai = a.id, bi = b.id;
    return t.push(a.value() * b.value(), [ai, bi](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, g * tp.value(Var{&tp, bi}).transpose());
        tp.accumulate(bi, tp.value(Var{&tp, ai}).transpose() * g);
    });
}

Var matmul_const(Var a, Matrix c) {
    if (a.cols() != c.rows()) throw ShapeError("matmul_const: inner dimensions differ");
    const int ai = a.id;
    Matrix y = a.value() * c;
    return a.tape->push(std::move(y), [ai, c = std::move(c)](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, g * c.transpose());
    });
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    same_shape(a.value(), b.value(), "add");
    const int ai = a.id, bi = b.id;
    return t.push(a.value() + b.value(), [ai, bi](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, g);
        tp.accumulate(bi, g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    same_shape(a.value(), b.value(), "sub");
    const int ai = a.id, bi = b.id;
    return t.push(a.value() - b.value(), [ai, bi](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, g);
        tp.accumulate(bi, -g);
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    same_shape(a.value(), b.value(), "mul");
    const int ai = a.id, bi = b.id;
    return t.push(a.value().cwiseProduct(b.value()), [ai, bi](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, g.cwiseProduct(tp.value(Var{&tp, bi})));
        tp.accumulate(bi, g.cwiseProduct(tp.value(Var{&tp, ai})));
    });
}

Var div(Var a, Var b) {
    Tape& t = tape_of(a, b);
    same_shape(a.value(), b.value(), "div");
    const int ai = a.id, bi = b.id;
    return t.push(a.value().cwiseQuotient(b.value()), [ai, bi](Tape& tp, const Matrix& g) {
        const Matrix& A = tp.value(Var{&tp, ai});
        const Matrix& B = tp.value(Var{&tp, bi});
        tp.accumulate(ai, g.cwiseQuotient(B));
        tp.accumulate(bi, -g.cwiseProduct(A).cwiseQuotient(B.cwiseProduct(B)));
    });
}

Var scale(Var a, double c) {
    const int ai = a.id;
    return a.tape->push(a.value() * c, [ai, c](Tape& tp, const Matrix& g) { tp.accumulate(ai, g * c); });
}

Var relu(Var a) {
    const int ai = a.id;
    return a.tape->push(a.value().cwiseMax(0.0), [ai](Tape& tp, const Matrix& g) {
        const Matrix& A = tp.value(Var{&tp, ai});
        tp.accumulate(ai, (A.array() > 0.0).select(g, 0.0));
    });
}

Var tanh(Var a) {
    const int ai = a.id;
    Matrix y = a.value().array().tanh().matrix();
    return a.tape->push(y, [ai, y](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, (g.array() * (1.0 - y.array().square())).matrix());
    });
}

Var exp(Var a) {
    const int ai = a.id;
    Matrix y = a.value().array().exp().matrix();
    return a.tape->push(y, [ai, y](Tape& tp, const Matrix& g) { tp.accumulate(ai, g.cwiseProduct(y)); });
}

Var clamp(Var a, double lo, double hi) {
    const int ai = a.id;
    return a.tape->push(a.value().cwiseMax(lo).cwiseMin(hi), [ai, lo, hi](Tape& tp, const Matrix& g) {
        const Matrix& A = tp.value(Var{&tp, ai});
        tp.accumulate(ai, (A.array() >= lo && A.array() <= hi).select(g, 0.0));
    });
}

Var cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("cols: slice out of range");
    const int ai = a.id;
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape->push(a.value().middleCols(start, count), [ai, r, c, start, count](Tape& tp, const Matrix& g) {
        Matrix full = Matrix::Zero(r, c);
        full.middleCols(start, count) = g;
        tp.accumulate(ai, full);
    });
}

Var rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("rows: slice out of range");
    const int ai = a.id;
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape->push(a.value().middleRows(start, count), [ai, r, c, start, count](Tape& tp, const Matrix& g) {
        Matrix full = Matrix::Zero(r, c);
        full.middleRows(start, count) = g;
        tp.accumulate(ai, full);
    });
}

Var hcat(Var a, Var b) {
    Tape& t = tape_of(a, b);
    if (a.rows() != b.rows()) throw ShapeError("hcat: row counts differ");
    Matrix y(a.rows(), a.cols() + b.cols());
    y << a.value(), b.value();
    const int ai = a.id, bi = b.id;
    const Eigen::Index ca = a.cols(), cb = b.cols();
    return t.push(std::move(y), [ai, bi, ca, cb](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, g.leftCols(ca));
        tp.accumulate(bi, g.rightCols(cb));
    });
}

Var fold_rows(Var a, Eigen::Index r, Eigen::Index c) {
    if (a.rows() != 1 || a.cols() != r * c) throw ShapeError("fold_rows: expected a 1 x (r*c) row");
    const Matrix& v = a.value();
    Matrix y(r, c);
    for (Eigen::Index t = 0; t < r; ++t) y.row(t) = v.block(0, t * c, 1, c);
    const int ai = a.id;
    return a.tape->push(std::move(y), [ai, r, c](Tape& tp, const Matrix& g) {
        Matrix flat(1, r * c);
        for (Eigen::Index t = 0; t < r; ++t) flat.block(0, t * c, 1, c) = g.row(t);
        tp.accumulate(ai, flat);
    });
}

Var sum(Var a) {
    const int ai = a.id;
    const Eigen::Index r = a.rows(), c = a.cols();
    Matrix y(1, 1);
    y(0, 0) = a.value().sum();
    return a.tape->push(std::move(y), [ai, r, c](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, Matrix::Constant(r, c, g(0, 0)));
    });
}

Var sum_squares(Var a) {
    const int ai = a.id;
    Matrix y(1, 1);
    y(0, 0) = a.value().squaredNorm();
    return a.tape->push(std::move(y), [ai](Tape& tp, const Matrix& g) {
        tp.accumulate(ai, 2.0 * g(0, 0) * tp.value(Var{&tp, ai}));
    });
}

Var transpose(Var a) {
    const int ai = a.id;
    return a.tape->push(a.value().transpose(),
                        [ai](Tape& tp, const Matrix& g) { tp.accumulate(ai, g.transpose()); });
}

Var inverse(Var a) {
    if (a.rows() != a.cols()) throw ShapeError("inverse: matrix is not square");
    Eigen::FullPivLU<Matrix> lu(a.value());
    if (!lu.isInvertible()) throw NumericError("inverse: matrix is singular");
    Matrix inv = lu.inverse();
    const int ai = a.id;
    Var out = a.tape->push(std::move(inv), nullptr);
    const int oi = out.id;
    // d(A^-1) = -A^-1 dA A^-1
    a.tape->set_backward(oi, [ai, oi](Tape& tp, const Matrix& g) {
        const Matrix& y = tp.value(Var{&tp, oi});
        tp.accumulate(ai, -(y.transpose() * g * y.transpose()));
    });
    return out;
}

Var top_eigenvectors(Var c, Eigen::Index r) {
    const Eigen::Index n = c.rows();
    if (c.cols() != n) throw ShapeError("top_eigenvectors: matrix is not square");
    if (r < 1 || r > n) throw ShapeError("top_eigenvectors: r out of range");
    Eigen::SelfAdjointEigenSolver<Matrix> es(c.value());
    if (es.info() != Eigen::Success) throw NumericError("top_eigenvectors: eigensolver failed");
    // Eigen sorts ascending; reverse so column 0 is the largest.
    const Matrix u = es.eigenvectors().rowwise().reverse();
    const Vector lam = es.eigenvalues().reverse();
    const int ci = c.id;
    return c.tape->push(u.leftCols(r), [ci, u, lam, r, n](Tape& tp, const Matrix& g) {
        // Only the coupling between retained and discarded directions carries
        // gradient; rotations inside either block leave the span unchanged.
        Matrix ug = Matrix::Zero(n, n);
        ug.leftCols(r) = u.transpose() * g;
        Matrix f = Matrix::Zero(n, n);
        for (Eigen::Index j = 0; j < r; ++j)
            for (Eigen::Index i = r; i < n; ++i) {
                const double gap = lam(j) - lam(i);
                if (gap <= 0.0) throw NumericError("top_eigenvectors: no spectral gap after the retained block");
                f(i, j) = ug(i, j) / gap;
            }
        const Matrix gc = u * f * u.transpose();
        tp.accumulate(ci, 0.5 * (gc + gc.transpose()));
    });
}

Var orbit(Var z0, Var a, Eigen::Index steps) {
    Tape& t = tape_of(z0, a);
    const Eigen::Index r = a.rows();
    if (a.cols() != r || z0.rows() != 1 || z0.cols() != r) throw ShapeError("orbit: expected z0 [1 x r] and a [r x r]");
    if (steps < 1) throw ShapeError("orbit: steps must be >= 1");
    Matrix z(steps, r);
    Matrix cur = z0.value();
    for (Eigen::Index k = 0; k < steps; ++k) {
        cur = cur * a.value();
        z.row(k) = cur;
    }
    const int zi = z0.id, ai = a.id;
    Var out = t.push(std::move(z), nullptr);
    const int oi = out.id;
    t.set_backward(oi, [zi, ai, oi, steps](Tape& tp, const Matrix& g) {
        const Matrix& am = tp.value(Var{&tp, ai});
        const Matrix& zs = tp.value(Var{&tp, oi});
        const Matrix& z0v = tp.value(Var{&tp, zi});
        Matrix ga = Matrix::Zero(am.rows(), am.cols());
        Matrix lam = Matrix::Zero(1, am.rows());
        for (Eigen::Index k = steps - 1; k >= 0; --k) {
            lam += g.row(k);
            ga += (k == 0 ? z0v : Matrix(zs.row(k - 1))).transpose() * lam;
            lam = lam * am.transpose();
        }
        tp.accumulate(ai, ga);
        tp.accumulate(zi, lam);
    });
    return out;
}

}  // namespace ad

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "identity" || name == "linear") return Activation::identity;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "relu";
}

Fnn::Fnn(std::vector<DenseLayer> layers, Activation act) : layers_(std::move(layers)), act_(act) {
    if (layers_.empty()) throw ConfigError("Fnn needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.bias.value.rows() != l.weight.value.rows() || l.bias.value.cols() != 1)
            throw ShapeError("Fnn: bias of layer " + std::to_string(i) + " does not match its weight");
        if (i > 0 && l.weight.value.cols() != layers_[i - 1].weight.value.rows())
            throw ShapeError("Fnn: layer " + std::to_string(i) + " input width does not chain");
    }
}

namespace {

void activate(Matrix& h, Activation act) {
    switch (act) {
        case Activation::relu: h = h.cwiseMax(0.0); break;
        case Activation::tanh: h = h.array().tanh().matrix(); break;
        case Activation::identity: break;
    }
}

}  // namespace

Vector Fnn::forward(const Vector& x) const {
    if (x.size() != input_dim())
        throw ShapeError("fnn_forward: input has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(input_dim()));
    Matrix row = x.transpose();
    return forward_batch(row).row(0).transpose();
}

Matrix Fnn::forward_batch(const Matrix& x) const {
    if (x.cols() != input_dim())
        throw ShapeError("fnn_forward: input has width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(input_dim()));
    Matrix h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Matrix next = h * layers_[i].weight.value.transpose();
        next.rowwise() += layers_[i].bias.value.col(0).transpose();
        if (i + 1 < layers_.size()) activate(next, act_);
        h = std::move(next);
    }
    return h;
}

Var Fnn::forward(Tape& tape, Var x) {
    if (x.cols() != input_dim()) throw ShapeError("fnn_forward: input width does not match network");
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = ad::linear(h, tape.leaf(layers_[i].weight), tape.leaf(layers_[i].bias));
        if (i + 1 < layers_.size()) {
            switch (act_) {
                case Activation::relu: h = ad::relu(h); break;
                case Activation::tanh: h = ad::tanh(h); break;
                case Activation::identity: break;
            }
        }
    }
    return h;
}

Eigen::Index Fnn::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.value.cols(); }
Eigen::Index Fnn::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.value.rows(); }

std::vector<int> Fnn::dims() const {
    std::vector<int> d;
    if (layers_.empty()) return d;
    d.push_back(static_cast<int>(input_dim()));
    for (const auto& l : layers_) d.push_back(static_cast<int>(l.weight.value.rows()));
    return d;
}

std::size_t Fnn::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.value.size() + l.bias.value.size();
    return n;
}

ParameterList Fnn::parameters() {
    ParameterList out;
    for (auto& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

Fnn xavier_init(std::span<const int> dims, std::uint64_t seed, Activation act) {
    if (dims.size() < 2) throw ConfigError("xavier_init: need at least input and output widths");
    for (int d : dims)
        if (d < 1) throw ConfigError("xavier_init: layer widths must be positive");
    std::mt19937_64 rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const int in = dims[i], out = dims[i + 1];
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in + out)));
        Matrix w(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) w(r, c) = normal(rng);
        layers.push_back(DenseLayer{Parameter(std::move(w)), Parameter(Matrix::Zero(out, 1))});
    }
    return Fnn(std::move(layers), act);
}

void zero_grad(const ParameterList& params) {
    for (Parameter* p : params) p->zero_grad();
}

AdamState::AdamState(const ParameterList& params, AdamOptions opts) : options(opts) {
    for (const Parameter* p : params) {
        m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void adam_step(AdamState& state, const ParameterList& params) {
    if (params.size() != state.m.size()) throw ShapeError("adam_step: parameter count differs from state");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = *params[i];
        if (p.grad.rows() != state.m[i].rows() || p.grad.cols() != state.m[i].cols() ||
            p.value.rows() != p.grad.rows() || p.value.cols() != p.grad.cols())
            throw ShapeError("adam_step: shape of parameter " + std::to_string(i) + " differs from state");
        if (!p.grad.allFinite()) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
    const auto& o = state.options;
    ++state.step;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * p.grad;
        state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * p.grad.cwiseProduct(p.grad);
        auto mhat = state.m[i].array() / bc1;
        auto vhat = state.v[i].array() / bc2;
        p.value.array() -= o.lr * mhat / (vhat.sqrt() + o.eps);
    }
}

double PlateauScheduler::step(double val_loss) {
    if (val_loss < best * (1.0 - options.threshold)) {
        best = val_loss;
        bad_epochs = 0;
    } else {
        ++bad_epochs;
    }
    if (bad_epochs > options.patience) {
        lr = std::max(lr * options.factor, options.min_lr);
        bad_epochs = 0;
    }
    return lr;
}

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace koopflow
