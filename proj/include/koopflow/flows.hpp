#pragma once

// Coupling-flow invertible networks. A FlowNetwork's forward direction is
// the observable map g; its inverse direction reuses the same parameters to
// map observables back to states.

#include "koopflow/nncore.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace koopflow {

enum class CouplingKind { affine, residual };

CouplingKind parse_coupling_kind(const std::string& name);
std::string to_string(CouplingKind kind);

/// Scale values are exp(clamp(raw, -kScaleClamp, kScaleClamp)).
inline constexpr double kScaleClamp = 7.0;
/// Inverse refuses scale entries smaller than this in magnitude.
inline constexpr double kSingularScale = 1e-30;

/// Default split index ceil(m/2).
int default_split(int m);

/// (z[0..q), z[q..m)).
std::pair<Vector, Vector> split(const Vector& z, int q);

/// One coupling block. The passive half conditions a shift t (and for the
/// affine kind a scale s) applied to the active half:
///   affine:   active' = (active + t(passive)) * s(passive)
///   residual: active' =  active + t(passive)
/// Unflipped layers keep the first q coordinates passive; flipped layers keep
/// the last m-q passive. A single network emits [t | raw s] side by side.
class CouplingLayer {
public:
    CouplingLayer(CouplingKind kind, bool flipped, int m, int q, Fnn net);

    Matrix forward(const Matrix& z) const;
    Matrix inverse(const Matrix& y) const;
    Var forward(Tape& tape, Var z);
    Var inverse(Tape& tape, Var y);

    CouplingKind kind() const { return kind_; }
    bool flipped() const { return flipped_; }
    int dim() const { return m_; }
    int split_index() const { return q_; }
    int passive_dim() const { return flipped_ ? m_ - q_ : q_; }
    int active_dim() const { return flipped_ ? q_ : m_ - q_; }

    Fnn& net() { return net_; }
    const Fnn& net() const { return net_; }

private:
    int passive_offset() const { return flipped_ ? q_ : 0; }
    int active_offset() const { return flipped_ ? 0 : q_; }
    Matrix scale_of(const Matrix& raw) const;

    CouplingKind kind_;
    bool flipped_;
    int m_;
    int q_;
    Fnn net_;
};

struct FlowSpec {
    int dim = 2;
    CouplingKind kind = CouplingKind::affine;
    int depth = 3;
    std::vector<int> hidden{8};
    std::optional<int> split;  // defaults to ceil(dim/2)
    Activation activation = Activation::relu;
    // Multiplies the Xavier draw of each coupling net's output layer, so a
    // fresh flow starts close to the identity. 1 keeps the plain draw.
    double output_scale = 0.1;
};

/// Ordered composition of coupling layers.
class FlowNetwork {
public:
    FlowNetwork() = default;
    FlowNetwork(int dim, std::vector<CouplingLayer> layers);

    /// g: states -> observables. Row-wise on batches.
    Matrix forward(const Matrix& x) const;
    Vector forward(const Vector& x) const;
    /// f = g^{-1}: observables -> states.
    Matrix inverse(const Matrix& y) const;
    Vector inverse(const Vector& y) const;

    Var forward(Tape& tape, Var x);
    Var inverse(Tape& tape, Var y);

    int dim() const { return dim_; }
    int depth() const { return static_cast<int>(layers_.size()); }
    std::vector<CouplingLayer>& layers() { return layers_; }
    const std::vector<CouplingLayer>& layers() const { return layers_; }

    ParameterList parameters();
    std::size_t parameter_count() const;

private:
    int dim_ = 0;
    std::vector<CouplingLayer> layers_;
};

/// Xavier-initialized flow; layers alternate unflipped/flipped starting
/// unflipped. Each layer's network has widths [passive, hidden..., heads].
FlowNetwork make_flow(const FlowSpec& spec, std::uint64_t seed);

/// Text serialization. Parameters are written in shortest round-trip form, so
/// save -> load reproduces every bit.
void save_flow(const FlowNetwork& net, std::ostream& out);
FlowNetwork load_flow(std::istream& in);
void save_flow_file(const FlowNetwork& net, const std::string& path);
FlowNetwork load_flow_file(const std::string& path);

}  // namespace koopflow
