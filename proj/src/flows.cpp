#include "koopflow/flows.hpp"

#include "koopflow/errors.hpp"
#include "koopflow/textio.hpp"

#include <cmath>
#include <fstream>

namespace koopflow {

CouplingKind parse_coupling_kind(const std::string& name) {
    if (name == "affine" || name == "acf") return CouplingKind::affine;
    if (name == "residual" || name == "rcf") return CouplingKind::residual;
    throw ConfigError("unknown coupling kind '" + name + "' (expected affine or residual)");
}

std::string to_string(CouplingKind kind) { return kind == CouplingKind::affine ? "affine" : "residual"; }

int default_split(int m) { return (m + 1) / 2; }

std::pair<Vector, Vector> split(const Vector& z, int q) {
    if (q < 1 || q > z.size() - 1)
        throw ConfigError("split index " + std::to_string(q) + " out of range for dimension " +
                          std::to_string(z.size()));
    return {z.head(q), z.tail(z.size() - q)};
}

CouplingLayer::CouplingLayer(CouplingKind kind, bool flipped, int m, int q, Fnn net)
    : kind_(kind), flipped_(flipped), m_(m), q_(q), net_(std::move(net)) {
    if (m < 2) throw ConfigError("coupling layer needs dimension >= 2");
    if (q < 1 || q > m - 1) throw ConfigError("split index " + std::to_string(q) + " out of range [1, m-1]");
    const int heads = kind == CouplingKind::affine ? 2 : 1;
    if (net_.input_dim() != passive_dim() || net_.output_dim() != heads * active_dim())
        throw ShapeError("coupling network maps " + std::to_string(net_.input_dim()) + " -> " +
                         std::to_string(net_.output_dim()) + ", layer needs " + std::to_string(passive_dim()) +
                         " -> " + std::to_string(heads * active_dim()));
}

Matrix CouplingLayer::scale_of(const Matrix& raw) const {
    return raw.cwiseMax(-kScaleClamp).cwiseMin(kScaleClamp).array().exp().matrix();
}

Matrix CouplingLayer::forward(const Matrix& z) const {
    if (z.cols() != m_) throw ShapeError("coupling forward: expected width " + std::to_string(m_));
    const int a = active_dim();
    const Matrix out = net_.forward_batch(z.middleCols(passive_offset(), passive_dim()));
    Matrix y = z;
    auto active = y.middleCols(active_offset(), a);
    active += out.leftCols(a);
    if (kind_ == CouplingKind::affine) active.array() *= scale_of(out.rightCols(a)).array();
    if (!y.allFinite()) throw NumericError("coupling forward produced non-finite values");
    return y;
}

Matrix CouplingLayer::inverse(const Matrix& y) const {
    if (y.cols() != m_) throw ShapeError("coupling inverse: expected width " + std::to_string(m_));
    const int a = active_dim();
    const Matrix out = net_.forward_batch(y.middleCols(passive_offset(), passive_dim()));
    Matrix z = y;
    auto active = z.middleCols(active_offset(), a);
    if (kind_ == CouplingKind::affine) {
        const Matrix s = scale_of(out.rightCols(a));
        if ((s.array().abs() < kSingularScale).any()) throw SingularScaleError("coupling inverse: scale is singular");
        active.array() /= s.array();
    }
    active -= out.leftCols(a);
    if (!z.allFinite()) throw NumericError("coupling inverse produced non-finite values");
    return z;
}

Var CouplingLayer::forward(Tape& tape, Var z) {
    const int a = active_dim();
    Var passive = ad::cols(z, passive_offset(), passive_dim());
    Var active = ad::cols(z, active_offset(), a);
    Var out = net_.forward(tape, passive);
    Var moved = ad::add(active, ad::cols(out, 0, a));
    if (kind_ == CouplingKind::affine)
        moved = ad::mul(moved, ad::exp(ad::clamp(ad::cols(out, a, a), -kScaleClamp, kScaleClamp)));
    return flipped_ ? ad::hcat(moved, passive) : ad::hcat(passive, moved);
}

Var CouplingLayer::inverse(Tape& tape, Var y) {
    const int a = active_dim();
    Var passive = ad::cols(y, passive_offset(), passive_dim());
    Var active = ad::cols(y, active_offset(), a);
    Var out = net_.forward(tape, passive);
    if (kind_ == CouplingKind::affine)
        active = ad::div(active, ad::exp(ad::clamp(ad::cols(out, a, a), -kScaleClamp, kScaleClamp)));
    Var moved = ad::sub(active, ad::cols(out, 0, a));
    return flipped_ ? ad::hcat(moved, passive) : ad::hcat(passive, moved);
}

FlowNetwork::FlowNetwork(int dim, std::vector<CouplingLayer> layers) : dim_(dim), layers_(std::move(layers)) {
    if (dim < 2) throw ConfigError("flow dimension must be >= 2");
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].dim() != dim)
            throw ShapeError("layer " + std::to_string(i) + " has dimension " + std::to_string(layers_[i].dim()));
}

Matrix FlowNetwork::forward(const Matrix& x) const {
    if (x.cols() != dim_) throw ShapeError("flow forward: expected width " + std::to_string(dim_));
    Matrix h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            h = layers_[i].forward(h);
        } catch (const NumericError& e) {
            throw NumericError("layer " + std::to_string(i) + ": " + e.what(), static_cast<int>(i));
        }
    }
    return h;
}

Matrix FlowNetwork::inverse(const Matrix& y) const {
    if (y.cols() != dim_) throw ShapeError("flow inverse: expected width " + std::to_string(dim_));
    Matrix h = y;
    for (std::size_t k = layers_.size(); k-- > 0;) {
        try {
            h = layers_[k].inverse(h);
        } catch (const SingularScaleError& e) {
            throw SingularScaleError("layer " + std::to_string(k) + ": " + e.what(), static_cast<int>(k));
        } catch (const NumericError& e) {
            throw NumericError("layer " + std::to_string(k) + ": " + e.what(), static_cast<int>(k));
        }
    }
    return h;
}

Vector FlowNetwork::forward(const Vector& x) const {
    Matrix row = x.transpose();
    return forward(row).row(0).transpose();
}

Vector FlowNetwork::inverse(const Vector& y) const {
    Matrix row = y.transpose();
    return inverse(row).row(0).transpose();
}

Var FlowNetwork::forward(Tape& tape, Var x) {
    if (x.cols() != dim_) throw ShapeError("flow forward: expected width " + std::to_string(dim_));
    Var h = x;
    for (auto& layer : layers_) h = layer.forward(tape, h);
    return h;
}

Var FlowNetwork::inverse(Tape& tape, Var y) {
    if (y.cols() != dim_) throw ShapeError("flow inverse: expected width " + std::to_string(dim_));
    Var h = y;
    for (std::size_t k = layers_.size(); k-- > 0;) h = layers_[k].inverse(tape, h);
    return h;
}

ParameterList FlowNetwork::parameters() {
    ParameterList out;
    for (auto& layer : layers_) {
        auto p = layer.net().parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::size_t FlowNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += layer.net().parameter_count();
    return n;
}

FlowNetwork make_flow(const FlowSpec& spec, std::uint64_t seed) {
    if (spec.depth < 0) throw ConfigError("flow depth must be >= 0");
    const int m = spec.dim;
    if (m < 2) throw ConfigError("flow dimension must be >= 2");
    if (!(spec.output_scale >= 0.0) || !std::isfinite(spec.output_scale))
        throw ConfigError("output_scale must be a finite non-negative number");
    const int q = spec.split.value_or(default_split(m));
    if (q < 1 || q > m - 1) throw ConfigError("split index " + std::to_string(q) + " out of range [1, m-1]");
    const int heads = spec.kind == CouplingKind::affine ? 2 : 1;
    std::vector<CouplingLayer> layers;
    for (int i = 0; i < spec.depth; ++i) {
        const bool flipped = (i % 2) == 1;
        const int passive = flipped ? m - q : q;
        const int active = m - passive;
        std::vector<int> dims{passive};
        dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
        dims.push_back(heads * active);
        Fnn net = xavier_init(dims, mix_seed(seed + static_cast<std::uint64_t>(i)), spec.activation);
        net.layers().back().weight.value *= spec.output_scale;
        layers.emplace_back(spec.kind, flipped, m, q, std::move(net));
    }
    return FlowNetwork(m, std::move(layers));
}

namespace {
constexpr const char* kFlowMagic = "koopflow-flow";
constexpr int kFlowVersion = 1;
}  // namespace

void save_flow(const FlowNetwork& net, std::ostream& out) {
    out << kFlowMagic << ' ' << kFlowVersion << '\n';
    out << "dim " << net.dim() << " depth " << net.depth() << '\n';
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const auto& layer = net.layers()[i];
        const Fnn& fnn = layer.net();
        out << "layer " << i << " kind " << to_string(layer.kind()) << " flipped " << (layer.flipped() ? 1 : 0)
            << " split " << layer.split_index() << " activation " << to_string(fnn.activation()) << '\n';
        const auto dims = fnn.dims();
        out << "dims " << dims.size();
        for (int d : dims) out << ' ' << d;
        out << '\n';
        for (const auto& dl : fnn.layers()) {
            out << "weight " << dl.weight.value.rows() << ' ' << dl.weight.value.cols() << '\n';
            textio::write_matrix(out, dl.weight.value);
            out << "bias " << dl.bias.value.rows() << ' ' << dl.bias.value.cols() << '\n';
            textio::write_matrix(out, dl.bias.value.transpose());
        }
    }
    out << "end\n";
    if (!out) throw IoError("failed writing flow network");
}

FlowNetwork load_flow(std::istream& in) {
    using namespace textio;
    if (next_token(in, "flow header") != kFlowMagic) throw IoError("not a flow network file");
    const long long version = parse_int(next_token(in, "version"));
    if (version != kFlowVersion) throw IoError("unsupported flow file version " + std::to_string(version));
    expect_token(in, "dim");
    const int dim = static_cast<int>(parse_int(next_token(in, "dim")));
    expect_token(in, "depth");
    const long long depth = parse_int(next_token(in, "depth"));
    if (dim < 2 || depth < 0 || depth > 100000) throw IoError("corrupt flow header");
    std::vector<CouplingLayer> layers;
    for (long long i = 0; i < depth; ++i) {
        expect_token(in, "layer");
        if (parse_int(next_token(in, "layer index")) != i) throw IoError("layer index out of order");
        expect_token(in, "kind");
        const std::string kind = next_token(in, "kind");
        expect_token(in, "flipped");
        const long long flipped = parse_int(next_token(in, "flipped"));
        expect_token(in, "split");
        const int q = static_cast<int>(parse_int(next_token(in, "split")));
        expect_token(in, "activation");
        const std::string act = next_token(in, "activation");
        expect_token(in, "dims");
        const long long nd = parse_int(next_token(in, "dims count"));
        if (nd < 2 || nd > 1000) throw IoError("corrupt layer dims");
        std::vector<int> dims;
        for (long long k = 0; k < nd; ++k) dims.push_back(static_cast<int>(parse_int(next_token(in, "dim"))));
        std::vector<DenseLayer> dense;
        for (long long k = 0; k + 1 < nd; ++k) {
            expect_token(in, "weight");
            const long long r = parse_int(next_token(in, "rows"));
            const long long c = parse_int(next_token(in, "cols"));
            if (r != dims[k + 1] || c != dims[k]) throw IoError("weight shape does not match dims");
            Matrix w = read_matrix(in, r, c);
            expect_token(in, "bias");
            const long long br = parse_int(next_token(in, "rows"));
            const long long bc = parse_int(next_token(in, "cols"));
            if (br != r || bc != 1) throw IoError("bias shape does not match dims");
            Matrix b = read_matrix(in, 1, br).transpose();
            dense.push_back(DenseLayer{Parameter(std::move(w)), Parameter(std::move(b))});
        }
        try {
            layers.emplace_back(parse_coupling_kind(kind), flipped != 0, dim, q,
                                Fnn(std::move(dense), parse_activation(act)));
        } catch (const Error& e) {
            throw IoError(std::string("invalid layer in flow file: ") + e.what());
        }
    }
    expect_token(in, "end");
    return FlowNetwork(dim, std::move(layers));
}

void save_flow_file(const FlowNetwork& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    save_flow(net, out);
}

FlowNetwork load_flow_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open flow file '" + path + "'");
    return load_flow(in);
}

}  // namespace koopflow
