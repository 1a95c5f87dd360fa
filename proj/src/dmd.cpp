#include "koopflow/dmd.hpp"

#include "koopflow/errors.hpp"
#include "koopflow/textio.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace koopflow {

namespace {

ComplexMatrix pseudo_inverse(const ComplexMatrix& a) {
    Eigen::JacobiSVD<ComplexMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    ComplexMatrix out = ComplexMatrix::Zero(a.cols(), a.rows());
    if (s.size() == 0 || s(0) == 0.0) return out;
    const double cutoff = kRankTolerance * s(0);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) <= cutoff) break;
        out += svd.matrixV().col(i) * (1.0 / s(i)) * svd.matrixU().col(i).adjoint();
    }
    return out;
}

double condition_number(const ComplexMatrix& w) {
    Eigen::JacobiSVD<ComplexMatrix> svd(w);
    const Vector& s = svd.singularValues();
    if (s.size() == 0) return 1.0;
    const double smin = s(s.size() - 1);
    return smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

std::string ratio_text(double ratio) {
    std::ostringstream os;
    os.precision(3);
    os << ratio;
    return os.str();
}

}  // namespace

std::vector<int> spectral_order(const ComplexVector& eigenvalues) {
    std::vector<int> idx(static_cast<std::size_t>(eigenvalues.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return std::abs(eigenvalues(a)) > std::abs(eigenvalues(b)); });
    // equal moduli (conjugate pairs) are ordered by argument
    std::size_t start = 0;
    while (start < idx.size()) {
        std::size_t end = start + 1;
        const double ref = std::abs(eigenvalues(idx[start]));
        while (end < idx.size() &&
               ref - std::abs(eigenvalues(idx[end])) <= 1e-12 * std::max(ref, 1e-300))
            ++end;
        std::stable_sort(idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](int a, int b) { return std::arg(eigenvalues(a)) < std::arg(eigenvalues(b)); });
        start = end;
    }
    return idx;
}

DmdModel fit_dmd(const Matrix& x, const Matrix& y, int rank) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ShapeError("fit_dmd: X and Y must have the same shape");
    if (x.cols() < 1 || x.rows() < 1) throw ShapeError("fit_dmd: need at least one snapshot pair");
    if (!x.allFinite() || !y.allFinite()) throw NumericError("fit_dmd: snapshots contain non-finite values");
    if (rank < 1) throw ConfigError("fit_dmd: rank must be >= 1");
    const Eigen::Index maxrank = std::min(x.rows(), x.cols());
    if (rank > maxrank)
        throw RankDeficiencyError("fit_dmd: rank " + std::to_string(rank) + " exceeds min(n, p) = " +
                                      std::to_string(maxrank),
                                  0.0);

    Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sigma = svd.singularValues();
    const double ratio = sigma(0) > 0.0 ? sigma(rank - 1) / sigma(0) : 0.0;
    if (!(ratio > kRankTolerance))
        throw RankDeficiencyError("fit_dmd: rank " + std::to_string(rank) + " exceeds numerical rank (sigma_r/sigma_1 = " +
                                      ratio_text(ratio) + ")",
                                  ratio);

    const Matrix u = svd.matrixU().leftCols(rank);
    const Vector s = sigma.head(rank);
    const Matrix v = svd.matrixV().leftCols(rank);
    // Y V_r Sigma_r^{-1}
    const Matrix yvs = (y * v) * s.cwiseInverse().asDiagonal();
    const Matrix reduced = u.transpose() * yvs;

    Eigen::EigenSolver<Matrix> es(reduced, true);
    if (es.info() != Eigen::Success) throw NumericError("fit_dmd: eigen-decomposition failed");
    const ComplexVector lam = es.eigenvalues();
    const ComplexMatrix w = es.eigenvectors();

    const auto order = spectral_order(lam);
    DmdModel model;
    model.eigenvalues.resize(rank);
    ComplexMatrix ws(rank, rank);
    for (int i = 0; i < rank; ++i) {
        model.eigenvalues(i) = lam(order[i]);
        ws.col(i) = w.col(order[i]);
    }
    model.modes = yvs.cast<Complex>() * ws;
    model.modes_pinv = pseudo_inverse(model.modes);
    model.amplitudes = model.modes_pinv * x.col(0).cast<Complex>();
    model.singular_values = s;
    model.eigvec_condition = condition_number(ws);
    model.near_defective = !(model.eigvec_condition <= kDefectiveCondition);
    return model;
}

DmdModel fit_dmd_rows(const Matrix& snapshots, int rank) {
    if (snapshots.rows() < 2) throw ShapeError("fit_dmd: a trajectory needs at least two snapshots");
    const Eigen::Index p = snapshots.rows() - 1;
    return fit_dmd(snapshots.topRows(p).transpose(), snapshots.bottomRows(p).transpose(), rank);
}

ComplexVector DmdModel::predict_complex(int k) const {
    if (k < 0) throw UsageError("predict: step must be >= 0");
    ComplexVector coeff(eigenvalues.size());
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) coeff(i) = std::pow(eigenvalues(i), k) * amplitudes(i);
    return modes * coeff;
}

Prediction DmdModel::predict_checked(int k) const {
    const ComplexVector c = predict_complex(k);
    Prediction p;
    p.value = c.real();
    p.imag_norm = c.imag().norm();
    p.consistent = p.imag_norm <= kImagTolerance * std::max(p.value.norm(), 1e-300) || p.imag_norm == 0.0;
    return p;
}

Vector DmdModel::predict(int k) const { return predict_complex(k).real(); }

Matrix DmdModel::predict_rows(int steps) const {
    Matrix out(steps + 1, modes.rows());
    ComplexVector coeff = amplitudes;
    for (int k = 0; k <= steps; ++k) {
        out.row(k) = (modes * coeff).real().transpose();
        coeff = coeff.cwiseProduct(eigenvalues);
    }
    return out;
}

Matrix DmdModel::propagator(int k) const {
    if (k < 0) throw UsageError("propagator: step must be >= 0");
    ComplexVector powk(eigenvalues.size());
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) powk(i) = std::pow(eigenvalues(i), k);
    return (modes * powk.asDiagonal() * modes_pinv).real();
}

EigenPairs dense_dmd_oracle(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ShapeError("dense_dmd_oracle: X and Y must have the same shape");
    Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const Eigen::Index n = x.rows();
    if (s.size() < n || s(0) <= 0.0 || s(n - 1) <= kRankTolerance * s(0))
        throw RankDeficiencyError("dense_dmd_oracle: X does not have full row rank",
                                  s.size() < n || s(0) <= 0.0 ? 0.0 : s(n - 1) / s(0));
    const Matrix xpinv = svd.matrixV() * s.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
    const Matrix k = y * xpinv;
    Eigen::EigenSolver<Matrix> es(k, true);
    if (es.info() != Eigen::Success) throw NumericError("dense_dmd_oracle: eigen-decomposition failed");
    const auto order = spectral_order(es.eigenvalues());
    EigenPairs out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i) = es.eigenvalues()(order[i]);
        out.vectors.col(i) = es.eigenvectors().col(order[i]);
    }
    return out;
}

Vector reconstruct_state(const DmdModel& model, const InverseMap& inverse_map, int k) {
    return inverse_map(model.predict(k));
}

namespace {

void write_complex(std::ostream& out, Complex c) {
    out << textio::format_double17(c.real()) << ' ' << textio::format_double17(c.imag());
}

Complex read_complex(std::istream& in) {
    const double re = textio::parse_double(textio::next_token(in, "real part"));
    const double im = textio::parse_double(textio::next_token(in, "imaginary part"));
    return {re, im};
}

}  // namespace

void export_dmd(const DmdModel& model, std::ostream& out) {
    const int r = model.rank();
    out << "koopflow-dmd 1\n";
    out << "rank " << r << " dim " << model.dim() << '\n';
    out << "condition " << textio::format_double17(model.eigvec_condition) << '\n';
    out << "sigma\n";
    for (int i = 0; i < r; ++i) out << (i ? " " : "") << textio::format_double17(model.singular_values(i));
    out << "\neigenvalues\n";
    for (int i = 0; i < r; ++i) {
        write_complex(out, model.eigenvalues(i));
        out << '\n';
    }
    out << "modes\n";
    for (int row = 0; row < model.dim(); ++row) {
        for (int i = 0; i < r; ++i) {
            if (i) out << "  ";
            write_complex(out, model.modes(row, i));
        }
        out << '\n';
    }
    out << "amplitudes\n";
    for (int i = 0; i < r; ++i) {
        write_complex(out, model.amplitudes(i));
        out << '\n';
    }
    out << "end\n";
    if (!out) throw IoError("failed writing DMD model");
}

DmdModel import_dmd(std::istream& in) {
    using namespace textio;
    if (next_token(in, "header") != "koopflow-dmd" || parse_int(next_token(in, "version")) != 1)
        throw IoError("not a DMD model file");
    expect_token(in, "rank");
    const long long r = parse_int(next_token(in, "rank"));
    expect_token(in, "dim");
    const long long n = parse_int(next_token(in, "dim"));
    if (r < 1 || n < 1 || r > n) throw IoError("corrupt DMD header");
    DmdModel m;
    expect_token(in, "condition");
    m.eigvec_condition = parse_double(next_token(in, "condition"));
    m.near_defective = !(m.eigvec_condition <= kDefectiveCondition);
    expect_token(in, "sigma");
    m.singular_values.resize(r);
    for (long long i = 0; i < r; ++i) m.singular_values(i) = parse_double(next_token(in, "sigma"));
    expect_token(in, "eigenvalues");
    m.eigenvalues.resize(r);
    for (long long i = 0; i < r; ++i) m.eigenvalues(i) = read_complex(in);
    expect_token(in, "modes");
    m.modes.resize(n, r);
    for (long long row = 0; row < n; ++row)
        for (long long i = 0; i < r; ++i) m.modes(row, i) = read_complex(in);
    expect_token(in, "amplitudes");
    m.amplitudes.resize(r);
    for (long long i = 0; i < r; ++i) m.amplitudes(i) = read_complex(in);
    expect_token(in, "end");
    m.modes_pinv = pseudo_inverse(m.modes);
    return m;
}

}  // namespace koopflow
