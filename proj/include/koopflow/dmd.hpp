#pragma once

// Dynamic mode decomposition on an observable space.
//
// Snapshot matrices hold one observable vector per column: X = [g0 .. g_{p-1}],
// Y = [g1 .. g_p]. Complex arithmetic stays inside this module; predictions
// leave it as real vectors.

#include "koopflow/nncore.hpp"

#include <complex>
#include <functional>
#include <iosfwd>
#include <vector>

namespace koopflow {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// Relative cutoff for the rank check and for the pseudo-inverse of the modes.
inline constexpr double kRankTolerance = 1e-12;
/// Relative imaginary residual above which a prediction is flagged.
inline constexpr double kImagTolerance = 1e-8;
/// Eigenvector-matrix condition number above which the reduced operator is
/// treated as near-defective.
inline constexpr double kDefectiveCondition = 1e8;

struct Prediction {
    Vector value;            // real part
    double imag_norm = 0.0;  // ||Im||
    bool consistent = true;  // ||Im|| <= kImagTolerance * ||Re||
};

struct DmdModel {
    ComplexMatrix modes;        // Phi [n x r]
    ComplexVector eigenvalues;  // Lambda [r]
    ComplexVector amplitudes;   // b = Phi^+ g0 [r]
    ComplexMatrix modes_pinv;   // Phi^+ [r x n]
    Vector singular_values;     // retained sigma_1..sigma_r
    double eigvec_condition = 1.0;
    bool near_defective = false;

    int rank() const { return static_cast<int>(eigenvalues.size()); }
    int dim() const { return static_cast<int>(modes.rows()); }

    /// Phi Lambda^k b.
    ComplexVector predict_complex(int k) const;
    /// Re(Phi Lambda^k b) with the imaginary residual check.
    Prediction predict_checked(int k) const;
    Vector predict(int k) const;
    /// Rows 0..steps of Re(Phi Lambda^k b).
    Matrix predict_rows(int steps) const;
    /// Re(Phi Lambda^k Phi^+): maps g0 to the k-step prediction.
    Matrix propagator(int k) const;
};

/// Exact DMD of rank r. Throws RankDeficiencyError when
/// sigma_r <= kRankTolerance * sigma_1.
DmdModel fit_dmd(const Matrix& x, const Matrix& y, int rank);
/// Same, from a trajectory stored row-wise ([T+1 x n]).
DmdModel fit_dmd_rows(const Matrix& snapshots, int rank);

/// Sorts eigen-pairs by descending modulus, then ascending argument.
std::vector<int> spectral_order(const ComplexVector& eigenvalues);

struct EigenPairs {
    ComplexVector values;
    ComplexMatrix vectors;
};

/// Eigen-decomposition of the explicitly formed K = Y X^+. Independent of
/// fit_dmd; used as a cross-check.
EigenPairs dense_dmd_oracle(const Matrix& x, const Matrix& y);

using InverseMap = std::function<Vector(const Vector&)>;

/// f(Re(Phi Lambda^k b)).
Vector reconstruct_state(const DmdModel& model, const InverseMap& inverse_map, int k);

/// Text export: rank, sigma and (Re, Im) of Lambda, Phi, b with 17 digits.
void export_dmd(const DmdModel& model, std::ostream& out);
DmdModel import_dmd(std::istream& in);

}  // namespace koopflow
