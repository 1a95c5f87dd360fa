#pragma once

// Independent reference computations for the unit and acceptance tests.
// Nothing here calls into the library code under test except to read
// parameters and evaluate a scalar objective.

#include "koopflow/nncore.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using koopflow::Matrix;
using koopflow::Parameter;
using koopflow::ParameterList;
using koopflow::Vector;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
    return m;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Central differences of `f` w.r.t. every parameter entry, compared with the
// analytic gradients already stored in Parameter::grad. Returns the norm-wise
// relative error ||g - fd|| / ||fd|| over all entries.
inline double gradient_error(const ParameterList& params, const std::function<double()>& f, double h = 1e-6) {
    double diff2 = 0.0, ref2 = 0.0;
    for (Parameter* p : params) {
        const Matrix analytic = p->grad;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double v = p->value(i);
            p->value(i) = v + h;
            const double up = f();
            p->value(i) = v - h;
            const double down = f();
            p->value(i) = v;
            const double fd = (up - down) / (2.0 * h);
            diff2 += (fd - analytic(i)) * (fd - analytic(i));
            ref2 += fd * fd;
        }
    }
    return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-300);
}

// Plain matrix power by repeated multiplication.
inline Matrix matrix_power(const Matrix& a, int k) {
    Matrix out = Matrix::Identity(a.rows(), a.cols());
    for (int i = 0; i < k; ++i) out = out * a;
    return out;
}

using Spectrum = std::vector<std::complex<double>>;

inline Spectrum sorted(Spectrum s) {
    std::sort(s.begin(), s.end(), [](auto a, auto b) {
        const double ma = std::abs(a), mb = std::abs(b);
        if (std::abs(ma - mb) > 1e-9) return ma > mb;
        return std::arg(a) < std::arg(b);
    });
    return s;
}

inline Spectrum eigenvalues(const Matrix& a) {
    Eigen::EigenSolver<Matrix> es(a);
    Spectrum s;
    for (Eigen::Index i = 0; i < a.rows(); ++i) s.push_back(es.eigenvalues()(i));
    return sorted(s);
}

inline double spectrum_distance(const Spectrum& a, const Spectrum& b) {
    if (a.size() != b.size()) return 1e300;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Diagonalizable real matrix with the given real eigenvalues and complex
// pairs rho e^{+-i theta}, in a random basis.
inline Matrix random_diagonalizable(const std::vector<double>& reals,
                                    const std::vector<std::pair<double, double>>& pairs, std::mt19937_64& rng) {
    const Eigen::Index n = static_cast<Eigen::Index>(reals.size() + 2 * pairs.size());
    Matrix d = Matrix::Zero(n, n);
    Eigen::Index k = 0;
    for (double r : reals) d(k, k) = r, ++k;
    for (auto [rho, theta] : pairs) {
        d(k, k) = rho * std::cos(theta);
        d(k, k + 1) = -rho * std::sin(theta);
        d(k + 1, k) = rho * std::sin(theta);
        d(k + 1, k + 1) = rho * std::cos(theta);
        k += 2;
    }
    Matrix p;
    do {
        p = random_matrix(n, n, rng);
    } while (p.fullPivLu().rcond() < 1e-2);
    return p * d * p.inverse();
}

}  // namespace oracle
