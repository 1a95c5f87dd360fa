#pragma once

// Reconstruction error metrics. Trajectories are stored row-wise
// ([T+1 x m]); every metric skips the initial row t = 0.

#include "koopflow/nncore.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace koopflow {

/// ||xhat - x|| / ||x||. Throws UndefinedReferenceError when ||x|| = 0.
double rl2e(const Vector& xhat, const Vector& x);
/// ||xhat - x||^2 / m.
double mse(const Vector& xhat, const Vector& x);
/// sqrt(sum_t ||xhat_t - x_t||^2 / sum_t ||x_t||^2) over t = 1..T.
double trl2e(const Matrix& xhat, const Matrix& x);

struct ErrorReport {
    int sample_id = 0;
    std::string method;
    std::vector<double> rl2e;  // index 0 is t = 1
    std::vector<double> mse;
    double trl2e = 0.0;
};

ErrorReport make_error_report(const Matrix& xhat, const Matrix& x, int sample_id, std::string method);

/// sample_id,method,t,rl2e,mse
void write_report_csv(std::ostream& out, const std::vector<ErrorReport>& reports);
/// sample_id,method,trl2e
void write_summary_csv(std::ostream& out, const std::vector<ErrorReport>& reports);

double mean(const std::vector<double>& v);
/// Population standard deviation.
double stddev(const std::vector<double>& v);

}  // namespace koopflow
