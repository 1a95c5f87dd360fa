#include "koopflow/metrics.hpp"

#include "koopflow/errors.hpp"
#include "koopflow/textio.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

namespace koopflow {

namespace {

void check_lengths(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw ShapeError("metric: lengths differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}

}  // namespace

double rl2e(const Vector& xhat, const Vector& x) {
    check_lengths(xhat, x);
    const double ref = x.norm();
    if (ref == 0.0) throw UndefinedReferenceError("rl2e: reference state has zero norm");
    return (xhat - x).norm() / ref;
}

double mse(const Vector& xhat, const Vector& x) {
    check_lengths(xhat, x);
    if (x.size() == 0) throw ShapeError("mse: empty state");
    return (xhat - x).squaredNorm() / static_cast<double>(x.size());
}

double trl2e(const Matrix& xhat, const Matrix& x) {
    if (xhat.rows() != x.rows() || xhat.cols() != x.cols()) throw ShapeError("trl2e: trajectory shapes differ");
    if (x.rows() < 2) throw ShapeError("trl2e: trajectory needs at least one step after t = 0");
    const Eigen::Index steps = x.rows() - 1;
    const double num = (xhat.bottomRows(steps) - x.bottomRows(steps)).squaredNorm();
    const double den = x.bottomRows(steps).squaredNorm();
    if (den == 0.0) throw UndefinedReferenceError("trl2e: reference trajectory has zero norm");
    return std::sqrt(num / den);
}

ErrorReport make_error_report(const Matrix& xhat, const Matrix& x, int sample_id, std::string method) {
    ErrorReport rep;
    rep.sample_id = sample_id;
    rep.method = std::move(method);
    rep.trl2e = trl2e(xhat, x);
    for (Eigen::Index t = 1; t < x.rows(); ++t) {
        const Vector xt = x.row(t).transpose();
        const Vector ht = xhat.row(t).transpose();
        // relative error is undefined at exactly-zero states; report NaN for that step only
        rep.rl2e.push_back(xt.norm() > 0.0 ? rl2e(ht, xt) : std::nan(""));
        rep.mse.push_back(mse(ht, xt));
    }
    return rep;
}

void write_report_csv(std::ostream& out, const std::vector<ErrorReport>& reports) {
    out << "sample_id,method,t,rl2e,mse\n";
    for (const auto& r : reports)
        for (std::size_t i = 0; i < r.rl2e.size(); ++i)
            out << r.sample_id << ',' << textio::csv_field(r.method) << ',' << (i + 1) << ','
                << textio::format_double(r.rl2e[i]) << ',' << textio::format_double(r.mse[i]) << '\n';
}

void write_summary_csv(std::ostream& out, const std::vector<ErrorReport>& reports) {
    out << "sample_id,method,trl2e\n";
    for (const auto& r : reports)
        out << r.sample_id << ',' << textio::csv_field(r.method) << ',' << textio::format_double(r.trl2e) << '\n';
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double mu = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace koopflow
