#pragma once

// Helpers for the line-oriented text formats used by checkpoints, datasets
// and model exports.

#include "koopflow/nncore.hpp"

#include <istream>
#include <ostream>
#include <string>

namespace koopflow::textio {

/// Shortest representation that parses back to the same double.
std::string format_double(double v);
/// Fixed 17 significant digits.
std::string format_double17(double v);
double parse_double(const std::string& token);
long long parse_int(const std::string& token);

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols);

/// Reads the next whitespace token; throws IoError naming `what` on EOF.
std::string next_token(std::istream& in, const std::string& what);
/// Reads a token and checks it equals `expected`.
void expect_token(std::istream& in, const std::string& expected);

/// RFC-4180 quoting: wraps in quotes when the field has a comma, quote or newline.
std::string csv_field(const std::string& s);

}  // namespace koopflow::textio
