#include "koopflow/textio.hpp"

#include "koopflow/errors.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <system_error>

namespace koopflow::textio {

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc()) throw IoError("cannot format number");
    return std::string(buf.data(), ptr);
}

std::string format_double17(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::scientific, 16);
    if (ec != std::errc()) throw IoError("cannot format number");
    return std::string(buf.data(), ptr);
}

double parse_double(const std::string& token) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (!token.empty() && token[0] == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        // from_chars does not accept "inf"/"nan" spelled by some writers
        if (token == "inf") return HUGE_VAL;
        if (token == "-inf") return -HUGE_VAL;
        throw IoError("expected a number, got '" + token + "'");
    }
    return v;
}

long long parse_int(const std::string& token) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
        throw IoError("expected an integer, got '" + token + "'");
    return v;
}

void write_matrix(std::ostream& out, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out << ' ';
            out << format_double(m(r, c));
        }
        out << '\n';
    }
}

Matrix read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = parse_double(next_token(in, "matrix entry"));
    return m;
}

std::string next_token(std::istream& in, const std::string& what) {
    std::string tok;
    if (!(in >> tok)) throw IoError("unexpected end of input while reading " + what);
    return tok;
}

void expect_token(std::istream& in, const std::string& expected) {
    const std::string tok = next_token(in, "'" + expected + "'");
    if (tok != expected) throw IoError("expected '" + expected + "', found '" + tok + "'");
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

}  // namespace koopflow::textio
