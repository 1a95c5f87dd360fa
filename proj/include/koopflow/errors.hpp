#pragma once

#include <stdexcept>
#include <string>

namespace koopflow {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or other floating point breakdown. `layer` is the index
/// of the coupling layer that produced it, or -1 when not layer-specific.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what, int layer = -1)
        : Error(what), layer_(layer) {}
    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

class SingularScaleError : public NumericError {
public:
    using NumericError::NumericError;
};

class RankDeficiencyError : public NumericError {
public:
    RankDeficiencyError(const std::string& what, double ratio)
        : NumericError(what), ratio_(ratio) {}
    /// sigma_r / sigma_1 of the offending snapshot matrix.
    double ratio() const noexcept { return ratio_; }

private:
    double ratio_;
};

class SolverError : public NumericError {
public:
    SolverError(const std::string& what, int step) : NumericError(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

class TrainingDivergenceError : public NumericError {
public:
    TrainingDivergenceError(const std::string& what, int epoch)
        : NumericError(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Relative metric requested against a zero-norm reference state.
class UndefinedReferenceError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace koopflow
