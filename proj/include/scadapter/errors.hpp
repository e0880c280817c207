#pragma once

#include <stdexcept>
#include <string>

namespace scadapter {

// Error categories map one-to-one onto CLI exit codes (see tools/scadapter.cpp).
enum class ErrorKind {
    input = 2,
    config = 3,
    data = 4,
    training = 5,
    sampling = 6,
    metric = 7,
    io = 8,
    format = 9,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

struct InputError : Error {
    explicit InputError(const std::string& w) : Error(ErrorKind::input, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct TrainingError : Error {
    TrainingError(const std::string& w, long step)
        : Error(ErrorKind::training, w + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};
struct SamplingError : Error {
    SamplingError(const std::string& w, long step)
        : Error(ErrorKind::sampling, w + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};
struct MetricError : Error {
    explicit MetricError(const std::string& w) : Error(ErrorKind::metric, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(ErrorKind::format, w) {}
};

}  // namespace scadapter
