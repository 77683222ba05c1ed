#pragma once

#include <stdexcept>
#include <string>

namespace islanding {

/// Raised when an operation's preconditions on its arguments are violated.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The harmonic estimator left its numerically valid region.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative solver failed to meet its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double final_mismatch, int iterations)
        : std::runtime_error(what), final_mismatch_(final_mismatch), iterations_(iterations) {}

    double final_mismatch() const noexcept { return final_mismatch_; }
    int iterations() const noexcept { return iterations_; }

private:
    double final_mismatch_;
    int iterations_;
};

/// Malformed scenario / network / waveform input. Carries source and line when known.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& message)
        : std::runtime_error(format(source, line, message)), source_(source), line_(line) {}

    explicit ConfigError(const std::string& message) : std::runtime_error(message), line_(0) {}

    const std::string& source() const noexcept { return source_; }
    int line() const noexcept { return line_; }

private:
    static std::string format(const std::string& source, int line, const std::string& message) {
        std::string out = source.empty() ? std::string("<input>") : source;
        if (line > 0) out += ":" + std::to_string(line);
        return out + ": " + message;
    }

    std::string source_;
    int line_;
};

/// Sample stream with a missing or out-of-order timestamp.
class StreamGapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace islanding
