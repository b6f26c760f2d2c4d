#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ensemble {

/// Grid size does not divide a bar.
class InvalidGrid : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Probability vector with no positive mass.
class DegenerateDistribution : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad configuration value (performer count, latency model, sim config).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Text input (progression, sequence, model, plan files) failed to parse.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what)
        , line_(line)
    {
    }

    int line() const noexcept { return line_; }

private:
    int line_;
};

/// A wire frame could not be decoded. tag() is the message type if one was readable.
class DecodeError : public std::runtime_error {
public:
    DecodeError(std::string tag, const std::string& what)
        : std::runtime_error("decode " + (tag.empty() ? std::string("<untagged>") : tag) + ": " + what)
        , tag_(std::move(tag))
    {
    }

    const std::string& tag() const noexcept { return tag_; }

private:
    std::string tag_;
};

class InsufficientSamples : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ensemble
