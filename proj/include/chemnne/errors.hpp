#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chemnne {

/// Shape or axis disagreement between tensors / layers.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A call violated an API precondition (non-scalar backward, bad roll offset, ...).
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value or combination.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Text input rejected; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Binary file rejected; carries the byte offset of the problem.
class FormatError : public std::runtime_error {
public:
    FormatError(std::size_t offset, const std::string& msg)
        : std::runtime_error("byte " + std::to_string(offset) + ": " + msg), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Stiff integrator gave up on a sample.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(long sample_id, const std::string& msg)
        : std::runtime_error("sample " + std::to_string(sample_id) + ": " + msg),
          sample_id_(sample_id) {}
    long sample_id() const { return sample_id_; }

private:
    long sample_id_;
};

/// File missing/unreadable/unwritable.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace chemnne
