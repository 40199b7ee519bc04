#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace unitslab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are not conformable for an operation.
class ShapeError : public Error {
public:
    ShapeError(const std::string& op, const std::string& detail)
        : Error(op + ": shape mismatch: " + detail), op_(op) {}

    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

/// A value outside the domain an operation accepts (NaN, out-of-range argument).
class ValueError : public Error {
public:
    using Error::Error;
};

/// Misuse of the gradient tape: backward on a non-scalar or detached loss, stale node.
class TapeError : public Error {
public:
    using Error::Error;
};

/// Malformed binary or text file. Carries the byte offset where parsing stopped.
class FormatError : public Error {
public:
    FormatError(const std::string& path, std::uint64_t offset, const std::string& what)
        : Error(path + ": " + what + " (at byte " + std::to_string(offset) + ")"),
          path_(path), offset_(offset), reason_(what) {}

    const std::string& path() const noexcept { return path_; }
    std::uint64_t offset() const noexcept { return offset_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string path_;
    std::uint64_t offset_;
    std::string reason_;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what)
        : Error(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Invalid experiment or module configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace unitslab
