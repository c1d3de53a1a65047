#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vulnmt {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed corpus record; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IntegrityError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unterminated literal or comment; carries the byte offset where it started.
class LexError : public Error {
public:
    LexError(std::size_t offset, const std::string& what)
        : Error("byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class StructureError : public Error {
public:
    using Error::Error;
};

class EmptyFunction : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class EmptyCorpus : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    NumericalError(long step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

class VersionError : public Error {
public:
    using Error::Error;
};

class CorruptCheckpoint : public Error {
public:
    using Error::Error;
};

class MissingLabel : public Error {
public:
    using Error::Error;
};

class DegenerateLabels : public Error {
public:
    using Error::Error;
};

}  // namespace vulnmt
