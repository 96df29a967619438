#ifndef FH_ERROR_HPP
#define FH_ERROR_HPP

#include <stdexcept>
#include <string>

namespace fh
{
/// Failure categories. Each maps onto one CLI exit code.
enum class ErrorKind
{
    InvalidInput,     // dimension or token mismatch
    InvalidParameter, // out-of-domain scalar argument
    Numeric,          // non-finite values
    Parse,            // malformed text input
    Contract,         // caller precondition (e.g. no free positions)
    Guard,            // enumeration/sweep budget refused
    Integrity,        // corrupt or tampered artifact
    ChainBuild,       // threshold not reached during parameter descent
    Config            // bad experiment configuration
};

inline const char* to_string(ErrorKind k)
{
    switch (k)
    {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidParameter: return "invalid-parameter";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Guard: return "guard";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::ChainBuild: return "chain-build";
    case ErrorKind::Config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Parse failure carrying the 1-based line number of the offending input.
class ParseError : public Error
{
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what), line_(line)
    {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what)
{
    if (!cond)
        fail(kind, what);
}
} // namespace fh

#endif // FH_ERROR_HPP
