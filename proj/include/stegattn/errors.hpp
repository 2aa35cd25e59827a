#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace stegattn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IndexOutOfRange : public Error {
public:
    IndexOutOfRange(std::size_t frame, std::size_t position, std::int64_t value);

    std::size_t frame;
    std::size_t position;
    std::int64_t value;
};

class EmptySample : public Error {
public:
    EmptySample() : Error("sample has zero frames") {}
};

class StreamTooShort : public Error {
public:
    StreamTooShort(std::size_t frames, std::size_t window);
};

/// Parse failure in one of the text formats. `line` is 1-based (0 when the
/// failure is not tied to a line), `offset` is the byte offset in the input.
class FormatError : public Error {
public:
    FormatError(std::size_t line, std::size_t offset, const std::string& what);

    std::size_t line;
    std::size_t offset;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class BitExhaustion : public Error {
public:
    BitExhaustion(std::size_t needed, std::size_t available);
};

class NonFiniteActivation : public Error {
public:
    using Error::Error;
};

class NonFiniteGradient : public Error {
public:
    using Error::Error;
};

class NonFiniteUpdate : public Error {
public:
    using Error::Error;
};

class DivergenceDetected : public Error {
public:
    using Error::Error;
};

}  // namespace stegattn
