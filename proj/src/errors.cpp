#include "stegattn/errors.hpp"

namespace stegattn {

IndexOutOfRange::IndexOutOfRange(std::size_t frame, std::size_t position, std::int64_t value)
    : Error("index out of range at frame " + std::to_string(frame) + ", position " +
            std::to_string(position) + ": " + std::to_string(value)),
      frame(frame),
      position(position),
      value(value) {}

StreamTooShort::StreamTooShort(std::size_t frames, std::size_t window)
    : Error("stream of " + std::to_string(frames) + " frames is shorter than the " +
            std::to_string(window) + "-frame window") {}

FormatError::FormatError(std::size_t line, std::size_t offset, const std::string& what)
    : Error("format error at line " + std::to_string(line) + " (offset " + std::to_string(offset) +
            "): " + what),
      line(line),
      offset(offset) {}

BitExhaustion::BitExhaustion(std::size_t needed, std::size_t available)
    : Error("bit stream exhausted: need " + std::to_string(needed) + " bits, have " +
            std::to_string(available)) {}

}  // namespace stegattn
