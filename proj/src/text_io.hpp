#pragma once

// Line-oriented reader/writer helpers shared by the QISC1, QIMP1 and FCEM1
// formats. Internal to the library.

#include <charconv>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "stegattn/errors.hpp"

namespace stegattn::detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    /// Reads the next line; throws FormatError at end of input.
    std::string_view next(std::string_view expecting) {
        line_offset_ = offset_;
        if (!std::getline(in_, buf_)) {
            throw FormatError(line_ + 1, offset_, "unexpected end of input, expected " + std::string(expecting));
        }
        ++line_;
        offset_ += buf_.size() + 1;
        if (!buf_.empty() && buf_.back() == '\r') buf_.pop_back();
        return buf_;
    }

    bool at_end() {
        return in_.peek() == std::char_traits<char>::eof();
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(line_, line_offset_, what);
    }

    std::size_t line() const { return line_; }
    std::size_t line_offset() const { return line_offset_; }
    std::size_t offset() const { return offset_; }

    std::vector<std::string_view> tokens(std::string_view expecting) {
        std::string_view s = next(expecting);
        std::vector<std::string_view> out;
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
            std::size_t j = i;
            while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
            if (j > i) out.push_back(s.substr(i, j - i));
            i = j;
        }
        return out;
    }

    /// Reads "key v1 v2 ..." and returns the values; fails unless the key
    /// matches and exactly `count` values follow.
    std::vector<std::string_view> keyed(std::string_view key, std::size_t count) {
        auto tok = tokens(key);
        if (tok.empty() || tok[0] != key) fail("expected '" + std::string(key) + "'");
        if (tok.size() != count + 1) {
            fail("expected " + std::to_string(count) + " value(s) after '" + std::string(key) + "'");
        }
        tok.erase(tok.begin());
        return tok;
    }

    template <typename T>
    T number(std::string_view tok) const {
        T value{};
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
        if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
            fail("malformed number '" + std::string(tok) + "'");
        }
        return value;
    }

private:
    std::istream& in_;
    std::string buf_;
    std::size_t line_ = 0;
    std::size_t offset_ = 0;
    std::size_t line_offset_ = 0;
};

}  // namespace stegattn::detail
