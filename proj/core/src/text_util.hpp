#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ensemble::detail {

inline std::string_view trim(std::string_view s)
{
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::vector<std::string_view> split_lines(std::string_view s)
{
    auto lines = split(s, '\n');
    if (!lines.empty() && lines.back().empty())
        lines.pop_back();
    return lines;
}

/// Drops a trailing '#' comment and surrounding whitespace.
inline std::string_view strip_comment(std::string_view line)
{
    const auto hash = line.find('#');
    if (hash != std::string_view::npos)
        line = line.substr(0, hash);
    return trim(line);
}

template <typename Int>
Int parse_integer(std::string_view s)
{
    s = trim(s);
    if (!s.empty() && s.front() == '+')
        s.remove_prefix(1);
    Int value{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
    return value;
}

inline int parse_int(std::string_view s) { return parse_integer<int>(s); }
inline std::int64_t parse_int64(std::string_view s) { return parse_integer<std::int64_t>(s); }
inline std::uint64_t parse_uint64(std::string_view s) { return parse_integer<std::uint64_t>(s); }

inline double parse_double(std::string_view s)
{
    s = trim(s);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

} // namespace ensemble::detail
