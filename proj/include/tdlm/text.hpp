#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tdlm::text {

/// Byte offset of the first malformed UTF-8 sequence, if any.
std::optional<std::size_t> find_invalid_utf8(std::string_view bytes);

/// Decodes UTF-8; malformed bytes decode to U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view bytes);
std::string encode_utf8(char32_t cp);
std::string encode_utf8(const std::vector<char32_t>& cps);

bool is_space(char32_t cp);
char32_t to_lower(char32_t cp);
std::string to_lower(std::string_view s);

/// Splits on Unicode whitespace, dropping empty pieces.
std::vector<std::string> split_whitespace(std::string_view s);

/// Replaces CRLF and lone CR with LF.
std::string normalize_newlines(std::string_view s);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);

} // namespace tdlm::text
