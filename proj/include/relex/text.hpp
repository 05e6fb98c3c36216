#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace relex {

// Entity-pair marker strings. These are reserved tokens throughout the
// pipeline: the pre-splitter keeps them atomic and the subword vocabulary
// carries them as specials.
inline constexpr std::string_view kSubjectMarker = "@@";
inline constexpr std::string_view kObjectMarker = "$$";
inline constexpr std::string_view kOverlapMarker = "\xC2\xA2\xC2\xA2";  // "¢¢" (U+00A2 twice)

struct TokenSpan {
  std::string surface;
  std::size_t start = 0;  // byte offsets into the source text
  std::size_t end = 0;
  bool is_marker = false;
};

// Number of UTF-8 code points in s. Invalid continuation bytes count as
// one code point each.
std::size_t utf8_length(std::string_view s);

// Byte offset of the code point at index cp (clamped to s.size()).
std::size_t utf8_byte_offset(std::string_view s, std::size_t cp);

// True if one of the three marker strings starts at byte position pos.
// On match, *which receives the marker string.
bool marker_at(std::string_view text, std::size_t pos, std::string_view* which = nullptr);

// Whitespace/punctuation pre-splitter shared by sentence tokenization and
// the WordPiece front end. Rules: ASCII whitespace separates; marker
// strings are atomic tokens; runs of alphanumerics (ASCII) and non-ASCII
// code points form word tokens; any other character is a single token.
// A word run stops where a marker string begins.
std::vector<TokenSpan> pre_split(std::string_view text);

std::vector<std::string> split_tabs(const std::string& line);
std::string join(const std::vector<std::string>& parts, char sep);

}  // namespace relex
