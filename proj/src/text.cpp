#include "relex/text.hpp"

#include <cctype>

namespace relex {

namespace {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_word_byte(unsigned char c) {
  // Non-ASCII bytes belong to multi-byte code points; treat them as word
  // characters so e.g. Greek letters stay inside tokens.
  return std::isalnum(c) != 0 || c >= 0x80;
}

}  // namespace

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::size_t utf8_byte_offset(std::string_view s, std::size_t cp) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
      if (seen == cp) return i;
      ++seen;
    }
  }
  return s.size();
}

bool marker_at(std::string_view text, std::size_t pos, std::string_view* which) {
  for (std::string_view m : {kSubjectMarker, kObjectMarker, kOverlapMarker}) {
    if (text.substr(pos, m.size()) == m) {
      if (which != nullptr) *which = m;
      return true;
    }
  }
  return false;
}

std::vector<TokenSpan> pre_split(std::string_view text) {
  std::vector<TokenSpan> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (is_ascii_space(c)) {
      ++i;
      continue;
    }
    std::string_view marker;
    if (marker_at(text, i, &marker)) {
      tokens.push_back({std::string(marker), i, i + marker.size(), true});
      i += marker.size();
      continue;
    }
    if (is_word_byte(c)) {
      std::size_t start = i;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i])) &&
             !marker_at(text, i)) {
        ++i;
      }
      tokens.push_back({std::string(text.substr(start, i - start)), start, i, false});
      continue;
    }
    tokens.push_back({std::string(text.substr(i, 1)), i, i + 1, false});
    ++i;
  }
  return tokens;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cols;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

}  // namespace relex
