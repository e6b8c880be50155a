#include "nuner/corpus/text.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace nuner::corpus {

namespace {

struct Decoded {
  char32_t cp;
  std::size_t length;
};

constexpr char32_t kReplacement = 0xFFFD;

Decoded decode_at(std::string_view text, std::size_t pos) {
  const auto b0 = static_cast<unsigned char>(text[pos]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {kReplacement, 1};
  }
  if (pos + len > text.size()) return {kReplacement, 1};
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(text[pos + i]);
    if ((b & 0xC0) != 0x80) return {kReplacement, 1};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len};
}

// Non-alphanumeric ranges outside ASCII: punctuation, symbols, arrows,
// box drawing, CJK punctuation, fullwidth punctuation, emoji.
constexpr std::array<std::pair<char32_t, char32_t>, 20> kSymbolRanges{{
    {0x00A1, 0x00A9}, {0x00AB, 0x00B1}, {0x00B4, 0x00B4}, {0x00B6, 0x00B8},
    {0x00BB, 0x00BF}, {0x00D7, 0x00D7}, {0x00F7, 0x00F7}, {0x2010, 0x205E},
    {0x20A0, 0x20CF}, {0x2190, 0x23FF}, {0x2500, 0x27BF}, {0x2900, 0x2BFF},
    {0x2E00, 0x2E7F}, {0x3000, 0x303F}, {0xFE10, 0xFE1F}, {0xFE30, 0xFE6F},
    {0xFF01, 0xFF0F}, {0xFF1A, 0xFF20}, {0xFF3B, 0xFF40}, {0x1F000, 0x1FAFF},
}};

}  // namespace

bool is_unicode_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 ||
         cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) ||
         cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') ||
           (cp >= 'A' && cp <= 'Z');
  }
  if (is_unicode_space(cp) || cp == kReplacement) return false;
  if (cp >= 0x80 && cp < 0xA0) return false;  // C1 controls
  for (const auto& [lo, hi] : kSymbolRanges) {
    if (cp >= lo && cp <= hi) return false;
  }
  return true;
}

std::vector<std::size_t> code_point_offsets(std::string_view text) {
  std::vector<std::size_t> offsets;
  offsets.reserve(text.size() + 1);
  std::size_t pos = 0;
  while (pos < text.size()) {
    offsets.push_back(pos);
    pos += decode_at(text, pos).length;
  }
  offsets.push_back(text.size());
  return offsets;
}

std::size_t code_point_count(std::string_view text) {
  return code_point_offsets(text).size() - 1;
}

std::string slice_chars(std::string_view text, std::size_t start,
                        std::size_t end) {
  const auto offsets = code_point_offsets(text);
  const std::size_t n = offsets.size() - 1;
  start = std::min(start, n);
  end = std::clamp(end, start, n);
  return std::string(text.substr(offsets[start], offsets[end] - offsets[start]));
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  auto space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  };
  while (b < e && space(s[b])) ++b;
  while (e > b && space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t pos = 0;
  std::size_t index = 0;
  std::size_t run_start_byte = 0, run_start_char = 0;
  bool in_run = false;
  auto close_run = [&](std::size_t end_byte, std::size_t end_char) {
    if (!in_run) return;
    tokens.push_back({std::string(text.substr(run_start_byte, end_byte - run_start_byte)),
                      run_start_char, end_char});
    in_run = false;
  };
  while (pos < text.size()) {
    const Decoded d = decode_at(text, pos);
    if (is_word_char(d.cp)) {
      if (!in_run) {
        in_run = true;
        run_start_byte = pos;
        run_start_char = index;
      }
    } else {
      close_run(pos, index);
      if (!is_unicode_space(d.cp)) {
        tokens.push_back({std::string(text.substr(pos, d.length)), index, index + 1});
      }
    }
    pos += d.length;
    ++index;
  }
  close_run(pos, index);
  return tokens;
}

}  // namespace nuner::corpus
