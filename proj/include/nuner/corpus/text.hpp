#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "nuner/corpus/types.hpp"

namespace nuner::corpus {

/// Byte offset of every code point in `text`, followed by text.size().
/// Invalid UTF-8 bytes count as one code point each.
std::vector<std::size_t> code_point_offsets(std::string_view text);

std::size_t code_point_count(std::string_view text);

/// Substring by code-point range [start, end).
std::string slice_chars(std::string_view text, std::size_t start, std::size_t end);

std::string trim(std::string_view s);

/// Maximal runs of alphanumeric characters form one token; every other
/// non-whitespace character is a token of its own.
std::vector<Token> tokenize(std::string_view text);

bool is_unicode_space(char32_t cp);
bool is_word_char(char32_t cp);

}  // namespace nuner::corpus
