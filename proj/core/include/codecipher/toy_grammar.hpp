#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace codecipher {

/// Verdict of the toy Python-subset parser.
///
/// Accepted: function definitions, assignments (incl. augmented), if/elif/else,
/// while, for-in, return, pass/break/continue, calls, subscripts, attribute
/// access, list displays, arithmetic/comparison/boolean expressions, string and
/// number literals, comments. Blocks are indentation-delimited or a single
/// simple statement after the colon.
struct ParseResult {
  bool ok = true;
  std::size_t error_offset = 0;  // byte offset of the offending token
  std::string message;
};

ParseResult parse_program(std::string_view source);

}  // namespace codecipher
