#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ostr {

// Character identifiers are Unicode code points. The two special tokens live
// just past the Unicode range so they can never collide with a real glyph.
using CharId = char32_t;
using Label = std::u32string;

inline constexpr CharId kEos = 0x110000;
inline constexpr CharId kUnk = 0x110001;

inline bool is_special(CharId c) { return c == kEos || c == kUnk; }

std::string to_utf8(CharId c);
/// UNK renders as "[-]", EOS as "[s]".
std::string to_utf8(const Label& label);
/// Throws LoadError on malformed input. "[-]" and "[s]" are recognized as tokens.
Label from_utf8(std::string_view text);

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

} // namespace ostr
