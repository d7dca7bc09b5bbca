#include "ostr/text.hpp"

#include "ostr/errors.hpp"
#include "ostr/rng.hpp"

#include <sstream>

namespace ostr {

std::string to_utf8(CharId c)
{
    if (c == kUnk) return "[-]";
    if (c == kEos) return "[s]";
    std::string out;
    const auto u = static_cast<std::uint32_t>(c);
    if (u < 0x80) {
        out += static_cast<char>(u);
    } else if (u < 0x800) {
        out += static_cast<char>(0xC0 | (u >> 6));
        out += static_cast<char>(0x80 | (u & 0x3F));
    } else if (u < 0x10000) {
        out += static_cast<char>(0xE0 | (u >> 12));
        out += static_cast<char>(0x80 | ((u >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (u & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (u >> 18));
        out += static_cast<char>(0x80 | ((u >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((u >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (u & 0x3F));
    }
    return out;
}

std::string to_utf8(const Label& label)
{
    std::string out;
    for (auto c : label) out += to_utf8(c);
    return out;
}

Label from_utf8(std::string_view s)
{
    Label out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s.substr(i, 3) == "[-]") {
            out += kUnk;
            i += 3;
            continue;
        }
        if (s.substr(i, 3) == "[s]") {
            out += kEos;
            i += 3;
            continue;
        }
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            throw LoadError("invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + len > s.size()) throw LoadError("truncated UTF-8 sequence at offset " + std::to_string(i));
        for (std::size_t k = 1; k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0) != 0x80) throw LoadError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
            cp = (cp << 6) | (b & 0x3F);
        }
        if (cp > 0x10FFFF) throw LoadError("code point out of range at offset " + std::to_string(i));
        out += static_cast<CharId>(cp);
        i += len;
    }
    return out;
}

std::vector<std::string> split(std::string_view s, char sep)
{
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string Rng::serialize() const
{
    std::ostringstream os;
    os << state_[0] << ' ' << state_[1] << ' ' << state_[2] << ' ' << state_[3] << ' ' << (has_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << std::hexfloat << spare_;
    return os.str();
}

Rng Rng::deserialize(const std::string& text)
{
    std::istringstream is(text);
    Rng r;
    int spare = 0;
    std::string spare_text;
    is >> r.state_[0] >> r.state_[1] >> r.state_[2] >> r.state_[3] >> spare >> spare_text;
    if (!is && !is.eof()) throw LoadError("malformed rng state");
    r.has_spare_ = spare != 0;
    r.spare_ = std::strtod(spare_text.c_str(), nullptr);
    return r;
}

} // namespace ostr
