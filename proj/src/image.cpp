#include "ostr/image.hpp"

#include "ostr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace ostr {

float quantize8(float v)
{
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<float>(static_cast<int>(std::lround(c * 255.0f))) / 255.0f;
}

void quantize8(Image& img)
{
    for (auto& p : img.pixels) p = quantize8(p);
}

namespace {

std::string next_token(std::istream& in)
{
    std::string tok;
    while (in) {
        const int c = in.peek();
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        break;
    }
    in >> tok;
    return tok;
}

} // namespace

Image read_pgm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open image " + path.string());
    if (next_token(in) != "P5") throw LoadError(path.string() + ": not a binary PGM (P5)");
    std::size_t w = 0, h = 0;
    int maxval = 0;
    try {
        w = std::stoul(next_token(in));
        h = std::stoul(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw LoadError(path.string() + ": malformed PGM header");
    }
    if (maxval != 255) throw LoadError(path.string() + ": only 8-bit PGM is supported");
    in.get();
    Image img(h, w);
    std::vector<unsigned char> raw(w * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw LoadError(path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

void write_pgm(const Image& img, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace ostr
