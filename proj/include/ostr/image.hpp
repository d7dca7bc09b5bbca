#pragma once

#include <filesystem>
#include <vector>

namespace ostr {

/// Single-channel image, row-major, intensities in [0,1] (ink is high).
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

    float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }

    bool operator==(const Image&) const = default;
};

/// Quantize to the 8-bit grid used by PGM files (v -> round(v*255)/255).
float quantize8(float v);
void quantize8(Image& img);

/// Binary PGM (P5), maxval 255, mapped to [0,1] by /255.
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const Image& img, const std::filesystem::path& path);

} // namespace ostr
