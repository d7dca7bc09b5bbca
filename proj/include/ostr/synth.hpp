#pragma once

#include "ostr/atlas.hpp"
#include "ostr/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ostr {

/// Distortion amplitudes. Each line draws its actual values uniformly within
/// +/- the amplitude (noise is a Gaussian sigma).
struct Distortion {
    double noise_sigma = 0.0;
    double slant = 0.0;        ///< horizontal shear per row, fraction of a pixel
    double curvature = 0.0;    ///< vertical baseline bend at the line ends, in pixels
    double scale_jitter = 0.0; ///< per-glyph horizontal scale in [1-j, 1+j]
};

struct SyntheticSample {
    Image image; ///< height 32
    Label label; ///< real characters only
};

inline constexpr std::size_t kMaxLineWidth = 256;

/// Composites atlas glyphs left to right onto a 32-pixel-high canvas.
/// Characters with several templates pick one per occurrence.
SyntheticSample synthesize_line(const TemplateAtlas& atlas, const Label& label, const Distortion& distortion,
                                std::uint64_t seed, std::size_t l_max = 10, std::size_t max_width = kMaxLineWidth);

/// Uniform random label over charset with length in [min_len, max_len].
Label random_label(Rng& rng, const std::vector<CharId>& charset, std::size_t min_len, std::size_t max_len);

struct DatasetEntry {
    std::string name;
    Image image;
    Label label;
};

/// `labels.tsv` (`<image-filename> TAB <utf8-label>`) plus binary PGM images.
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const std::vector<DatasetEntry>& entries);

struct SynthSpec {
    std::vector<CharId> charset;
    std::size_t count = 0;
    std::size_t min_len = 1;
    std::size_t max_len = 5;
    Distortion distortion;
    std::size_t l_max = 10;
    std::size_t max_width = kMaxLineWidth;
};

/// Deterministic per seed: sample i uses stream derive_seed(seed, i).
std::vector<DatasetEntry> synthesize_dataset(const TemplateAtlas& atlas, const SynthSpec& spec, std::uint64_t seed);

} // namespace ostr
