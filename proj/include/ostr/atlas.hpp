#pragma once

#include "ostr/image.hpp"
#include "ostr/text.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ostr {

inline constexpr std::size_t kGlyphSize = 32;

/// Identity of one template: a (character, case, font) triple.
struct TemplateKey {
    CharId ch = 0;
    int case_id = 0;
    std::string font_id;

    auto operator<=>(const TemplateKey&) const = default;
    bool operator==(const TemplateKey&) const = default;
};

std::string describe(const TemplateKey& key);

struct GlyphTemplate {
    Image pixels; ///< kGlyphSize x kGlyphSize, values in [0,1]
    CharId owner = 0;
    int case_id = 0;
    std::string font_id = "default";

    TemplateKey key() const { return {owner, case_id, font_id}; }
};

/// Ordered glyph templates plus the template -> character map.
/// Immutable once built; edits produce a new atlas.
class TemplateAtlas {
public:
    TemplateAtlas() = default;
    /// Validates geometry, ownership and uniqueness of (char, case, font).
    explicit TemplateAtlas(std::vector<GlyphTemplate> templates);

    std::size_t size() const { return templates_.size(); }
    bool empty() const { return templates_.empty(); }
    const std::vector<GlyphTemplate>& templates() const { return templates_; }
    const GlyphTemplate& at(std::size_t j) const { return templates_.at(j); }

    /// Character owning template j.
    CharId phi(std::size_t j) const { return templates_.at(j).owner; }
    /// Covered characters, ascending by code point.
    const std::vector<CharId>& charset() const { return charset_; }
    bool contains(CharId c) const { return by_char_.count(c) != 0; }
    /// Template indices of character c (empty when absent).
    const std::vector<std::size_t>& templates_of(CharId c) const;
    std::size_t template_count(CharId c) const { return templates_of(c).size(); }

    /// Restriction to the given characters, preserving template order.
    TemplateAtlas subset(const std::vector<CharId>& chars) const;
    TemplateAtlas with_added(const std::vector<GlyphTemplate>& extra) const;

private:
    std::vector<GlyphTemplate> templates_;
    std::vector<CharId> charset_;
    std::map<CharId, std::vector<std::size_t>> by_char_;
};

/// Reads a manifest of `<char> TAB <case_id> TAB <font_id> TAB <relative-path>`
/// lines; the char column is a single UTF-8 character or `U+XXXX`.
TemplateAtlas load_atlas(const std::filesystem::path& manifest_path);
/// Writes `manifest.tsv` and one PGM per template into dir; returns the manifest path.
std::filesystem::path save_atlas(const TemplateAtlas& atlas, const std::filesystem::path& dir);

struct StrokeParams {
    int min_strokes = 3;
    int max_strokes = 7;
    double thickness = 2.0;     ///< stroke width in pixels
    double arc_probability = 0.4;
    double margin = 4.0;        ///< keep strokes this far from the border
    double case_thickness_step = 0.6;
    double case_slant_step = 0.2;
};

/// Default first code point for procedural classes (CJK block, printable in UTF-8).
inline constexpr CharId kProceduralBase = 0x4E00;

/// Random stroke glyphs: class k is owned by code point first_id + k and gets
/// cases_per_class deterministic style variants. Pixels are 8-bit quantized so
/// the atlas survives a save/load round trip exactly.
TemplateAtlas render_procedural_alphabet(std::uint64_t seed, std::size_t n_classes, std::size_t cases_per_class,
                                         const StrokeParams& params = {}, CharId first_id = kProceduralBase);

} // namespace ostr
