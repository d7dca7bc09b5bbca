#include "ostr/atlas.hpp"

#include "ostr/errors.hpp"
#include "ostr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace ostr {

namespace {

const std::vector<std::size_t> kNoTemplates;

struct Segment {
    double x0, y0, x1, y1;
};

double segment_distance(const Segment& s, double px, double py)
{
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = s.x0 + t * dx - px, qy = s.y0 + t * dy - py;
    return std::sqrt(qx * qx + qy * qy);
}

std::vector<Segment> random_strokes(Rng& rng, const StrokeParams& p)
{
    const double lo = p.margin, hi = static_cast<double>(kGlyphSize) - p.margin;
    const int span = std::max(0, p.max_strokes - p.min_strokes);
    const int count = p.min_strokes + static_cast<int>(rng.index(static_cast<std::size_t>(span) + 1));
    std::vector<Segment> segs;
    for (int s = 0; s < count; ++s) {
        if (rng.uniform() < p.arc_probability) {
            const double r = rng.uniform(4.0, 10.0);
            const double cx = rng.uniform(lo + 2, hi - 2), cy = rng.uniform(lo + 2, hi - 2);
            const double a0 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double sweep = rng.uniform(1.2, 3.6) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
            const int pieces = 12;
            double px = 0, py = 0;
            for (int k = 0; k <= pieces; ++k) {
                const double a = a0 + sweep * k / pieces;
                const double x = std::clamp(cx + r * std::cos(a), lo, hi);
                const double y = std::clamp(cy + r * std::sin(a), lo, hi);
                if (k > 0) segs.push_back({px, py, x, y});
                px = x;
                py = y;
            }
        } else {
            double x0 = rng.uniform(lo, hi), y0 = rng.uniform(lo, hi);
            double x1 = rng.uniform(lo, hi), y1 = rng.uniform(lo, hi);
            // Avoid dot-like strokes.
            while (std::hypot(x1 - x0, y1 - y0) < 8.0) {
                x1 = rng.uniform(lo, hi);
                y1 = rng.uniform(lo, hi);
            }
            segs.push_back({x0, y0, x1, y1});
        }
    }
    return segs;
}

Image rasterize(const std::vector<Segment>& segs, double thickness, double shear)
{
    Image img(kGlyphSize, kGlyphSize);
    const double c = static_cast<double>(kGlyphSize) / 2.0;
    for (std::size_t y = 0; y < kGlyphSize; ++y) {
        for (std::size_t x = 0; x < kGlyphSize; ++x) {
            const double py = static_cast<double>(y) + 0.5;
            // Inverse shear: the style variant leans strokes by `shear` per row.
            const double px = static_cast<double>(x) + 0.5 + shear * (py - c);
            double d = 1e9;
            for (const auto& s : segs) d = std::min(d, segment_distance(s, px, py));
            const double v = std::clamp(thickness / 2.0 + 0.5 - d, 0.0, 1.0);
            img.at(y, x) = quantize8(static_cast<float>(v));
        }
    }
    return img;
}

CharId parse_char_column(const std::string& col, std::size_t line_no)
{
    if (col.size() > 2 && (col[0] == 'U' || col[0] == 'u') && col[1] == '+') {
        try {
            return static_cast<CharId>(std::stoul(col.substr(2), nullptr, 16));
        } catch (const std::exception&) {
            throw LoadError("manifest line " + std::to_string(line_no) + ": bad code point '" + col + "'");
        }
    }
    Label l;
    try {
        l = from_utf8(col);
    } catch (const LoadError& e) {
        throw LoadError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (l.size() != 1 || is_special(l[0]))
        throw LoadError("manifest line " + std::to_string(line_no) + ": expected one character, got '" + col + "'");
    return l[0];
}

} // namespace

std::string describe(const TemplateKey& key)
{
    std::ostringstream os;
    os << "'" << to_utf8(key.ch) << "' (U+" << std::hex << std::uppercase << static_cast<std::uint32_t>(key.ch)
       << std::dec << ") case " << key.case_id << " font " << key.font_id;
    return os.str();
}

TemplateAtlas::TemplateAtlas(std::vector<GlyphTemplate> templates) : templates_(std::move(templates))
{
    std::set<TemplateKey> seen;
    for (std::size_t j = 0; j < templates_.size(); ++j) {
        const auto& t = templates_[j];
        if (t.pixels.height != kGlyphSize || t.pixels.width != kGlyphSize)
            throw ContractError("template " + describe(t.key()) + " is " + std::to_string(t.pixels.height) + "x" +
                                std::to_string(t.pixels.width) + ", expected 32x32");
        if (is_special(t.owner)) throw ContractError("special tokens cannot own templates");
        if (!seen.insert(t.key()).second) throw ContractError("duplicate template " + describe(t.key()));
        by_char_[t.owner].push_back(j);
    }
    for (auto& t : templates_)
        for (auto& p : t.pixels.pixels) p = std::clamp(p, 0.0f, 1.0f);
    for (const auto& [c, _] : by_char_) charset_.push_back(c);
}

const std::vector<std::size_t>& TemplateAtlas::templates_of(CharId c) const
{
    auto it = by_char_.find(c);
    return it == by_char_.end() ? kNoTemplates : it->second;
}

TemplateAtlas TemplateAtlas::subset(const std::vector<CharId>& chars) const
{
    std::set<CharId> keep(chars.begin(), chars.end());
    std::vector<GlyphTemplate> out;
    for (const auto& t : templates_)
        if (keep.count(t.owner)) out.push_back(t);
    return TemplateAtlas(std::move(out));
}

TemplateAtlas TemplateAtlas::with_added(const std::vector<GlyphTemplate>& extra) const
{
    auto all = templates_;
    all.insert(all.end(), extra.begin(), extra.end());
    return TemplateAtlas(std::move(all));
}

TemplateAtlas load_atlas(const std::filesystem::path& manifest_path)
{
    std::ifstream in(manifest_path);
    if (!in) throw LoadError("cannot open atlas manifest " + manifest_path.string());
    const auto base = manifest_path.parent_path();
    std::vector<GlyphTemplate> templates;
    std::set<TemplateKey> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        const auto cols = split(line, '\t');
        if (cols.size() != 4)
            throw LoadError("manifest line " + std::to_string(line_no) + ": expected 4 tab-separated columns");
        GlyphTemplate t;
        t.owner = parse_char_column(cols[0], line_no);
        try {
            t.case_id = std::stoi(cols[1]);
        } catch (const std::exception&) {
            throw LoadError("manifest line " + std::to_string(line_no) + ": bad case id '" + cols[1] + "'");
        }
        t.font_id = cols[2];
        if (!seen.insert(t.key()).second)
            throw LoadError("manifest line " + std::to_string(line_no) + ": duplicate template " + describe(t.key()));
        try {
            t.pixels = read_pgm(base / cols[3]);
        } catch (const LoadError& e) {
            throw LoadError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (t.pixels.width != kGlyphSize || t.pixels.height != kGlyphSize)
            throw LoadError("manifest line " + std::to_string(line_no) + ": image " + cols[3] + " is " +
                            std::to_string(t.pixels.height) + "x" + std::to_string(t.pixels.width) +
                            ", expected 32x32");
        templates.push_back(std::move(t));
    }
    return TemplateAtlas(std::move(templates));
}

std::filesystem::path save_atlas(const TemplateAtlas& atlas, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir / "glyphs");
    const auto manifest = dir / "manifest.tsv";
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    for (std::size_t j = 0; j < atlas.size(); ++j) {
        const auto& t = atlas.at(j);
        const std::string rel = "glyphs/t" + std::to_string(j) + ".pgm";
        write_pgm(t.pixels, dir / rel);
        out << to_utf8(t.owner) << '\t' << t.case_id << '\t' << t.font_id << '\t' << rel << '\n';
    }
    return manifest;
}

TemplateAtlas render_procedural_alphabet(std::uint64_t seed, std::size_t n_classes, std::size_t cases_per_class,
                                         const StrokeParams& params, CharId first_id)
{
    if (n_classes < 2) throw ContractError("procedural alphabet needs at least 2 classes");
    if (cases_per_class < 1) throw ContractError("procedural alphabet needs at least 1 case per class");
    std::vector<GlyphTemplate> templates;
    for (std::size_t k = 0; k < n_classes; ++k) {
        Rng rng(derive_seed(seed, k));
        const auto strokes = random_strokes(rng, params);
        for (std::size_t c = 0; c < cases_per_class; ++c) {
            // Case 0 is the plain style; later cases alternate slant direction.
            const double step = static_cast<double>((c + 1) / 2);
            const double sign = (c % 2 == 1) ? 1.0 : -1.0;
            GlyphTemplate t;
            t.owner = first_id + static_cast<CharId>(k);
            t.case_id = static_cast<int>(c);
            t.font_id = "procedural";
            t.pixels = rasterize(strokes, params.thickness + params.case_thickness_step * static_cast<double>(c),
                                 sign * step * params.case_slant_step);
            templates.push_back(std::move(t));
        }
    }
    return TemplateAtlas(std::move(templates));
}

} // namespace ostr
