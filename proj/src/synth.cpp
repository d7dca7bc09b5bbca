#include "ostr/synth.hpp"

#include "ostr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ostr {

namespace {

float sample_zero_padded(const Image& img, double u, double v)
{
    // u, v in index space; outside the glyph reads as background.
    const double fx = std::floor(u), fy = std::floor(v);
    const double ax = u - fx, ay = v - fy;
    const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
    auto px = [&](long y, long x) -> double {
        if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) return 0.0;
        return img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    if (ax == 0.0 && ay == 0.0) return static_cast<float>(px(y0, x0));
    const double top = px(y0, x0) * (1 - ax) + px(y0, x0 + 1) * ax;
    const double bot = px(y0 + 1, x0) * (1 - ax) + px(y0 + 1, x0 + 1) * ax;
    return static_cast<float>(top * (1 - ay) + bot * ay);
}

} // namespace

SyntheticSample synthesize_line(const TemplateAtlas& atlas, const Label& label, const Distortion& distortion,
                                std::uint64_t seed, std::size_t l_max, std::size_t max_width)
{
    if (label.empty()) throw ContractError("synthesize_line: empty label");
    if (l_max == 0 || label.size() > l_max - 1)
        throw LengthError("synthesize_line: label length " + std::to_string(label.size()) + " exceeds l_max-1 = " +
                          std::to_string(l_max ? l_max - 1 : 0));
    for (auto c : label) {
        if (is_special(c)) throw ContractError("synthesize_line: special tokens cannot be rendered");
        if (!atlas.contains(c)) throw ContractError("synthesize_line: character " + to_utf8(c) + " not in atlas");
    }
    Rng rng(seed);
    std::vector<std::size_t> widths(label.size());
    std::vector<std::size_t> chosen(label.size());
    std::size_t total = 0;
    for (std::size_t k = 0; k < label.size(); ++k) {
        const auto& ts = atlas.templates_of(label[k]);
        chosen[k] = ts.size() == 1 ? ts[0] : ts[rng.index(ts.size())];
        double s = 1.0;
        if (distortion.scale_jitter > 0) s += distortion.scale_jitter * rng.uniform(-1.0, 1.0);
        widths[k] = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(kGlyphSize * s)));
        total += widths[k];
    }
    if (total > max_width)
        throw LengthError("synthesize_line: rendered width " + std::to_string(total) + " exceeds " +
                          std::to_string(max_width));
    const double shear = distortion.slant > 0 ? distortion.slant * rng.uniform(-1.0, 1.0) : 0.0;
    const double bend = distortion.curvature > 0 ? distortion.curvature * rng.uniform(-1.0, 1.0) : 0.0;

    SyntheticSample out;
    out.label = label;
    out.image = Image(kGlyphSize, total);
    const double half_w = static_cast<double>(total) / 2.0;
    const double mid_y = static_cast<double>(kGlyphSize) / 2.0;
    std::size_t x0 = 0;
    for (std::size_t k = 0; k < label.size(); ++k) {
        const auto& glyph = atlas.at(chosen[k]).pixels;
        const double sx = static_cast<double>(kGlyphSize) / static_cast<double>(widths[k]);
        for (std::size_t x = x0; x < x0 + widths[k]; ++x) {
            const double xc = static_cast<double>(x) + 0.5;
            const double rel = (xc - half_w) / half_w;
            const double yoff = bend * rel * rel;
            for (std::size_t y = 0; y < kGlyphSize; ++y) {
                const double yc = static_cast<double>(y) + 0.5;
                const double u = (xc - static_cast<double>(x0)) * sx - 0.5 + shear * (yc - mid_y);
                const double v = yc - yoff - 0.5;
                out.image.at(y, x) = sample_zero_padded(glyph, u, v);
            }
        }
        x0 += widths[k];
    }
    if (distortion.noise_sigma > 0) {
        for (auto& p : out.image.pixels)
            p = std::clamp(p + static_cast<float>(distortion.noise_sigma * rng.normal()), 0.0f, 1.0f);
    }
    return out;
}

Label random_label(Rng& rng, const std::vector<CharId>& charset, std::size_t min_len, std::size_t max_len)
{
    if (charset.empty()) throw ContractError("random_label: empty charset");
    if (min_len == 0 || min_len > max_len) throw ConfigError("random_label: need 1 <= min_len <= max_len");
    const std::size_t len = min_len + rng.index(max_len - min_len + 1);
    Label l;
    for (std::size_t i = 0; i < len; ++i) l += charset[rng.index(charset.size())];
    return l;
}

std::vector<DatasetEntry> load_dataset(const std::filesystem::path& dir)
{
    const auto labels = dir / "labels.tsv";
    std::ifstream in(labels);
    if (!in) throw LoadError("cannot open " + labels.string());
    std::vector<DatasetEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw LoadError(labels.string() + " line " + std::to_string(line_no) + ": missing TAB");
        DatasetEntry e;
        e.name = line.substr(0, tab);
        e.label = from_utf8(line.substr(tab + 1));
        for (auto c : e.label)
            if (is_special(c))
                throw LoadError(labels.string() + " line " + std::to_string(line_no) +
                                ": ground truth must not contain special tokens");
        e.image = read_pgm(dir / e.name);
        if (e.image.height != kGlyphSize)
            throw LoadError(e.name + ": image height must be 32, got " + std::to_string(e.image.height));
        out.push_back(std::move(e));
    }
    return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<DatasetEntry>& entries)
{
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "labels.tsv");
    if (!out) throw IoError("cannot write " + (dir / "labels.tsv").string());
    for (const auto& e : entries) {
        write_pgm(e.image, dir / e.name);
        out << e.name << '\t' << to_utf8(e.label) << '\n';
    }
}

std::vector<DatasetEntry> synthesize_dataset(const TemplateAtlas& atlas, const SynthSpec& spec, std::uint64_t seed)
{
    std::vector<DatasetEntry> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        Rng rng(derive_seed(seed, 2 * i));
        const Label label = random_label(rng, spec.charset, spec.min_len, spec.max_len);
        auto s = synthesize_line(atlas, label, spec.distortion, derive_seed(seed, 2 * i + 1), spec.l_max,
                                 spec.max_width);
        std::ostringstream name;
        name << "img" << std::setw(6) << std::setfill('0') << i << ".pgm";
        quantize8(s.image);
        out.push_back({name.str(), std::move(s.image), std::move(s.label)});
    }
    return out;
}

} // namespace ostr
