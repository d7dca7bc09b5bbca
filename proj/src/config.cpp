#include "ostr/config.hpp"

#include "ostr/errors.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace ostr {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& v)
{
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v)
{
    if (v.empty()) throw ConfigError(key + ": expected a number, got ''");
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(out))
        throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    return out;
}

bool parse_switch(const std::string& key, const std::string& v)
{
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v)
{
    std::vector<std::size_t> out;
    for (const auto& part : split(v, ',')) out.push_back(parse_u64(key, trim(part)));
    return out;
}

std::string fmt_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename Ref>
Field size_field(const char* key, Ref ref)
{
    return {key, [=](RunConfig& c, const std::string& v) { ref(c) = static_cast<std::size_t>(parse_u64(key, v)); },
            [=](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Ref>
Field u64_field(const char* key, Ref ref)
{
    return {key, [=](RunConfig& c, const std::string& v) { ref(c) = parse_u64(key, v); },
            [=](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Ref>
Field double_field(const char* key, Ref ref)
{
    return {key, [=](RunConfig& c, const std::string& v) { ref(c) = parse_double(key, v); },
            [=](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Ref>
Field string_field(const char* key, Ref ref)
{
    return {key, [=](RunConfig& c, const std::string& v) { ref(c) = v; },
            [=](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
}

template <typename Ref>
Field switch_field(const char* key, Ref ref)
{
    return {key, [=](RunConfig& c, const std::string& v) { ref(c) = parse_switch(key, v); },
            [=](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "on" : "off"); }};
}

template <typename Ref>
Field list_field(const char* key, Ref ref)
{
    return {key, [=](RunConfig& c, const std::string& v) { ref(c) = parse_list(key, v); },
            [=](const RunConfig& c) { return fmt_list(ref(const_cast<RunConfig&>(c))); }};
}

#define OSTR_REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields()
{
    static const std::vector<Field> all = {
        u64_field("seed", OSTR_REF(seed)),
        size_field("threads", OSTR_REF(threads)),
        size_field("input_width", OSTR_REF(model.input_width)),
        list_field("backbone_channels", OSTR_REF(model.backbone_channels)),
        size_field("d", OSTR_REF(model.feature_dim)),
        size_field("l_max", OSTR_REF(model.max_length)),
        size_field("cam_hidden", OSTR_REF(model.cam_hidden)),
        list_field("encoder_channels", OSTR_REF(model.encoder_channels)),
        double_field("h", OSTR_REF(model.h)),
        switch_field("tpt", OSTR_REF(model.tpt)),
        {"metric", [](RunConfig& c, const std::string& v) { c.model.metric = parse_metric(v); },
         [](const RunConfig& c) { return std::string(metric_name(c.model.metric)); }},
        {"encoder", [](RunConfig& c, const std::string& v) {
             if (v != "separate" && v != "shared") throw ConfigError("encoder must be separate or shared, got '" + v + "'");
             c.model.shared_trunk = v == "shared";
         },
         [](const RunConfig& c) { return std::string(c.model.shared_trunk ? "shared" : "separate"); }},
        string_field("atlas", OSTR_REF(atlas)),
        u64_field("alphabet_seed", OSTR_REF(alphabet_seed)),
        size_field("alphabet_classes", OSTR_REF(alphabet_classes)),
        size_field("alphabet_cases", OSTR_REF(alphabet_cases)),
        string_field("train_charset", OSTR_REF(train_charset)),
        string_field("train_data", OSTR_REF(train_data)),
        size_field("samples_per_epoch", OSTR_REF(samples_per_epoch)),
        size_field("min_len", OSTR_REF(min_len)),
        size_field("max_len", OSTR_REF(max_len)),
        double_field("noise", OSTR_REF(distortion.noise_sigma)),
        double_field("slant", OSTR_REF(distortion.slant)),
        double_field("curvature", OSTR_REF(distortion.curvature)),
        double_field("scale_jitter", OSTR_REF(distortion.scale_jitter)),
        size_field("epochs", OSTR_REF(epochs)),
        size_field("batch_size", OSTR_REF(batch_size)),
        double_field("lr", OSTR_REF(lr)),
        string_field("lr_schedule", OSTR_REF(lr_schedule)),
        double_field("momentum", OSTR_REF(momentum)),
        double_field("weight_decay", OSTR_REF(weight_decay)),
        double_field("grad_clip", OSTR_REF(grad_clip)),
        double_field("f_s", OSTR_REF(f_s)),
        size_field("b_max", OSTR_REF(b_max)),
        double_field("lambda_emb", OSTR_REF(lambda_emb)),
        switch_field("emb", OSTR_REF(emb)),
        double_field("m_p", OSTR_REF(m_p)),
        string_field("margin_file", OSTR_REF(margin_file)),
        size_field("checkpoint_every", OSTR_REF(checkpoint_every)),
        string_field("test_charset", OSTR_REF(test_charset)),
        {"split_mode", [](RunConfig& c, const std::string& v) { c.split_mode = parse_split_mode(v); },
         [](const RunConfig& c) { return std::string(split_mode_name(c.split_mode)); }},
        string_field("soc_group", OSTR_REF(split.soc_group)),
        string_field("noc_group", OSTR_REF(split.noc_group)),
        size_field("soc_count", OSTR_REF(split.soc_count)),
        size_field("noc_count", OSTR_REF(split.noc_count)),
        u64_field("split_seed", OSTR_REF(split_seed)),
        size_field("synth_count", OSTR_REF(synth_count)),
        string_field("synth_charset", OSTR_REF(synth_charset)),
    };
    return all;
}

#undef OSTR_REF

constexpr const char* kGroupPrefix = "group.";

} // namespace

void RunConfig::validate() const
{
    model.validate();
    if (threads == 0) throw ConfigError("threads must be at least 1");
    if (alphabet_classes == 0) throw ConfigError("alphabet_classes must be positive");
    if (alphabet_cases == 0) throw ConfigError("alphabet_cases must be positive");
    if (min_len == 0 || min_len > max_len) throw ConfigError("need 1 <= min_len <= max_len");
    if (max_len + 1 > model.max_length)
        throw ConfigError("max_len " + std::to_string(max_len) + " leaves no room for EOS within l_max " +
                          std::to_string(model.max_length));
    if (distortion.noise_sigma < 0 || distortion.slant < 0 || distortion.curvature < 0)
        throw ConfigError("distortion amplitudes must be non-negative");
    if (distortion.scale_jitter < 0 || distortion.scale_jitter >= 1) throw ConfigError("scale_jitter must be in [0, 1)");
    const auto widest = static_cast<double>(max_len * kGlyphSize) * (1.0 + distortion.scale_jitter);
    if (std::ceil(widest) > static_cast<double>(model.input_width))
        throw ConfigError("lines of max_len " + std::to_string(max_len) + " can reach " +
                          std::to_string(static_cast<long>(std::ceil(widest))) + " px, wider than input_width " +
                          std::to_string(model.input_width));
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (train_data == "synthetic" && samples_per_epoch == 0) throw ConfigError("samples_per_epoch must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (lr_schedule != "cosine" && lr_schedule != "constant")
        throw ConfigError("lr_schedule must be cosine or constant, got '" + lr_schedule + "'");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (grad_clip < 0) throw ConfigError("grad_clip must be non-negative");
    if (!(f_s > 0 && f_s <= 1)) throw ConfigError("f_s must be in (0, 1]");
    if (b_max < 3) throw ConfigError("b_max must be at least 3");
    if (lambda_emb < 0) throw ConfigError("lambda_emb must be non-negative");
    if (m_p < -1 || m_p > 1) throw ConfigError("m_p must be in [-1, 1]");
    for (const auto& [name, chars] : split.groups)
        for (auto c : chars)
            if (is_special(c)) throw ConfigError("group '" + name + "' contains a special token");
}

RunConfig parse_config(const std::string& text, const std::string& origin)
{
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        const auto where = origin + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
        const auto key = trim(std::string_view(t).substr(0, eq));
        const auto value = trim(std::string_view(t).substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
        try {
            if (key.rfind(kGroupPrefix, 0) == 0) {
                const auto name = key.substr(std::char_traits<char>::length(kGroupPrefix));
                if (name.empty()) throw ConfigError("empty group name");
                Label chars;
                try {
                    chars = from_utf8(value);
                } catch (const LoadError& e) {
                    throw ConfigError(e.what());
                }
                std::vector<CharId> v(chars.begin(), chars.end());
                std::sort(v.begin(), v.end());
                v.erase(std::unique(v.begin(), v.end()), v.end());
                c.split.groups[name] = v;
                continue;
            }
            const auto& fs = fields();
            auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return key == f.key; });
            if (it == fs.end()) throw ConfigError("unknown key '" + key + "'");
            it->set(c, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string serialize_config(const RunConfig& c)
{
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(c) + "\n";
    for (const auto& [name, chars] : c.split.groups)
        out += kGroupPrefix + name + "=" + to_utf8(Label(chars.begin(), chars.end())) + "\n";
    return out;
}

std::vector<CharId> resolve_charset(const std::string& spec, const std::vector<CharId>& universe)
{
    auto count = [&](const std::string& s) { return static_cast<std::size_t>(parse_u64("charset " + spec, s)); };
    auto slice = [&](std::size_t a, std::size_t b) {
        if (a > b || b > universe.size())
            throw ConfigError("charset '" + spec + "' selects beyond the " + std::to_string(universe.size()) +
                              " available characters");
        return std::vector<CharId>(universe.begin() + static_cast<std::ptrdiff_t>(a),
                                   universe.begin() + static_cast<std::ptrdiff_t>(b));
    };
    if (spec == "all") return universe;
    const auto parts = split(spec, ':');
    if (parts.size() == 2 && parts[0] == "first") return slice(0, count(parts[1]));
    if (parts.size() == 2 && parts[0] == "last") {
        const auto n = count(parts[1]);
        if (n > universe.size()) return slice(1, 0);
        return slice(universe.size() - n, universe.size());
    }
    if (parts.size() == 3 && parts[0] == "range") return slice(count(parts[1]), count(parts[2]));
    if (spec.rfind("chars:", 0) == 0) {
        Label l;
        try {
            l = from_utf8(spec.substr(6));
        } catch (const LoadError& e) {
            throw ConfigError(e.what());
        }
        std::vector<CharId> out(l.begin(), l.end());
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        std::string missing;
        for (auto ch : out)
            if (!std::binary_search(universe.begin(), universe.end(), ch)) missing += to_utf8(ch);
        if (!missing.empty()) throw ConfigError("charset characters not available: " + missing);
        return out;
    }
    throw ConfigError("malformed charset expression '" + spec + "'");
}

TemplateAtlas load_run_atlas(const RunConfig& c)
{
    if (c.atlas == "procedural") return render_procedural_alphabet(c.alphabet_seed, c.alphabet_classes, c.alphabet_cases);
    return load_atlas(c.atlas);
}

} // namespace ostr
