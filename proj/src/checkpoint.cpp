#include "ostr/checkpoint.hpp"

#include "ostr/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace ostr {

namespace {

constexpr char kMagic[] = "OSTR1";
constexpr std::size_t kMagicLen = 5;

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& blob, const std::string& origin) : blob_(blob), origin_(origin) {}

    std::uint64_t uint(int bytes)
    {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob_[pos_++])) << (8 * i);
        return v;
    }

    std::string take(std::uint64_t n)
    {
        need(n);
        std::string s = blob_.substr(pos_, static_cast<std::size_t>(n));
        pos_ += static_cast<std::size_t>(n);
        return s;
    }

    bool done() const { return pos_ == blob_.size(); }

    [[noreturn]] void fail(const std::string& what) const
    {
        throw LoadError(origin_ + ": " + what + " at byte " + std::to_string(pos_));
    }

private:
    void need(std::uint64_t n) const
    {
        if (n > blob_.size() - pos_) fail("truncated");
    }

    const std::string& blob_;
    const std::string& origin_;
    std::size_t pos_ = 0;
};

} // namespace

void Container::put_array(const std::string& name, const Shape& shape, std::span<const float> values)
{
    if (has(name)) throw ContractError("duplicate section '" + name + "'");
    if (shape_numel(shape) != values.size())
        throw DimensionError("section '" + name + "': shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    sections_.push_back({name, true, shape, {values.begin(), values.end()}, {}});
}

void Container::put_bytes(const std::string& name, std::string bytes)
{
    if (has(name)) throw ContractError("duplicate section '" + name + "'");
    sections_.push_back({name, false, {}, {}, std::move(bytes)});
}

bool Container::has(const std::string& name) const
{
    return std::any_of(sections_.begin(), sections_.end(), [&](const Section& s) { return s.name == name; });
}

std::vector<std::string> Container::names() const
{
    std::vector<std::string> out;
    for (const auto& s : sections_) out.push_back(s.name);
    return out;
}

const Container::Section& Container::find(const std::string& name) const
{
    for (const auto& s : sections_)
        if (s.name == name) return s;
    throw LoadError("missing section '" + name + "'");
}

const Shape& Container::shape(const std::string& name) const
{
    const auto& s = find(name);
    if (!s.is_array) throw LoadError("section '" + name + "' is not an array");
    return s.shape;
}

const std::vector<float>& Container::array(const std::string& name) const
{
    const auto& s = find(name);
    if (!s.is_array) throw LoadError("section '" + name + "' is not an array");
    return s.values;
}

const std::string& Container::bytes(const std::string& name) const
{
    const auto& s = find(name);
    if (s.is_array) throw LoadError("section '" + name + "' is not a byte string");
    return s.bytes;
}

std::string Container::encode() const
{
    std::string out(kMagic, kMagicLen);
    put_u32(out, static_cast<std::uint32_t>(sections_.size()));
    for (const auto& s : sections_) {
        put_u32(out, static_cast<std::uint32_t>(s.name.size()));
        out += s.name;
        out.push_back(s.is_array ? 0 : 1);
        if (s.is_array) {
            put_u32(out, static_cast<std::uint32_t>(s.shape.size()));
            for (auto d : s.shape) put_u32(out, static_cast<std::uint32_t>(d));
            for (float v : s.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
        } else {
            put_u64(out, s.bytes.size());
            out += s.bytes;
        }
    }
    return out;
}

Container Container::decode(const std::string& blob, const std::string& origin)
{
    Reader r(blob, origin);
    if (r.take(kMagicLen) != std::string(kMagic, kMagicLen)) r.fail("bad magic");
    const auto count = r.uint(4);
    Container c;
    for (std::uint64_t k = 0; k < count; ++k) {
        Section s;
        s.name = r.take(r.uint(4));
        if (c.has(s.name)) r.fail("duplicate section '" + s.name + "'");
        const auto kind = r.uint(1);
        if (kind == 0) {
            const auto rank = r.uint(4);
            if (rank > 8) r.fail("implausible rank");
            std::uint64_t n = 1;
            for (std::uint64_t i = 0; i < rank; ++i) {
                s.shape.push_back(static_cast<std::size_t>(r.uint(4)));
                n *= s.shape.back();
            }
            if (n > blob.size()) r.fail("array larger than file");
            s.values.resize(static_cast<std::size_t>(n));
            for (auto& v : s.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
        } else if (kind == 1) {
            s.is_array = false;
            s.bytes = r.take(r.uint(8));
        } else {
            r.fail("unknown section kind");
        }
        c.sections_.push_back(std::move(s));
    }
    if (!r.done()) r.fail("trailing bytes");
    return c;
}

void Container::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const auto blob = encode();
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Container Container::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return decode(ss.str(), path.string());
}

namespace {

const std::set<std::string> kMetaSections{"kind", "config", "rng", "iteration", "charset"};

void put_params(Container& c, const ParameterSet<float>& ps)
{
    for (const auto& [name, t] : ps.entries()) c.put_array(name, t.shape(), t.data());
}

void put_meta(Container& c, const CheckpointMeta& meta)
{
    c.put_bytes("kind", meta.kind);
    c.put_bytes("config", serialize_config(meta.config));
    c.put_bytes("rng", meta.rng_state);
    c.put_bytes("iteration", std::to_string(meta.iteration));
}

void take_params(const Container& c, ParameterSet<float>& ps, const std::string& origin)
{
    std::set<std::string> expected;
    for (auto& [name, t] : ps.entries()) {
        expected.insert(name);
        if (!c.has(name)) throw LoadError(origin + ": missing parameter '" + name + "'");
        if (c.shape(name) != t.shape())
            throw LoadError(origin + ": parameter '" + name + "' has shape " + shape_str(c.shape(name)) +
                            ", architecture expects " + shape_str(t.shape()));
        const auto& v = c.array(name);
        auto dst = const_cast<Tensor<float>&>(t).mutable_data();
        std::copy(v.begin(), v.end(), dst.begin());
    }
    for (const auto& n : c.names())
        if (!expected.count(n) && !kMetaSections.count(n))
            throw LoadError(origin + ": unexpected section '" + n + "'");
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Recognizer<float>& model, const CheckpointMeta& meta)
{
    Container c;
    put_params(c, model.parameters());
    auto m = meta;
    m.kind = "prototype";
    put_meta(c, m);
    c.save(path);
}

void save_checkpoint(const std::filesystem::path& path, const BaselineRecognizer<float>& model,
                     const CheckpointMeta& meta)
{
    Container c;
    put_params(c, model.parameters());
    auto m = meta;
    m.kind = "baseline";
    put_meta(c, m);
    c.put_bytes("charset", to_utf8(Label(model.charset.begin(), model.charset.end())));
    c.save(path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    const auto c = Container::load(path);
    const auto origin = path.string();
    LoadedCheckpoint out;
    out.meta.kind = c.bytes("kind");
    try {
        out.meta.config = parse_config(c.bytes("config"), origin + " [config]");
    } catch (const ConfigError& e) {
        throw LoadError(e.what());
    }
    out.meta.rng_state = c.bytes("rng");
    const auto& it = c.bytes("iteration");
    try {
        std::size_t used = 0;
        out.meta.iteration = std::stoull(it, &used);
        if (used != it.size()) throw std::invalid_argument(it);
    } catch (const std::exception&) {
        throw LoadError(origin + ": malformed iteration counter");
    }
    if (out.meta.kind == "prototype") {
        out.model.emplace(out.meta.config.model, 0);
        auto ps = out.model->parameters();
        take_params(c, ps, origin);
        if (c.has("charset")) throw LoadError(origin + ": unexpected section 'charset'");
    } else if (out.meta.kind == "baseline") {
        const auto l = from_utf8(c.bytes("charset"));
        out.baseline.emplace(out.meta.config.model, std::vector<CharId>(l.begin(), l.end()), 0);
        auto ps = out.baseline->parameters();
        take_params(c, ps, origin);
    } else {
        throw LoadError(origin + ": unknown checkpoint kind '" + out.meta.kind + "'");
    }
    return out;
}

void save_bank(const std::filesystem::path& path, const PrototypeBank& bank)
{
    Container c;
    c.put_array("bank.P", {bank.size(), bank.dim()}, bank.columns());
    c.put_array("bank.eos", {bank.dim()}, bank.eos());
    std::string keys;
    for (const auto& k : bank.keys()) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(k.ch));
        keys += std::string(buf) + "\t" + std::to_string(k.case_id) + "\t" + k.font_id + "\n";
    }
    c.put_bytes("bank.keys", keys);
    c.save(path);
}

PrototypeBank load_bank(const std::filesystem::path& path)
{
    const auto c = Container::load(path);
    const auto& shape = c.shape("bank.P");
    if (shape.size() != 2) throw LoadError(path.string() + ": bank.P must be rank 2");
    std::vector<TemplateKey> keys;
    std::istringstream in(c.bytes("bank.keys"));
    std::string line;
    while (std::getline(in, line)) {
        const auto f = split(line, '\t');
        if (f.size() != 3 || f[0].rfind("U+", 0) != 0) throw LoadError(path.string() + ": malformed key '" + line + "'");
        try {
            keys.push_back({static_cast<CharId>(std::stoul(f[0].substr(2), nullptr, 16)), std::stoi(f[1]), f[2]});
        } catch (const std::exception&) {
            throw LoadError(path.string() + ": malformed key '" + line + "'");
        }
    }
    if (keys.size() != shape[0]) throw LoadError(path.string() + ": key count does not match bank.P");
    if (c.shape("bank.eos") != Shape{shape[1]}) throw LoadError(path.string() + ": bank.eos has the wrong shape");
    try {
        return PrototypeBank(shape[1], c.array("bank.P"), c.array("bank.eos"), std::move(keys));
    } catch (const ContractError& e) {
        throw LoadError(path.string() + ": " + e.what());
    } catch (const DimensionError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

} // namespace ostr
