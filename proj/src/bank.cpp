#include "ostr/bank.hpp"

#include "ostr/errors.hpp"

#include <algorithm>
#include <fstream>

namespace ostr {

PrototypeBank::PrototypeBank(std::size_t d, std::vector<float> columns, std::vector<float> eos,
                             std::vector<TemplateKey> keys)
    : d_(d), columns_(std::move(columns)), eos_(std::move(eos)), keys_(std::move(keys))
{
    if (d_ == 0) throw ContractError("prototype dimension must be positive");
    if (columns_.size() != d_ * keys_.size() || eos_.size() != d_)
        throw ContractError("prototype bank storage does not match its dimension");
}

std::vector<CharId> PrototypeBank::owners() const
{
    std::vector<CharId> o;
    for (const auto& k : keys_) o.push_back(k.ch);
    return o;
}

std::vector<CharId> PrototypeBank::charset() const
{
    auto o = owners();
    std::sort(o.begin(), o.end());
    o.erase(std::unique(o.begin(), o.end()), o.end());
    return o;
}

Tensor<float> PrototypeBank::matrix(std::span<const std::size_t> cols) const
{
    const std::size_t n = cols.size();
    std::vector<float> m(d_ * n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto c = column(cols[k]);
        for (std::size_t i = 0; i < d_; ++i) m[i * n + k] = c[i];
    }
    return Tensor<float>::from({d_, n}, std::move(m));
}

Tensor<float> PrototypeBank::matrix() const
{
    std::vector<std::size_t> all(size());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    return matrix(all);
}

Tensor<float> PrototypeBank::eos_tensor() const { return Tensor<float>::from({d_}, eos_); }

std::vector<std::size_t> PrototypeBank::columns_of(const std::set<CharId>& chars) const
{
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < keys_.size(); ++j)
        if (chars.count(keys_[j].ch)) cols.push_back(j);
    return cols;
}

PrototypeBank PrototypeBank::restricted(const std::set<CharId>& chars) const
{
    std::vector<float> cols;
    std::vector<TemplateKey> keys;
    for (auto j : columns_of(chars)) {
        const auto c = column(j);
        cols.insert(cols.end(), c.begin(), c.end());
        keys.push_back(keys_[j]);
    }
    return PrototypeBank(d_, std::move(cols), eos_, std::move(keys));
}

namespace {

std::vector<float> encode_strict(const Recognizer<float>& model, const GlyphTemplate& t)
{
    try {
        auto p = model.encoder.encode(t.pixels, NormMode::Strict);
        return {p.data().begin(), p.data().end()};
    } catch (const DegenerateInputError& e) {
        throw DegenerateInputError("template " + describe(t.key()) + ": " + e.what());
    }
}

std::vector<float> normalized_eos(const Recognizer<float>& model)
{
    auto e = l2_normalize(model.eos.detach(), NormMode::Strict);
    return {e.data().begin(), e.data().end()};
}

} // namespace

PrototypeBank build_bank(const Recognizer<float>& model, const TemplateAtlas& atlas)
{
    if (atlas.size() == 0) throw ContractError("a prototype bank requires at least one template");
    std::vector<float> cols;
    std::vector<TemplateKey> keys;
    for (std::size_t j = 0; j < atlas.size(); ++j) {
        const auto p = encode_strict(model, atlas.at(j));
        cols.insert(cols.end(), p.begin(), p.end());
        keys.push_back(atlas.at(j).key());
    }
    return PrototypeBank(model.config.feature_dim, std::move(cols), normalized_eos(model), std::move(keys));
}

PrototypeBank update_bank(const PrototypeBank& bank, const Recognizer<float>& model, const AtlasDelta& delta)
{
    if (model.config.feature_dim != bank.dim())
        throw ContractError("model dimension " + std::to_string(model.config.feature_dim) +
                            " does not match bank dimension " + std::to_string(bank.dim()));
    std::set<TemplateKey> removed;
    for (const auto& k : delta.removed) {
        if (std::find(bank.keys().begin(), bank.keys().end(), k) == bank.keys().end())
            throw ContractError("cannot remove unknown template " + describe(k));
        removed.insert(k);
    }
    std::vector<float> cols;
    std::vector<TemplateKey> keys;
    std::set<TemplateKey> present;
    for (std::size_t j = 0; j < bank.size(); ++j) {
        if (removed.count(bank.keys()[j])) continue;
        const auto c = bank.column(j);
        cols.insert(cols.end(), c.begin(), c.end());
        keys.push_back(bank.keys()[j]);
        present.insert(bank.keys()[j]);
    }
    for (const auto& t : delta.added) {
        if (is_special(t.owner)) throw ContractError("special tokens cannot own templates");
        if (!present.insert(t.key()).second) throw ContractError("template " + describe(t.key()) + " already in bank");
        const auto p = encode_strict(model, t);
        cols.insert(cols.end(), p.begin(), p.end());
        keys.push_back(t.key());
    }
    if (keys.empty()) throw ContractError("a prototype bank requires at least one template");
    return PrototypeBank(bank.dim(), std::move(cols), bank.eos(), std::move(keys));
}

void export_bank_tsv(const PrototypeBank& bank, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(9);
    for (std::size_t j = 0; j < bank.size(); ++j) {
        out << j << '\t' << to_utf8(bank.phi(j));
        for (auto v : bank.column(j)) out << '\t' << v;
        out << '\n';
    }
}

} // namespace ostr
