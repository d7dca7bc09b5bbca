#pragma once

#include "ostr/atlas.hpp"
#include "ostr/model.hpp"

#include <filesystem>
#include <set>
#include <vector>

namespace ostr {

/// Unit-norm prototypes, one column per template, stored column-major
/// (column j occupies [j*d, (j+1)*d)).
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(std::size_t d, std::vector<float> columns, std::vector<float> eos, std::vector<TemplateKey> keys);

    std::size_t dim() const { return d_; }
    std::size_t size() const { return keys_.size(); }
    const std::vector<float>& columns() const { return columns_; }
    std::span<const float> column(std::size_t j) const { return {columns_.data() + j * d_, d_}; }
    const std::vector<float>& eos() const { return eos_; }
    const std::vector<TemplateKey>& keys() const { return keys_; }
    CharId phi(std::size_t j) const { return keys_.at(j).ch; }
    std::vector<CharId> owners() const;
    /// Sorted distinct characters.
    std::vector<CharId> charset() const;

    /// [d, |cols|] matrix of the selected columns.
    Tensor<float> matrix(std::span<const std::size_t> cols) const;
    Tensor<float> matrix() const;
    Tensor<float> eos_tensor() const;
    /// Indices of columns whose owner is in `chars`.
    std::vector<std::size_t> columns_of(const std::set<CharId>& chars) const;
    /// Physically smaller bank holding only templates of `chars`.
    PrototypeBank restricted(const std::set<CharId>& chars) const;

    bool operator==(const PrototypeBank& o) const = default;

private:
    std::size_t d_ = 0;
    std::vector<float> columns_;
    std::vector<float> eos_;
    std::vector<TemplateKey> keys_;
};

/// Encodes every atlas template (strict normalization).
PrototypeBank build_bank(const Recognizer<float>& model, const TemplateAtlas& atlas);

struct AtlasDelta {
    std::vector<GlyphTemplate> added;
    std::vector<TemplateKey> removed;
};

/// Drops removed templates and encodes only the added ones, appended in order.
PrototypeBank update_bank(const PrototypeBank& bank, const Recognizer<float>& model, const AtlasDelta& delta);

/// `template_id <TAB> char <TAB> d floats` per template.
void export_bank_tsv(const PrototypeBank& bank, const std::filesystem::path& path);

} // namespace ostr
