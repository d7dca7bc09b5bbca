#include "ostr/sampler.hpp"

#include "ostr/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ostr {

std::set<CharId> BatchCharset::all() const
{
    std::set<CharId> a = pos;
    a.insert(neg.begin(), neg.end());
    a.insert(kEos);
    a.insert(kUnk);
    return a;
}

std::vector<CharId> BatchCharset::active() const
{
    std::set<CharId> a = pos;
    a.insert(neg.begin(), neg.end());
    return {a.begin(), a.end()};
}

std::set<CharId> label_charset(std::span<const Label> labels, const std::set<CharId>& train_chars)
{
    std::set<CharId> out;
    for (const auto& l : labels)
        for (auto c : l)
            if (train_chars.count(c)) out.insert(c);
    return out;
}

BatchCharset sample_batch_charset(std::span<const Label> labels, const std::set<CharId>& train_chars, double f_s,
                                  std::size_t b_max, const TemplateAtlas& atlas, Rng& rng)
{
    if (!(f_s > 0.0 && f_s <= 1.0)) throw ConfigError("f_s must lie in (0, 1]");
    std::size_t widest = 0;
    for (auto c : train_chars) {
        if (atlas.template_count(c) == 0)
            throw ContractError("training character " + to_utf8(c) + " has no template in the atlas");
        widest = std::max(widest, atlas.template_count(c));
    }
    if (b_max < widest + 2)
        throw ConfigError("b_max " + std::to_string(b_max) + " is below the minimum " + std::to_string(widest + 2));

    const auto c_label = label_charset(labels, train_chars);
    std::vector<CharId> order(c_label.begin(), c_label.end());
    rng.shuffle(order);
    const auto k = static_cast<std::size_t>(std::floor(f_s * static_cast<double>(order.size())));
    order.resize(k);
    std::size_t used = 0;
    for (auto c : order) used += atlas.template_count(c);
    while (used > b_max) {
        used -= atlas.template_count(order.back());
        order.pop_back();
    }

    BatchCharset out;
    out.pos.insert(order.begin(), order.end());
    std::vector<CharId> rest;
    for (auto c : train_chars)
        if (!c_label.count(c)) rest.push_back(c);
    rng.shuffle(rest);
    for (auto c : rest) {
        const auto t = atlas.template_count(c);
        if (used + t > b_max) continue;
        out.neg.insert(c);
        used += t;
    }
    return out;
}

Label filter_labels(const Label& label, const std::set<CharId>& allowed)
{
    Label out;
    out.reserve(label.size() + 1);
    for (auto c : label) out.push_back(is_special(c) || allowed.count(c) ? c : kUnk);
    if (out.empty() || out.back() != kEos) out.push_back(kEos);
    return out;
}

Label filter_labels(const Label& label, const BatchCharset& batch) { return filter_labels(label, batch.all()); }

std::vector<std::size_t> target_columns(const Label& filtered, std::span<const CharId> chars)
{
    std::vector<std::size_t> t;
    t.reserve(filtered.size());
    for (auto c : filtered) {
        if (c == kEos) {
            t.push_back(chars.size());
        } else if (c == kUnk) {
            t.push_back(chars.size() + 1);
        } else {
            auto it = std::lower_bound(chars.begin(), chars.end(), c);
            if (it == chars.end() || *it != c) throw ContractError("character " + to_utf8(c) + " has no score column");
            t.push_back(static_cast<std::size_t>(it - chars.begin()));
        }
    }
    return t;
}

template <typename T>
Tensor<T> loss_ce(const Tensor<T>& A, std::span<const std::size_t> targets)
{
    if (targets.size() > A.dim(0))
        throw ContractError("label of " + std::to_string(targets.size()) + " steps exceeds l_max " +
                            std::to_string(A.dim(0)));
    return softmax_cross_entropy_rows(A, targets);
}

template <typename T>
Tensor<T> loss_emb(const Tensor<T>& P, double m_p)
{
    const auto g = matmul(transpose(P), P);
    return sum(zero_diagonal(relu(add_scalar(g, static_cast<T>(-m_p)))));
}

template <typename T>
Tensor<T> loss_total(const Tensor<T>& ce, const Tensor<T>& emb, double lambda)
{
    if (lambda < 0.0) throw ConfigError("lambda_emb must be non-negative");
    if (lambda == 0.0) return ce;
    return add(ce, mul_scalar(emb, static_cast<T>(lambda)));
}

#define OSTR_INSTANTIATE(T)                                                               \
    template Tensor<T> loss_ce<T>(const Tensor<T>&, std::span<const std::size_t>);        \
    template Tensor<T> loss_emb<T>(const Tensor<T>&, double);                             \
    template Tensor<T> loss_total<T>(const Tensor<T>&, const Tensor<T>&, double);

OSTR_INSTANTIATE(float)
OSTR_INSTANTIATE(double)

} // namespace ostr
