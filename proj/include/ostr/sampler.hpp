#pragma once

#include "ostr/atlas.hpp"
#include "ostr/rng.hpp"
#include "ostr/tensor.hpp"
#include "ostr/text.hpp"

#include <set>
#include <span>
#include <vector>

namespace ostr {

/// Characters whose prototypes take part in one training iteration.
struct BatchCharset {
    std::set<CharId> pos; ///< sampled from the characters present in the batch labels
    std::set<CharId> neg; ///< sampled from the training characters absent from the labels

    /// pos and neg plus EOS and UNK.
    std::set<CharId> all() const;
    /// pos and neg in ascending order.
    std::vector<CharId> active() const;
};

/// Distinct characters of `labels` that belong to `train_chars`.
std::set<CharId> label_charset(std::span<const Label> labels, const std::set<CharId>& train_chars);

/// Uniformly samples floor(f_s * |C_label|) label characters (fewer if their
/// templates exceed b_max) and fills the remaining template budget with
/// characters from C_train \ C_label in random order.
BatchCharset sample_batch_charset(std::span<const Label> labels, const std::set<CharId>& train_chars, double f_s,
                                  std::size_t b_max, const TemplateAtlas& atlas, Rng& rng);

/// Characters outside `batch.all()` become UNK and EOS is appended unless the
/// label already ends with it.
Label filter_labels(const Label& label, const BatchCharset& batch);
Label filter_labels(const Label& label, const std::set<CharId>& allowed);

/// Column index of every symbol of a filtered label in a score matrix whose
/// columns are `chars` (ascending), EOS, UNK.
std::vector<std::size_t> target_columns(const Label& filtered, std::span<const CharId> chars);

/// Mean softmax cross-entropy over the first targets.size() rows of A.
template <typename T>
Tensor<T> loss_ce(const Tensor<T>& A, std::span<const std::size_t> targets);

/// Sum over ordered pairs i != j of relu(P_i . P_j - m_p) for P[d,n].
template <typename T>
Tensor<T> loss_emb(const Tensor<T>& P, double m_p);

/// L_ce + lambda * L_emb.
template <typename T>
Tensor<T> loss_total(const Tensor<T>& ce, const Tensor<T>& emb, double lambda);

} // namespace ostr
