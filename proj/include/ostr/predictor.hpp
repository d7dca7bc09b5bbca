#pragma once

#include "ostr/model.hpp"
#include "ostr/tensor.hpp"
#include "ostr/text.hpp"

#include <set>
#include <span>
#include <vector>

namespace ostr {

class PrototypeBank;

/// Character columns of a score matrix: chars ascending, groups[i] lists the
/// template columns owned by chars[i].
struct CaseGroups {
    std::vector<CharId> chars;
    std::vector<std::vector<std::size_t>> groups;
};

CaseGroups group_by_owner(std::span<const CharId> owners);

/// alpha * F P, or alpha * normalize_rows(F) P for the cosine variant. F[L,d], P[d,n] -> [L,n].
template <typename T>
Tensor<T> similarity(const Tensor<T>& F, const Tensor<T>& P, const Tensor<T>& alpha, Metric metric);

/// Per-group column maximum; the caller appends the EOS column as the last group.
template <typename T>
Tensor<T> reduce_cases(const Tensor<T>& s_case, const std::vector<std::vector<std::size_t>>& groups);

/// Appends s_minus as the rejection column.
template <typename T>
Tensor<T> append_reject(const Tensor<T>& s_char, const Tensor<T>& s_minus);

/// Full scoring: prototypes P[d,n] with owners grouped by `groups`, plus the EOS
/// prototype -> A[L, |groups| + 2] (characters, EOS, UNK).
template <typename T>
Tensor<T> score(const Tensor<T>& F, const Tensor<T>& P, const Tensor<T>& eos, const CaseGroups& groups,
                const Tensor<T>& alpha, const Tensor<T>& s_minus, Metric metric);

struct Decoding {
    Label labels;
    std::size_t stopped_at = 0;
    bool rejected() const;
};

/// Argmax per row of A[L, |chars| + 2]; ties go to the lowest column.
template <typename T>
Decoding decode(const Tensor<T>& A, std::span<const CharId> chars);

/// Decodes with the bank restricted to the characters of `in_set`.
Decoding predict_with_charset(const Tensor<float>& F, const PrototypeBank& bank, const Tensor<float>& alpha,
                              const Tensor<float>& s_minus, Metric metric, const std::set<CharId>& in_set);

} // namespace ostr
