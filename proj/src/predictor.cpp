#include "ostr/predictor.hpp"

#include "ostr/bank.hpp"
#include "ostr/errors.hpp"

#include <map>

namespace ostr {

CaseGroups group_by_owner(std::span<const CharId> owners)
{
    std::map<CharId, std::vector<std::size_t>> by;
    for (std::size_t j = 0; j < owners.size(); ++j) by[owners[j]].push_back(j);
    CaseGroups g;
    for (auto& [c, cols] : by) {
        g.chars.push_back(c);
        g.groups.push_back(std::move(cols));
    }
    return g;
}

template <typename T>
Tensor<T> similarity(const Tensor<T>& F, const Tensor<T>& P, const Tensor<T>& alpha, Metric metric)
{
    if (F.rank() != 2 || P.rank() != 2 || F.dim(1) != P.dim(0))
        throw ContractError("similarity: feature dim " + shape_str(F.shape()) + " does not match prototypes " +
                            shape_str(P.shape()));
    const auto f = metric == Metric::ScaledCosine ? l2_normalize_rows(F) : F;
    return scale(matmul(f, P), alpha);
}

template <typename T>
Tensor<T> reduce_cases(const Tensor<T>& s_case, const std::vector<std::vector<std::size_t>>& groups)
{
    return column_group_max(s_case, groups);
}

template <typename T>
Tensor<T> append_reject(const Tensor<T>& s_char, const Tensor<T>& s_minus)
{
    return append_scalar_column(s_char, s_minus);
}

template <typename T>
Tensor<T> score(const Tensor<T>& F, const Tensor<T>& P, const Tensor<T>& eos, const CaseGroups& groups,
                const Tensor<T>& alpha, const Tensor<T>& s_minus, Metric metric)
{
    const std::size_t d = eos.numel();
    const std::size_t n = P.dim(1);
    auto ext = concat_cols(P, reshape(eos, {d, 1}));
    auto g = groups.groups;
    g.push_back({n});
    return append_reject(reduce_cases(similarity(F, ext, alpha, metric), g), s_minus);
}

bool Decoding::rejected() const
{
    for (auto c : labels)
        if (c == kUnk) return true;
    return false;
}

template <typename T>
Decoding decode(const Tensor<T>& A, std::span<const CharId> chars)
{
    const std::size_t L = A.dim(0), n = A.dim(1);
    if (n != chars.size() + 2)
        throw ContractError("decode: score matrix has " + std::to_string(n) + " columns for " +
                            std::to_string(chars.size()) + " characters");
    Decoding out;
    out.stopped_at = L;
    for (std::size_t l = 0; l < L; ++l) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (A[l * n + k] > A[l * n + best]) best = k;
        if (best == chars.size()) {
            out.stopped_at = l;
            break;
        }
        out.labels.push_back(best == chars.size() + 1 ? kUnk : chars[best]);
    }
    return out;
}

Decoding predict_with_charset(const Tensor<float>& F, const PrototypeBank& bank, const Tensor<float>& alpha,
                              const Tensor<float>& s_minus, Metric metric, const std::set<CharId>& in_set)
{
    if (in_set.empty()) throw ContractError("predict_with_charset: empty character set");
    const auto cols = bank.columns_of(in_set);
    std::vector<CharId> owners;
    for (auto j : cols) owners.push_back(bank.phi(j));
    const auto groups = group_by_owner(owners);
    if (groups.chars.size() != in_set.size())
        throw ContractError("predict_with_charset: some requested characters have no prototypes");
    auto A = score(F, bank.matrix(cols), bank.eos_tensor(), groups, alpha, s_minus, metric);
    return decode(A, groups.chars);
}

#define OSTR_INSTANTIATE(T)                                                                                      \
    template Tensor<T> similarity<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Metric);              \
    template Tensor<T> reduce_cases<T>(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&);          \
    template Tensor<T> append_reject<T>(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> score<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const CaseGroups&,         \
                                const Tensor<T>&, const Tensor<T>&, Metric);                                     \
    template Decoding decode<T>(const Tensor<T>&, std::span<const CharId>);

OSTR_INSTANTIATE(float)
OSTR_INSTANTIATE(double)

} // namespace ostr
