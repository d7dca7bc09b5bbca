#include "ostr/nn.hpp"

#include "ostr/errors.hpp"

#include <cmath>

namespace ostr {

template <typename T>
Conv2d<T> Conv2d<T>::make(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, Rng& rng)
{
    Conv2d c;
    const double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
    std::vector<T> w(out * in * k * k);
    for (auto& v : w) v = static_cast<T>(rng.normal() * std);
    c.weight = Tensor<T>::from({out, in, k, k}, std::move(w), true);
    c.bias = Tensor<T>::zeros({out}, true);
    c.stride = stride;
    c.pad = pad;
    return c;
}

template <typename T>
Conv2d<T> Conv2d<T>::zeros(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad)
{
    Conv2d c;
    c.weight = Tensor<T>::zeros({out, in, k, k}, true);
    c.bias = Tensor<T>::zeros({out}, true);
    c.stride = stride;
    c.pad = pad;
    return c;
}

template <typename T>
Linear<T> Linear<T>::make(std::size_t in, std::size_t out, Rng& rng)
{
    Linear l;
    const double std = std::sqrt(1.0 / static_cast<double>(in));
    std::vector<T> w(out * in);
    for (auto& v : w) v = static_cast<T>(rng.normal() * std);
    l.weight = Tensor<T>::from({out, in}, std::move(w), true);
    l.bias = Tensor<T>::zeros({out}, true);
    return l;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const
{
    const std::size_t out = weight.dim(0), in = weight.dim(1);
    auto y = matmul(weight, reshape(x, {in, 1}));
    return add(reshape(y, {out}), bias);
}

template <typename T>
void ParameterSet<T>::add(const std::string& name, const Tensor<T>& t)
{
    for (const auto& [n, _] : entries_)
        if (n == name) throw ContractError("duplicate parameter name " + name);
    entries_.emplace_back(name, t);
}

template <typename T>
void ParameterSet<T>::add(const std::string& prefix, const Conv2d<T>& c)
{
    add(prefix + ".weight", c.weight);
    add(prefix + ".bias", c.bias);
}

template <typename T>
void ParameterSet<T>::add(const std::string& prefix, const Linear<T>& l)
{
    add(prefix + ".weight", l.weight);
    add(prefix + ".bias", l.bias);
}

template <typename T>
Tensor<T> ParameterSet<T>::get(const std::string& name) const
{
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw ContractError("unknown parameter " + name);
}

template <typename T>
void ParameterSet<T>::zero_grad()
{
    for (auto& [_, t] : entries_) t.zero_grad();
}

template <typename T>
std::size_t ParameterSet<T>::count() const
{
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
}

template <typename T>
double ParameterSet<T>::grad_norm() const
{
    double s = 0;
    for (const auto& [_, t] : entries_) {
        if (!t.has_grad()) continue;
        for (auto g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(s);
}

template <typename T>
void SgdMomentum<T>::step(ParameterSet<T>& params, double lr, double grad_scale)
{
    for (auto& [name, t] : params.entries()) {
        auto& v = velocity_[name];
        if (v.size() != t.numel()) v.assign(t.numel(), T(0));
        auto param = const_cast<Tensor<T>&>(t);
        auto w = param.mutable_data();
        const bool has = t.has_grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            double g = has ? static_cast<double>(t.grad()[i]) * grad_scale : 0.0;
            g += weight_decay_ * static_cast<double>(w[i]);
            v[i] = static_cast<T>(momentum_ * static_cast<double>(v[i]) + g);
            w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * static_cast<double>(v[i]));
        }
    }
}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Linear<float>;
template struct Linear<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template class SgdMomentum<float>;
template class SgdMomentum<double>;

} // namespace ostr
