#pragma once

#include "ostr/rng.hpp"
#include "ostr/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace ostr {

template <typename T>
struct Conv2d {
    Tensor<T> weight; ///< [out, in, k, k]
    Tensor<T> bias;   ///< [out]
    std::size_t stride = 1;
    std::size_t pad = 0;

    /// He-normal weights, zero bias.
    static Conv2d make(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, Rng& rng);
    /// All-zero weights and bias.
    static Conv2d zeros(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad);

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct Linear {
    Tensor<T> weight; ///< [out, in]
    Tensor<T> bias;   ///< [out]

    static Linear make(std::size_t in, std::size_t out, Rng& rng);
    /// x has `in` elements; result has shape [out].
    Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Named handles onto trainable leaves. Handles alias the model's tensors.
template <typename T>
class ParameterSet {
public:
    void add(const std::string& name, const Tensor<T>& t);
    void add(const std::string& prefix, const Conv2d<T>& c);
    void add(const std::string& prefix, const Linear<T>& l);

    const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
    Tensor<T> get(const std::string& name) const;
    void zero_grad();
    std::size_t count() const;
    /// Global L2 norm of all gradients (missing grads count as zero).
    double grad_norm() const;

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

/// Stochastic gradient descent with heavy-ball momentum and optional decoupled
/// L2 weight decay. Velocity buffers are keyed by parameter name.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    /// Applies one update; gradients are scaled by grad_scale first.
    void step(ParameterSet<T>& params, double lr, double grad_scale = 1.0);

private:
    double momentum_;
    double weight_decay_;
    std::map<std::string, std::vector<T>> velocity_;
};

} // namespace ostr
