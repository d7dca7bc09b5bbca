#include "ostr/tensor.hpp"

#include "ostr/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace ostr {

namespace {

std::atomic<std::uint64_t> g_seq{1};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<std::shared_ptr<TensorNode<T>>> parents,
                      const char* op)
{
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    node->op = op;
    bool rg = false;
    for (const auto& p : parents) rg = rg || (p && p->requires_grad);
    node->requires_grad = rg;
    if (rg) node->parents = std::move(parents);
    return Tensor<T>(std::move(node));
}

void require(bool cond, const std::string& msg)
{
    if (!cond) throw DimensionError(msg);
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op)
{
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

template <typename T>
bool wants_grad(const std::shared_ptr<TensorNode<T>>& p)
{
    return p && p->requires_grad;
}

// im2col for one image: cols[(c*kh+i)*kw+j, oy*ow+ox]
template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* cols)
{
    const std::size_t n = oh * ow;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
                T* row = cols + ((c * kh + i) * kw + j) * n;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                    T* out = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<long>(H)) {
                        std::fill(out, out + ow, T(0));
                        continue;
                    }
                    const T* src = x + (c * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                        out[ox] = (ix < 0 || ix >= static_cast<long>(W)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* dx)
{
    const std::size_t n = oh * ow;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
                const T* row = cols + ((c * kh + i) * kw + j) * n;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    T* dst = dx + (c * H + static_cast<std::size_t>(iy)) * W;
                    const T* in = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                        if (ix >= 0 && ix < static_cast<long>(W)) dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

} // namespace

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad)
{
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad)
{
    if (shape_numel(shape) != values.size())
        throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
    return from({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const
{
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const
{
    return from(shape(), node_->value, false);
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const
{
    std::vector<U> v(node_->value.begin(), node_->value.end());
    return Tensor<U>::from(shape(), std::move(v), requires_grad());
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
ComputationTape<T>::ComputationTape(const Tensor<T>& loss) : loss_(loss)
{
    require_defined(loss, "backward");
    std::vector<TensorNode<T>*> stack{loss.node().get()};
    std::unordered_set<TensorNode<T>*> seen{loss.node().get()};
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        nodes_.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    // Creation order is an execution order: parents always precede children.
    std::sort(nodes_.begin(), nodes_.end(), [](auto* a, auto* b) { return a->seq < b->seq; });
}

template <typename T>
void ComputationTape<T>::backward()
{
    auto& root = *loss_.node();
    if (root.value.size() != 1) throw DimensionError("backward() requires a scalar loss, got " + shape_str(root.shape));
    if (!root.requires_grad) return;
    root.ensure_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto* n = *it;
        if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
}

template <typename T>
std::vector<std::string> ComputationTape<T>::op_names() const
{
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (auto* n : nodes_) out.emplace_back(n->op);
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, Pointwise fn, T scalar)
{
    require_defined(x, "pointwise");
    const auto in = x.data();
    std::vector<T> out(in.size());
    const char* name = "pointwise";
    switch (fn) {
    case Pointwise::Sigmoid:
        name = "sigmoid";
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-in[i]));
        break;
    case Pointwise::Relu:
        name = "relu";
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
        break;
    case Pointwise::AddScalar:
        name = "add_scalar";
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + scalar;
        break;
    case Pointwise::MulScalar:
        name = "mul_scalar";
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * scalar;
        break;
    }
    auto r = make_result<T>(x.shape(), std::move(out), {x.node()}, name);
    if (r.requires_grad()) {
        r.node()->backward = [fn, scalar](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            auto& g = p.ensure_grad();
            const auto& go = self.grad;
            switch (fn) {
            case Pointwise::Sigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * self.value[i] * (T(1) - self.value[i]);
                break;
            case Pointwise::Relu:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (p.value[i] > T(0)) g[i] += go[i];
                break;
            case Pointwise::AddScalar:
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
                break;
            case Pointwise::MulScalar:
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * scalar;
                break;
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require_defined(a, "add");
    require_defined(b, "add");
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto r = make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "add");
    if (r.requires_grad()) {
        r.node()->backward = [](TensorNode<T>& self) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_defined(a, "mul");
    require_defined(b, "mul");
    require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto r = make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "mul");
    if (r.requires_grad()) {
        r.node()->backward = [](TensorNode<T>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            if (a.requires_grad) {
                auto& g = a.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value[i];
            }
            if (b.requires_grad) {
                auto& g = b.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value[i];
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s)
{
    require_defined(x, "scale");
    require_defined(s, "scale");
    require(s.numel() == 1, "scale: factor must hold one element, got " + shape_str(s.shape()));
    const T k = s[0];
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k;
    auto r = make_result<T>(x.shape(), std::move(out), {x.node(), s.node()}, "scale");
    if (r.requires_grad()) {
        r.node()->backward = [](TensorNode<T>& self) {
            auto& x = *self.parents[0];
            auto& s = *self.parents[1];
            const T k = s.value[0];
            if (x.requires_grad) {
                auto& g = x.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
            }
            if (s.requires_grad) {
                T acc = 0;
                for (std::size_t i = 0; i < x.value.size(); ++i) acc += self.grad[i] * x.value[i];
                s.ensure_grad()[0] += acc;
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x)
{
    require_defined(x, "sum");
    T acc = 0;
    for (auto v : x.data()) acc += v;
    auto r = make_result<T>({1}, {acc}, {x.node()}, "sum");
    if (r.requires_grad()) {
        r.node()->backward = [](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (auto& v : g) v += self.grad[0];
        };
    }
    return r;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x)
{
    require(x.numel() > 0, "mean of empty tensor");
    return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs)
{
    require(!xs.empty(), "add_n: empty list");
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::vector<T> out(xs[0].numel(), T(0));
    for (const auto& x : xs) {
        require_defined(x, "add_n");
        require(x.shape() == xs[0].shape(), "add_n: shape mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
        parents.push_back(x.node());
    }
    auto r = make_result<T>(xs[0].shape(), std::move(out), std::move(parents), "add_n");
    if (r.requires_grad()) {
        r.node()->backward = [](TensorNode<T>& self) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    require_defined(x, "reshape");
    require(shape_numel(shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto r = make_result<T>(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {x.node()},
                            "reshape");
    if (r.requires_grad()) {
        r.node()->backward = [](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        };
    }
    return r;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x)
{
    require_defined(x, "transpose");
    require(x.rank() == 2, "transpose expects a matrix, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(m * n);
    MapMat<T>(out.data(), n, m) = CMapMat<T>(x.data().data(), m, n).transpose();
    auto r = make_result<T>({n, m}, std::move(out), {x.node()}, "transpose");
    if (r.requires_grad()) {
        r.node()->backward = [m, n](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            MapMat<T>(g.data(), m, n) += CMapMat<T>(self.grad.data(), n, m).transpose();
        };
    }
    return r;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
            "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    MapMat<T>(out.data(), m, n).noalias() = CMapMat<T>(a.data().data(), m, k) * CMapMat<T>(b.data().data(), k, n);
    auto r = make_result<T>({m, n}, std::move(out), {a.node(), b.node()}, "matmul");
    if (r.requires_grad()) {
        r.node()->backward = [m, k, n](TensorNode<T>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            CMapMat<T> g(self.grad.data(), m, n);
            if (a.requires_grad)
                MapMat<T>(a.ensure_grad().data(), m, k).noalias() += g * CMapMat<T>(b.value.data(), k, n).transpose();
            if (b.requires_grad)
                MapMat<T>(b.ensure_grad().data(), k, n).noalias() += CMapMat<T>(a.value.data(), m, k).transpose() * g;
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride, std::size_t pad)
{
    require_defined(x, "conv2d");
    require_defined(w, "conv2d");
    require(x.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
    require(w.rank() == 4, "conv2d: kernel must be [K,C,kh,kw], got " + shape_str(w.shape()));
    require(stride >= 1, "conv2d: stride must be >= 1");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(1) == C, "conv2d: kernel expects " + std::to_string(w.dim(1)) + " channels, input has " +
                               std::to_string(C));
    require(kh <= H + 2 * pad && kw <= W + 2 * pad,
            "conv2d: kernel " + shape_str(w.shape()) + " does not fit padded input " + shape_str(x.shape()));
    require(pad < kh && pad < kw, "conv2d: padding must be smaller than the kernel");
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.numel() == K, "conv2d: bias length must equal output channels");
    const std::size_t oh = (H + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (W + 2 * pad - kw) / stride + 1;
    const std::size_t n = oh * ow, ck = C * kh * kw;

    std::vector<T> cols(ck * n);
    im2col(x.data().data(), C, H, W, kh, kw, stride, pad, oh, ow, cols.data());
    std::vector<T> out(K * n);
    MapMat<T> o(out.data(), K, n);
    o.noalias() = CMapMat<T>(w.data().data(), K, ck) * CMapMat<T>(cols.data(), ck, n);
    if (has_bias) {
        for (std::size_t k = 0; k < K; ++k) o.row(k).array() += bias[k];
    }
    std::vector<std::shared_ptr<TensorNode<T>>> parents{x.node(), w.node()};
    if (has_bias) parents.push_back(bias.node());
    auto r = make_result<T>({K, oh, ow}, std::move(out), std::move(parents), "conv2d");
    if (r.requires_grad()) {
        r.node()->backward = [=](TensorNode<T>& self) {
            auto& xn = *self.parents[0];
            auto& wn = *self.parents[1];
            CMapMat<T> g(self.grad.data(), K, n);
            if (wn.requires_grad) {
                // Recompute the column buffer rather than holding it across the graph.
                std::vector<T> c(ck * n);
                im2col(xn.value.data(), C, H, W, kh, kw, stride, pad, oh, ow, c.data());
                MapMat<T>(wn.ensure_grad().data(), K, ck).noalias() += g * CMapMat<T>(c.data(), ck, n).transpose();
            }
            if (xn.requires_grad) {
                std::vector<T> dc(ck * n);
                MapMat<T>(dc.data(), ck, n).noalias() = CMapMat<T>(wn.value.data(), K, ck).transpose() * g;
                col2im(dc.data(), C, H, W, kh, kw, stride, pad, oh, ow, xn.ensure_grad().data());
            }
            if (has_bias && self.parents[2]->requires_grad) {
                auto& gb = self.parents[2]->ensure_grad();
                for (std::size_t k = 0; k < K; ++k) {
                    T acc = 0;
                    for (std::size_t i = 0; i < n; ++i) acc += self.grad[k * n + i];
                    gb[k] += acc;
                }
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x)
{
    require_defined(x, "global_avg_pool");
    require(x.rank() == 3, "global_avg_pool expects [C,H,W]");
    const std::size_t C = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<T> out(C, T(0));
    for (std::size_t c = 0; c < C; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += x[c * hw + i];
        out[c] = acc / static_cast<T>(hw);
    }
    auto r = make_result<T>({C}, std::move(out), {x.node()}, "global_avg_pool");
    if (r.requires_grad()) {
        r.node()->backward = [C, hw](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t c = 0; c < C; ++c) {
                const T v = self.grad[c] / static_cast<T>(hw);
                for (std::size_t i = 0; i < hw; ++i) g[c * hw + i] += v;
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Normalization and losses

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v, NormMode mode)
{
    require_defined(v, "l2_normalize");
    T sq = 0;
    for (auto x : v.data()) sq += x * x;
    const T norm = std::sqrt(sq);
    const T eps = static_cast<T>(kNormEpsilon);
    if (!std::isfinite(norm)) throw DegenerateInputError("l2_normalize: non-finite input");
    if (mode == NormMode::Strict && norm <= eps)
        throw DegenerateInputError("l2_normalize: vector norm " + std::to_string(static_cast<double>(norm)) +
                                   " is below the degenerate-input floor");
    const bool floored = norm <= eps;
    const T denom = floored ? eps : norm;
    std::vector<T> out(v.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] / denom;
    auto r = make_result<T>(v.shape(), std::move(out), {v.node()}, "l2_normalize");
    if (r.requires_grad()) {
        r.node()->backward = [denom, floored](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            if (floored) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / denom;
                return;
            }
            // (I - y y^T) g / |v|
            T dot = 0;
            for (std::size_t i = 0; i < g.size(); ++i) dot += self.value[i] * self.grad[i];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += (self.grad[i] - self.value[i] * dot) / denom;
        };
    }
    return r;
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x)
{
    require_defined(x, "l2_normalize_rows");
    require(x.rank() == 2, "l2_normalize_rows expects a matrix");
    const std::size_t m = x.dim(0), n = x.dim(1);
    const T eps = static_cast<T>(kNormEpsilon);
    std::vector<T> out(m * n), denom(m);
    for (std::size_t i = 0; i < m; ++i) {
        T sq = 0;
        for (std::size_t j = 0; j < n; ++j) sq += x[i * n + j] * x[i * n + j];
        denom[i] = std::max(std::sqrt(sq), eps);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] / denom[i];
    }
    auto r = make_result<T>({m, n}, std::move(out), {x.node()}, "l2_normalize_rows");
    if (r.requires_grad()) {
        r.node()->backward = [m, n, denom = std::move(denom), eps](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = self.value.data() + i * n;
                const T* go = self.grad.data() + i * n;
                if (denom[i] <= eps) {
                    for (std::size_t j = 0; j < n; ++j) g[i * n + j] += go[j] / denom[i];
                    continue;
                }
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += y[j] * go[j];
                for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (go[j] - y[j] * dot) / denom[i];
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& onehot)
{
    require_defined(logits, "softmax_cross_entropy");
    require_defined(onehot, "softmax_cross_entropy");
    require(logits.numel() == onehot.numel() && logits.numel() > 0,
            "softmax_cross_entropy: logits and onehot lengths differ");
    std::size_t target = 0, ones = 0;
    for (std::size_t i = 0; i < onehot.numel(); ++i) {
        if (onehot[i] == T(1)) {
            target = i;
            ++ones;
        } else if (onehot[i] != T(0)) {
            ones = 2;
        }
    }
    if (ones != 1) throw ContractError("softmax_cross_entropy: onehot must contain exactly one 1 and zeros elsewhere");
    auto row = reshape(logits, {1, logits.numel()});
    const std::size_t targets[1] = {target};
    return softmax_cross_entropy_rows(row, std::span<const std::size_t>(targets, 1));
}

template <typename T>
Tensor<T> softmax_cross_entropy_rows(const Tensor<T>& logits, std::span<const std::size_t> targets)
{
    require_defined(logits, "softmax_cross_entropy_rows");
    require(logits.rank() == 2, "softmax_cross_entropy_rows expects a matrix");
    const std::size_t m = logits.dim(0), n = logits.dim(1);
    const std::size_t rows = targets.size();
    if (rows == 0 || rows > m)
        throw ContractError("softmax_cross_entropy_rows: " + std::to_string(rows) + " targets for " +
                            std::to_string(m) + " rows");
    std::vector<T> probs(rows * n);
    T total = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (targets[i] >= n) throw ContractError("softmax_cross_entropy_rows: target index out of range");
        const T* z = logits.data().data() + i * n;
        const T mx = *std::max_element(z, z + n);
        T se = 0;
        for (std::size_t j = 0; j < n; ++j) se += std::exp(z[j] - mx);
        const T lse = mx + std::log(se);
        total += lse - z[targets[i]];
        for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(z[j] - lse);
    }
    const T inv = T(1) / static_cast<T>(rows);
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    auto r = make_result<T>({1}, {total * inv}, {logits.node()}, "softmax_cross_entropy");
    if (r.requires_grad()) {
        r.node()->backward = [n, inv, probs = std::move(probs), tg = std::move(tg)](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            const T go = self.grad[0] * inv;
            for (std::size_t i = 0; i < tg.size(); ++i) {
                for (std::size_t j = 0; j < n; ++j) g[i * n + j] += go * probs[i * n + j];
                g[i * n + tg[i]] -= go;
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x)
{
    require_defined(x, "softmax_rows");
    require(x.rank() == 2, "softmax_rows expects a matrix");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const T* z = x.data().data() + i * n;
        const T mx = *std::max_element(z, z + n);
        T se = 0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(z[j] - mx);
            se += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= se;
    }
    auto r = make_result<T>({m, n}, std::move(out), {x.node()}, "softmax_rows");
    if (r.requires_grad()) {
        r.node()->backward = [m, n](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = self.value.data() + i * n;
                const T* go = self.grad.data() + i * n;
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += y[j] * go[j];
                for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (go[j] - dot);
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Column manipulation

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b)
{
    require_defined(a, "concat_cols");
    require_defined(b, "concat_cols");
    require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
            "concat_cols: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), na = a.dim(1), nb = b.dim(1), n = na + nb;
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.data().data() + i * na, na, out.data() + i * n);
        std::copy_n(b.data().data() + i * nb, nb, out.data() + i * n + na);
    }
    auto r = make_result<T>({m, n}, std::move(out), {a.node(), b.node()}, "concat_cols");
    if (r.requires_grad()) {
        r.node()->backward = [m, na, nb, n](TensorNode<T>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            if (a.requires_grad) {
                auto& g = a.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
            }
            if (b.requires_grad) {
                auto& g = b.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> stack_columns(const std::vector<Tensor<T>>& cols)
{
    require(!cols.empty(), "stack_columns: no columns");
    const std::size_t d = cols[0].numel(), n = cols.size();
    std::vector<T> out(d * n);
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    for (std::size_t j = 0; j < n; ++j) {
        require_defined(cols[j], "stack_columns");
        require(cols[j].numel() == d, "stack_columns: column lengths differ");
        for (std::size_t i = 0; i < d; ++i) out[i * n + j] = cols[j][i];
        parents.push_back(cols[j].node());
    }
    auto r = make_result<T>({d, n}, std::move(out), std::move(parents), "stack_columns");
    if (r.requires_grad()) {
        r.node()->backward = [d, n](TensorNode<T>& self) {
            for (std::size_t j = 0; j < n; ++j) {
                auto& p = *self.parents[j];
                if (!p.requires_grad) continue;
                auto& g = p.ensure_grad();
                for (std::size_t i = 0; i < d; ++i) g[i] += self.grad[i * n + j];
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> select_columns(const Tensor<T>& x, std::span<const std::size_t> cols)
{
    require_defined(x, "select_columns");
    require(x.rank() == 2, "select_columns expects a matrix");
    const std::size_t m = x.dim(0), n = x.dim(1), k = cols.size();
    for (auto c : cols) require(c < n, "select_columns: column index out of range");
    std::vector<T> out(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i * n + cols[j]];
    std::vector<std::size_t> idx(cols.begin(), cols.end());
    auto r = make_result<T>({m, k}, std::move(out), {x.node()}, "select_columns");
    if (r.requires_grad()) {
        r.node()->backward = [m, n, k, idx = std::move(idx)](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j) g[i * n + idx[j]] += self.grad[i * k + j];
        };
    }
    return r;
}

template <typename T>
Tensor<T> column_group_max(const Tensor<T>& x, const std::vector<std::vector<std::size_t>>& groups)
{
    require_defined(x, "column_group_max");
    require(x.rank() == 2, "column_group_max expects a matrix");
    const std::size_t m = x.dim(0), n = x.dim(1), G = groups.size();
    std::vector<T> out(m * G);
    std::vector<std::size_t> arg(m * G);
    for (std::size_t g = 0; g < G; ++g) {
        if (groups[g].empty()) throw ContractError("column_group_max: empty group " + std::to_string(g));
        for (auto c : groups[g]) require(c < n, "column_group_max: column index out of range");
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t g = 0; g < G; ++g) {
            std::size_t best = groups[g][0];
            for (auto c : groups[g])
                if (x[i * n + c] > x[i * n + best]) best = c;
            out[i * G + g] = x[i * n + best];
            arg[i * G + g] = best;
        }
    }
    auto r = make_result<T>({m, G}, std::move(out), {x.node()}, "column_group_max");
    if (r.requires_grad()) {
        r.node()->backward = [m, n, G, arg = std::move(arg)](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t k = 0; k < G; ++k) g[i * n + arg[i * G + k]] += self.grad[i * G + k];
        };
    }
    return r;
}

template <typename T>
Tensor<T> append_scalar_column(const Tensor<T>& x, const Tensor<T>& s)
{
    require_defined(x, "append_scalar_column");
    require_defined(s, "append_scalar_column");
    require(x.rank() == 2, "append_scalar_column expects a matrix");
    require(s.numel() == 1, "append_scalar_column: scalar must hold one element");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(m * (n + 1));
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(x.data().data() + i * n, n, out.data() + i * (n + 1));
        out[i * (n + 1) + n] = s[0];
    }
    auto r = make_result<T>({m, n + 1}, std::move(out), {x.node(), s.node()}, "append_scalar_column");
    if (r.requires_grad()) {
        r.node()->backward = [m, n](TensorNode<T>& self) {
            auto& x = *self.parents[0];
            auto& s = *self.parents[1];
            if (x.requires_grad) {
                auto& g = x.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * (n + 1) + j];
            }
            if (s.requires_grad) {
                T acc = 0;
                for (std::size_t i = 0; i < m; ++i) acc += self.grad[i * (n + 1) + n];
                s.ensure_grad()[0] += acc;
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> zero_diagonal(const Tensor<T>& x)
{
    require_defined(x, "zero_diagonal");
    require(x.rank() == 2 && x.dim(0) == x.dim(1), "zero_diagonal expects a square matrix");
    const std::size_t n = x.dim(0);
    std::vector<T> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] = T(0);
    auto r = make_result<T>({n, n}, std::move(out), {x.node()}, "zero_diagonal");
    if (r.requires_grad()) {
        r.node()->backward = [n](TensorNode<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (i != j) g[i * n + j] += self.grad[i * n + j];
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Rectification primitives

template <typename T>
Tensor<T> integrate_density(const Tensor<T>& dx, const Tensor<T>& dy)
{
    require_defined(dx, "integrate_density");
    require_defined(dy, "integrate_density");
    require(dx.rank() == 2 && dx.shape() == dy.shape(), "integrate_density: dx and dy must be matching [H,W]");
    const std::size_t H = dx.dim(0), W = dx.dim(1);
    std::vector<T> out(H * W * 2);
    std::vector<T> sx(H), sy(W);
    for (std::size_t h = 0; h < H; ++h) {
        T total = 0;
        for (std::size_t w = 0; w < W; ++w) total += dx[h * W + w];
        sx[h] = total;
        T run = 0;
        for (std::size_t w = 0; w < W; ++w) {
            const T d = dx[h * W + w];
            out[(h * W + w) * 2] = static_cast<T>(W) * (run + d / T(2)) / total;
            run += d;
        }
    }
    for (std::size_t w = 0; w < W; ++w) {
        T total = 0;
        for (std::size_t h = 0; h < H; ++h) total += dy[h * W + w];
        sy[w] = total;
        T run = 0;
        for (std::size_t h = 0; h < H; ++h) {
            const T d = dy[h * W + w];
            out[(h * W + w) * 2 + 1] = static_cast<T>(H) * (run + d / T(2)) / total;
            run += d;
        }
    }
    auto r = make_result<T>({H, W, 2}, std::move(out), {dx.node(), dy.node()}, "integrate_density");
    if (r.requires_grad()) {
        r.node()->backward = [H, W, sx = std::move(sx), sy = std::move(sy)](TensorNode<T>& self) {
            auto& dxn = *self.parents[0];
            auto& dyn = *self.parents[1];
            const auto& go = self.grad;
            const auto& I = self.value;
            // I_w = N c_w / S with c_w = sum_{i<w} D_i + D_w / 2, so
            // dI_w/dD_k = N a_wk / S - I_w / S where a_wk = 1 (k<w), 1/2 (k=w).
            if (dxn.requires_grad) {
                auto& g = dxn.ensure_grad();
                for (std::size_t h = 0; h < H; ++h) {
                    T common = 0;
                    for (std::size_t w = 0; w < W; ++w) common += go[(h * W + w) * 2] * I[(h * W + w) * 2];
                    T suffix = 0;
                    for (std::size_t w = W; w-- > 0;) {
                        const T gw = go[(h * W + w) * 2];
                        g[h * W + w] += (static_cast<T>(W) * (suffix + gw / T(2)) - common) / sx[h];
                        suffix += gw;
                    }
                }
            }
            if (dyn.requires_grad) {
                auto& g = dyn.ensure_grad();
                for (std::size_t w = 0; w < W; ++w) {
                    T common = 0;
                    for (std::size_t h = 0; h < H; ++h) common += go[(h * W + w) * 2 + 1] * I[(h * W + w) * 2 + 1];
                    T suffix = 0;
                    for (std::size_t h = H; h-- > 0;) {
                        const T gh = go[(h * W + w) * 2 + 1];
                        g[h * W + w] += (static_cast<T>(H) * (suffix + gh / T(2)) - common) / sy[w];
                        suffix += gh;
                    }
                }
            }
        };
    }
    return r;
}

namespace {

struct BilinearTap {
    std::size_t x0, x1, y0, y1;
    double fx, fy;
    bool clamp_x, clamp_y;
};

template <typename T>
BilinearTap bilinear_tap(T u, T v, std::size_t W, std::size_t H)
{
    // Pixel-center convention: coordinate u addresses index u - 0.5.
    BilinearTap t{};
    double x = static_cast<double>(u) - 0.5;
    double y = static_cast<double>(v) - 0.5;
    t.clamp_x = x <= 0.0 || x >= static_cast<double>(W - 1);
    t.clamp_y = y <= 0.0 || y >= static_cast<double>(H - 1);
    x = std::clamp(x, 0.0, static_cast<double>(W - 1));
    y = std::clamp(y, 0.0, static_cast<double>(H - 1));
    t.x0 = static_cast<std::size_t>(std::floor(x));
    t.y0 = static_cast<std::size_t>(std::floor(y));
    t.x1 = std::min(t.x0 + 1, W - 1);
    t.y1 = std::min(t.y0 + 1, H - 1);
    t.fx = x - static_cast<double>(t.x0);
    t.fy = y - static_cast<double>(t.y0);
    return t;
}

} // namespace

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& m, const Tensor<T>& coords)
{
    require_defined(m, "grid_sample");
    require_defined(coords, "grid_sample");
    require(m.rank() == 3, "grid_sample: feature map must be [C,H,W]");
    require(coords.rank() == 3 && coords.dim(2) == 2, "grid_sample: coordinates must be [Ho,Wo,2]");
    const std::size_t C = m.dim(0), H = m.dim(1), W = m.dim(2);
    const std::size_t Ho = coords.dim(0), Wo = coords.dim(1), n = Ho * Wo;
    std::vector<BilinearTap> taps(n);
    for (std::size_t p = 0; p < n; ++p) taps[p] = bilinear_tap(coords[p * 2], coords[p * 2 + 1], W, H);
    std::vector<T> out(C * n);
    const T* src = m.data().data();
    for (std::size_t c = 0; c < C; ++c) {
        const T* mc = src + c * H * W;
        for (std::size_t p = 0; p < n; ++p) {
            const auto& t = taps[p];
            const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
            const T top = mc[t.y0 * W + t.x0] * (T(1) - fx) + mc[t.y0 * W + t.x1] * fx;
            const T bot = mc[t.y1 * W + t.x0] * (T(1) - fx) + mc[t.y1 * W + t.x1] * fx;
            out[c * n + p] = top * (T(1) - fy) + bot * fy;
        }
    }
    auto r = make_result<T>({C, Ho, Wo}, std::move(out), {m.node(), coords.node()}, "grid_sample");
    if (r.requires_grad()) {
        r.node()->backward = [C, H, W, n, taps = std::move(taps)](TensorNode<T>& self) {
            auto& mn = *self.parents[0];
            auto& cn = *self.parents[1];
            const auto& go = self.grad;
            if (mn.requires_grad) {
                auto& g = mn.ensure_grad();
                for (std::size_t c = 0; c < C; ++c) {
                    T* gc = g.data() + c * H * W;
                    for (std::size_t p = 0; p < n; ++p) {
                        const auto& t = taps[p];
                        const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
                        const T v = go[c * n + p];
                        gc[t.y0 * W + t.x0] += v * (T(1) - fx) * (T(1) - fy);
                        gc[t.y0 * W + t.x1] += v * fx * (T(1) - fy);
                        gc[t.y1 * W + t.x0] += v * (T(1) - fx) * fy;
                        gc[t.y1 * W + t.x1] += v * fx * fy;
                    }
                }
            }
            if (cn.requires_grad) {
                auto& g = cn.ensure_grad();
                const T* src = mn.value.data();
                for (std::size_t p = 0; p < n; ++p) {
                    const auto& t = taps[p];
                    const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
                    T gu = 0, gv = 0;
                    for (std::size_t c = 0; c < C; ++c) {
                        const T* mc = src + c * H * W;
                        const T v = go[c * n + p];
                        const T a = mc[t.y0 * W + t.x0], b = mc[t.y0 * W + t.x1];
                        const T cc = mc[t.y1 * W + t.x0], d = mc[t.y1 * W + t.x1];
                        gu += v * ((b - a) * (T(1) - fy) + (d - cc) * fy);
                        gv += v * ((cc - a) * (T(1) - fx) + (d - b) * fx);
                    }
                    if (!t.clamp_x) g[p * 2] += gu;
                    if (!t.clamp_y) g[p * 2 + 1] += gv;
                }
            }
        };
    }
    return r;
}

template <typename T>
Tensor<T> attention_pool(const Tensor<T>& m, const Tensor<T>& maps)
{
    require_defined(m, "attention_pool");
    require_defined(maps, "attention_pool");
    require(m.rank() == 3 && maps.rank() == 3 && m.dim(1) == maps.dim(1) && m.dim(2) == maps.dim(2),
            "attention_pool: maps " + shape_str(maps.shape()) + " do not match features " + shape_str(m.shape()));
    const std::size_t C = m.dim(0), L = maps.dim(0), hw = m.dim(1) * m.dim(2);
    auto a = reshape(maps, {L, hw});
    auto f = reshape(m, {C, hw});
    return matmul(a, transpose(f));
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define OSTR_INSTANTIATE(T)                                                                                          \
    template class Tensor<T>;                                                                                        \
    template class ComputationTape<T>;                                                                               \
    template Tensor<T> pointwise(const Tensor<T>&, Pointwise, T);                                                    \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                      \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                      \
    template Tensor<T> scale(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> sum(const Tensor<T>&);                                                                        \
    template Tensor<T> mean(const Tensor<T>&);                                                                       \
    template Tensor<T> add_n(const std::vector<Tensor<T>>&);                                                         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                             \
    template Tensor<T> transpose(const Tensor<T>&);                                                                  \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                   \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);       \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                                            \
    template Tensor<T> l2_normalize(const Tensor<T>&, NormMode);                                                     \
    template Tensor<T> l2_normalize_rows(const Tensor<T>&);                                                          \
    template Tensor<T> softmax_cross_entropy(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> softmax_cross_entropy_rows(const Tensor<T>&, std::span<const std::size_t>);                   \
    template Tensor<T> softmax_rows(const Tensor<T>&);                                                               \
    template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> stack_columns(const std::vector<Tensor<T>>&);                                                 \
    template Tensor<T> select_columns(const Tensor<T>&, std::span<const std::size_t>);                               \
    template Tensor<T> column_group_max(const Tensor<T>&, const std::vector<std::vector<std::size_t>>&);              \
    template Tensor<T> append_scalar_column(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> zero_diagonal(const Tensor<T>&);                                                              \
    template Tensor<T> integrate_density(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> grid_sample(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> attention_pool(const Tensor<T>&, const Tensor<T>&);

OSTR_INSTANTIATE(float)
OSTR_INSTANTIATE(double)

template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;

} // namespace ostr
