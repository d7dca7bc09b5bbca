#pragma once

// Minimal reverse-mode differentiable array substrate.
//
// A Tensor is a cheap handle onto a graph node. Every differentiable op
// records its parents and a backward closure on the node it creates; a
// ComputationTape collects the nodes reachable from a scalar loss in
// execution order and replays the closures in reverse. Gradients always
// accumulate, so shared sub-expressions are handled naturally.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ostr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;

    std::vector<T>& ensure_grad()
    {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    /// Mutable access is for leaves only (parameters, optimizer updates).
    std::span<T> mutable_data() { return node_->value; }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    T item() const;
    T operator[](std::size_t i) const { return node_->value[i]; }

    /// Fresh leaf sharing no graph history (values copied).
    Tensor detach() const;
    template <typename U>
    Tensor<U> cast() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Ordered record of the differentiable ops reachable from a scalar loss.
template <typename T>
class ComputationTape {
public:
    explicit ComputationTape(const Tensor<T>& loss);

    /// Seeds d(loss)=1 and replays backward closures in reverse execution order.
    void backward();

    std::size_t size() const { return nodes_.size(); }
    std::vector<std::string> op_names() const;

private:
    Tensor<T> loss_;
    std::vector<TensorNode<T>*> nodes_;
};

template <typename T>
void backward(const Tensor<T>& loss)
{
    ComputationTape<T>(loss).backward();
}

// ---------------------------------------------------------------------------
// Ops. All shapes are checked; violations raise DimensionError.

enum class Pointwise { Sigmoid, Relu, AddScalar, MulScalar };

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, Pointwise fn, T scalar = T(0));
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return pointwise(x, Pointwise::Sigmoid); }
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return pointwise(x, Pointwise::Relu); }
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) { return pointwise(x, Pointwise::AddScalar, s); }
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) { return pointwise(x, Pointwise::MulScalar, s); }

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// Multiply every element of x by the single-element tensor s.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Sum of a list of same-shape tensors.
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Cross-correlation of x[C,H,W] with w[K,C,kh,kw]; bias[K] optional.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad)
{
    return conv2d(x, w, Tensor<T>(), stride, pad);
}

/// x[C,H,W] -> [C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

enum class NormMode {
    Training, ///< denominator floored at kNormEpsilon
    Strict,   ///< norm <= kNormEpsilon raises DegenerateInputError
};
inline constexpr double kNormEpsilon = 1e-8;

/// Whole tensor treated as one vector.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v, NormMode mode = NormMode::Training);
/// Each row of a [m,n] matrix normalized independently (Training mode floor).
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x);

/// -log softmax(logits)[target] with max subtraction. onehot must contain one 1.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& onehot);
/// Mean over the first targets.size() rows of logits[m,n] of the row-wise CE.
template <typename T>
Tensor<T> softmax_cross_entropy_rows(const Tensor<T>& logits, std::span<const std::size_t> targets);

/// Row-wise softmax of [m,n].
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Concatenate [m,a] and [m,b] along columns.
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
/// Column vectors (each of shape [d] or [d,1]) stacked into [d,n].
template <typename T>
Tensor<T> stack_columns(const std::vector<Tensor<T>>& cols);
template <typename T>
Tensor<T> select_columns(const Tensor<T>& x, std::span<const std::size_t> cols);
/// out[:,g] = max over columns in groups[g]; gradient routed to the (first) argmax.
template <typename T>
Tensor<T> column_group_max(const Tensor<T>& x, const std::vector<std::vector<std::size_t>>& groups);
/// Append a column holding the single-element tensor s at every row.
template <typename T>
Tensor<T> append_scalar_column(const Tensor<T>& x, const Tensor<T>& s);
/// Square matrix with the diagonal zeroed (gradient zeroed there too).
template <typename T>
Tensor<T> zero_diagonal(const Tensor<T>& x);

/// Cumulative normalized integration of positive densities dx, dy [H,W] into
/// a coordinate map [H,W,2] (x then y, pixel units, pixel-center convention).
template <typename T>
Tensor<T> integrate_density(const Tensor<T>& dx, const Tensor<T>& dy);
/// Bilinear sampling of m[C,H,W] at coords[Ho,Wo,2] with edge clamping.
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& m, const Tensor<T>& coords);
/// F[l] = sum_{y,x} maps[l,y,x] * m[:,y,x]; maps[L,H,W], m[C,H,W] -> [L,C].
template <typename T>
Tensor<T> attention_pool(const Tensor<T>& m, const Tensor<T>& maps);

} // namespace ostr
