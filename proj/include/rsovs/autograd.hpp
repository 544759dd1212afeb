#pragma once

// Tape-free reverse-mode differentiation over dense tensors. Every op returns a
// node that owns its value and a closure that pushes its output gradient into its
// parents; `backward` walks the graph in reverse topological order.

#include <functional>
#include <memory>
#include <vector>

#include "rsovs/tensor.hpp"

namespace rsovs::ag {

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node&)> backward_fn;

    const Shape& shape() const { return value.shape; }

    Tensor<T>& ensure_grad() {
        if (grad.data.size() != value.data.size()) grad = Tensor<T>(value.shape, T(0));
        return grad;
    }
    bool has_grad() const { return grad.data.size() == value.data.size() && !grad.data.empty(); }
    void zero_grad() { grad = Tensor<T>(); }
};

/// While alive, new op nodes record no parents, so no graph is retained.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active();

private:
    bool previous_;
};

template <class T>
Var<T> constant(Tensor<T> value);

/// Graph leaf that accumulates gradient when `requires_grad` is set.
template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad);

/// Seeds d(root)/d(root) = 1 for a scalar root and propagates to every leaf.
template <class T>
void backward(const Var<T>& root);

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// y = x W^T + b over the last axis of x. W is [out, in]; b is [out] or null.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(const Var<T>& a, T s);

/// x viewed as [R, b.numel()]; b added to every row.
template <class T>
Var<T> add_broadcast_leading(const Var<T>& x, const Var<T>& b);
/// x viewed as [R, group, C] and g as [R, C]; g[r] is added to every x[r, k].
template <class T>
Var<T> add_grouped(const Var<T>& x, const Var<T>& g, int64_t group);
/// x viewed as [R, s.numel()]; each column scaled by s.
template <class T>
Var<T> mul_broadcast_leading(const Var<T>& x, const Var<T>& s);
/// x viewed as [s.numel(), C]; each row scaled by its entry of s.
template <class T>
Var<T> mul_broadcast_trailing(const Var<T>& x, const Var<T>& s);

template <class T>
Var<T> gelu(const Var<T>& x);
template <class T>
Var<T> sigmoid(const Var<T>& x);

/// Normalizes the last axis, then applies gamma/beta (both [last]).
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

template <class T>
Var<T> softmax_last(const Var<T>& x);

/// Batched matmul: a [G, n, k] times b [G, k, m] (or b^T when b is [G, m, k]).
template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b);

/// Row gather. x is viewed as rows of `row_len`; output row r copies input row
/// index[r], or zeros when index[r] < 0.
template <class T>
Var<T> gather_rows(const Var<T>& x, IndexMap index, int64_t row_len, Shape out_shape);

/// Row scatter-sum: out[map[r]] += s * x[r]. Rows with map[r] < 0 are dropped.
template <class T>
Var<T> scatter_rows(const Var<T>& x, IndexMap map, int64_t row_len, Shape out_shape, T s);

template <class T>
Var<T> concat_last(const std::vector<Var<T>>& parts);

/// Half-pixel bilinear resize over the two leading axes.
template <class T>
Var<T> resize_bilinear(const Var<T>& x, int64_t out_h, int64_t out_w);

/// Row-wise cosine similarity of x [N, d] against constant unit-or-not rows of
/// `classes` [C, d]; output [N, C].
template <class T>
Var<T> cosine_rows(const Var<T>& x, const Tensor<T>& classes, T eps = T(1e-8));

/// Mean per-row categorical cross-entropy of logits [P, C] against labels;
/// rows whose label equals `ignore_index` are excluded. Returns a scalar; when
/// every row is ignored the loss is 0 and `valid_count` is 0.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const Storage<int32_t>& labels, int32_t ignore_index,
                     int64_t* valid_count = nullptr);

template <class T>
Var<T> sum_all(const Var<T>& x);

}  // namespace rsovs::ag
