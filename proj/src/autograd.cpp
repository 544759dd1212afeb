#include "rsovs/autograd.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "rsovs/core.hpp"

namespace rsovs::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;
template <class T>
using CMapM = Eigen::Map<const RowMat<T>>;

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (!g_grad_enabled) return n;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

template <class T>
using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <class T>
Arr<T> arr(Tensor<T>& t) {
    return Arr<T>(t.data.data(), t.numel());
}
template <class T>
CArr<T> arr(const Tensor<T>& t) {
    return CArr<T>(t.data.data(), t.numel());
}

// Adds g into p's gradient, adopting the buffer when p has none yet.
template <class T>
void accumulate(Node<T>& p, Tensor<T>&& g) {
    if (!p.has_grad()) {
        g.shape = p.value.shape;
        p.grad = std::move(g);
    } else {
        arr(p.grad) += arr(g);
    }
}

// The node's own gradient is read only by its backward closure, so the closure
// may hand the buffer to one parent.
template <class T>
Tensor<T> take_grad(Node<T>& self) {
    return std::move(self.grad);
}

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::active() { return !g_grad_enabled; }

template <class T>
Var<T> constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return n;
}

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
    auto n = constant(std::move(value));
    n->requires_grad = requires_grad;
    return n;
}

template <class T>
void backward(const Var<T>& root) {
    if (root->value.numel() != 1) throw ShapeError("backward needs a scalar root");
    if (!root->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad().data[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
    // Intermediate gradients are not needed after the sweep.
    for (Node<T>* n : order)
        if (n->backward_fn) n->zero_grad();
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> v = x->value.reshaped(std::move(shape));
    return make_node<T>(std::move(v), {x}, [](Node<T>& self) { accumulate(*self.parents[0], take_grad(self)); });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const int64_t in = weight->value.dim(1), out = weight->value.dim(0);
    if (x->value.dim(-1) != in)
        throw ShapeError("linear: input width " + std::to_string(x->value.dim(-1)) + " vs weight " +
                         shape_str(weight->shape()));
    if (bias && bias->value.numel() != out) throw ShapeError("linear: bias size mismatch");
    const int64_t rows = x->value.numel() / in;
    Shape shape = x->value.shape;
    shape.back() = out;
    Tensor<T> y(shape);
    MapM<T> Y(y.data.data(), rows, out);
    CMapM<T> X(x->value.data.data(), rows, in);
    CMapM<T> W(weight->value.data.data(), out, in);
    Y.noalias() = X * W.transpose();
    if (bias) {
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias->value.data.data(), out);
        Y.rowwise() += b;
    }
    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_node<T>(std::move(y), std::move(parents), [rows, in, out](Node<T>& self) {
        CMapM<T> G(self.grad.data.data(), rows, out);
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        if (px->requires_grad) {
            MapM<T> GX(px->ensure_grad().data.data(), rows, in);
            GX.noalias() += G * CMapM<T>(pw->value.data.data(), out, in);
        }
        if (pw->requires_grad) {
            MapM<T> GW(pw->ensure_grad().data.data(), out, in);
            GW.noalias() += G.transpose() * CMapM<T>(px->value.data.data(), rows, in);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(self.parents[2]->ensure_grad().data.data(), out);
            GB += G.colwise().sum();
        }
    });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a->shape(), b->shape(), "add");
    Tensor<T> y = a->value;
    arr(y) += arr(b->value);
    return make_node<T>(std::move(y), {a, b}, [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) accumulate(*pa, pb->requires_grad ? Tensor<T>(self.grad) : take_grad(self));
        if (pb->requires_grad) accumulate(*pb, take_grad(self));
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a->shape(), b->shape(), "mul");
    Tensor<T> y = a->value;
    arr(y) *= arr(b->value);
    return make_node<T>(std::move(y), {a, b}, [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            Tensor<T> g = self.grad;
            arr(g) *= arr(pb->value);
            accumulate(*pa, std::move(g));
        }
        if (pb->requires_grad) {
            Tensor<T> g = take_grad(self);
            arr(g) *= arr(pa->value);
            accumulate(*pb, std::move(g));
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> y = a->value;
    arr(y) *= s;
    return make_node<T>(std::move(y), {a}, [s](Node<T>& self) {
        Tensor<T> g = take_grad(self);
        arr(g) *= s;
        accumulate(*self.parents[0], std::move(g));
    });
}

template <class T>
Var<T> add_broadcast_leading(const Var<T>& x, const Var<T>& b) {
    const int64_t cols = b->value.numel();
    if (cols == 0 || x->value.numel() % cols != 0)
        throw ShapeError("add_broadcast_leading: " + shape_str(b->shape()) + " does not tile " + shape_str(x->shape()));
    const int64_t rows = x->value.numel() / cols;
    Tensor<T> y = x->value;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) y.data[r * cols + c] += b->value.data[c];
    return make_node<T>(std::move(y), {x, b}, [rows, cols](Node<T>& self) {
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) g.data[c] += self.grad.data[r * cols + c];
        }
        if (self.parents[0]->requires_grad) accumulate(*self.parents[0], take_grad(self));
    });
}

template <class T>
Var<T> add_grouped(const Var<T>& x, const Var<T>& g, int64_t group) {
    const int64_t cols = g->value.numel() > 0 ? x->value.dim(-1) : 0;
    if (cols == 0 || group < 1 || g->value.dim(-1) != cols || x->value.numel() != g->value.numel() * group)
        throw ShapeError("add_grouped: " + shape_str(g->shape()) + " does not tile " + shape_str(x->shape()) +
                         " in groups of " + std::to_string(group));
    const int64_t rows = g->value.numel() / cols;
    Tensor<T> y = x->value;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t k = 0; k < group; ++k) {
            T* yr = &y.data[(r * group + k) * cols];
            const T* gr = &g->value.data[r * cols];
            for (int64_t c = 0; c < cols; ++c) yr[c] += gr[c];
        }
    return make_node<T>(std::move(y), {x, g}, [rows, group, cols](Node<T>& self) {
        if (self.parents[1]->requires_grad) {
            auto& gg = self.parents[1]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t k = 0; k < group; ++k) {
                    const T* src = &self.grad.data[(r * group + k) * cols];
                    T* dst = &gg.data[r * cols];
                    for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
                }
        }
        if (self.parents[0]->requires_grad) accumulate(*self.parents[0], take_grad(self));
    });
}

template <class T>
Var<T> mul_broadcast_leading(const Var<T>& x, const Var<T>& s) {
    const int64_t cols = s->value.numel();
    if (cols == 0 || x->value.numel() % cols != 0)
        throw ShapeError("mul_broadcast_leading: " + shape_str(s->shape()) + " does not tile " + shape_str(x->shape()));
    const int64_t rows = x->value.numel() / cols;
    Tensor<T> y = x->value;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) y.data[r * cols + c] *= s->value.data[c];
    return make_node<T>(std::move(y), {x, s}, [rows, cols](Node<T>& self) {
        auto& px = self.parents[0];
        auto& ps = self.parents[1];
        if (ps->requires_grad) {
            auto& g = ps->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) g.data[c] += self.grad.data[r * cols + c] * px->value.data[r * cols + c];
        }
        if (px->requires_grad) {
            Tensor<T> g = take_grad(self);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) g.data[r * cols + c] *= ps->value.data[c];
            accumulate(*px, std::move(g));
        }
    });
}

template <class T>
Var<T> mul_broadcast_trailing(const Var<T>& x, const Var<T>& s) {
    const int64_t rows = s->value.numel();
    if (rows == 0 || x->value.numel() % rows != 0)
        throw ShapeError("mul_broadcast_trailing: " + shape_str(s->shape()) + " does not tile " + shape_str(x->shape()));
    const int64_t cols = x->value.numel() / rows;
    Tensor<T> y = x->value;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) y.data[r * cols + c] *= s->value.data[r];
    return make_node<T>(std::move(y), {x, s}, [rows, cols](Node<T>& self) {
        auto& px = self.parents[0];
        auto& ps = self.parents[1];
        if (ps->requires_grad) {
            auto& g = ps->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                T acc = 0;
                for (int64_t c = 0; c < cols; ++c) acc += self.grad.data[r * cols + c] * px->value.data[r * cols + c];
                g.data[r] += acc;
            }
        }
        if (px->requires_grad) {
            Tensor<T> g = take_grad(self);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) g.data[r * cols + c] *= ps->value.data[r];
            accumulate(*px, std::move(g));
        }
    });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    Tensor<T> y(x->value.shape);
    const auto xv = arr(x->value);
    arr(y) = T(0.5) * xv * (T(1) + (xv * inv_sqrt2).erf());
    return make_node<T>(std::move(y), {x}, [inv_sqrt2](Node<T>& self) {
        const auto xv = arr(self.parents[0]->value);
        const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
        Tensor<T> g = take_grad(self);
        arr(g) *= T(0.5) * (T(1) + (xv * inv_sqrt2).erf()) + xv * inv_sqrt_2pi * (T(-0.5) * xv.square()).exp();
        accumulate(*self.parents[0], std::move(g));
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> y(x->value.shape);
    arr(y) = T(1) / (T(1) + (-arr(x->value)).exp());
    auto node = make_node<T>(std::move(y), {x}, nullptr);
    if (node->requires_grad) {
        node->backward_fn = [](Node<T>& self) {
            const auto s = arr(self.value);
            Tensor<T> g = take_grad(self);
            arr(g) *= s * (T(1) - s);
            accumulate(*self.parents[0], std::move(g));
        };
    }
    return node;
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const int64_t d = x->value.dim(-1);
    if (gamma->value.numel() != d || beta->value.numel() != d) throw ShapeError("layer_norm: affine size mismatch");
    const int64_t rows = x->value.numel() / d;
    Tensor<T> y(x->value.shape);
    auto xhat = std::make_shared<std::vector<T>>(x->value.data.size());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = &x->value.data[r * d];
        T mean = 0;
        for (int64_t i = 0; i < d; ++i) mean += xr[i];
        mean /= T(d);
        T var = 0;
        for (int64_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (int64_t i = 0; i < d; ++i) {
            const T h = (xr[i] - mean) * rs;
            (*xhat)[r * d + i] = h;
            y.data[r * d + i] = h * gamma->value.data[i] + beta->value.data[i];
        }
    }
    return make_node<T>(std::move(y), {x, gamma, beta}, [rows, d, xhat, rstd](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& gy = self.grad.data;
        if (pg->requires_grad || pb->requires_grad) {
            auto& gg = pg->ensure_grad();
            auto& gb = pb->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < d; ++i) {
                    gg.data[i] += gy[r * d + i] * (*xhat)[r * d + i];
                    gb.data[i] += gy[r * d + i];
                }
        }
        if (px->requires_grad) {
            auto& gx = px->ensure_grad();
            const auto& gamma_v = pg->value.data;
            for (int64_t r = 0; r < rows; ++r) {
                T sum_g = 0, sum_gh = 0;
                for (int64_t i = 0; i < d; ++i) {
                    const T gh = gy[r * d + i] * gamma_v[i];
                    sum_g += gh;
                    sum_gh += gh * (*xhat)[r * d + i];
                }
                const T rs = (*rstd)[r];
                for (int64_t i = 0; i < d; ++i) {
                    const T gh = gy[r * d + i] * gamma_v[i];
                    gx.data[r * d + i] += rs * (gh - sum_g / T(d) - (*xhat)[r * d + i] * sum_gh / T(d));
                }
            }
        }
    });
}

template <class T>
Var<T> softmax_last(const Var<T>& x) {
    const int64_t d = x->value.dim(-1);
    const int64_t rows = x->value.numel() / d;
    Tensor<T> y(x->value.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = &x->value.data[r * d];
        T* yr = &y.data[r * d];
        const T m = *std::max_element(xr, xr + d);
        for (int64_t i = 0; i < d; ++i) yr[i] = xr[i] - m;
    }
    arr(y) = arr(y).exp();
    for (int64_t r = 0; r < rows; ++r) {
        T* yr = &y.data[r * d];
        T sum = 0;
        for (int64_t i = 0; i < d; ++i) sum += yr[i];
        const T inv = T(1) / sum;
        for (int64_t i = 0; i < d; ++i) yr[i] *= inv;
    }
    auto node = make_node<T>(std::move(y), {x}, nullptr);
    if (node->requires_grad) {
        node->backward_fn = [rows, d](Node<T>& self) {
            auto& gx = self.parents[0]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T* yr = &self.value.data[r * d];
                const T* gr = &self.grad.data[r * d];
                T dot = 0;
                for (int64_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
                for (int64_t i = 0; i < d; ++i) gx.data[r * d + i] += yr[i] * (gr[i] - dot);
            }
        };
    }
    return node;
}

template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b) {
    if (a->value.rank() != 3 || b->value.rank() != 3 || a->value.dim(0) != b->value.dim(0))
        throw ShapeError("bmm: expected matching [G,n,k] operands, got " + shape_str(a->shape()) + " and " +
                         shape_str(b->shape()));
    const int64_t G = a->value.dim(0), n = a->value.dim(1), k = a->value.dim(2);
    const int64_t bk = transpose_b ? b->value.dim(2) : b->value.dim(1);
    const int64_t m = transpose_b ? b->value.dim(1) : b->value.dim(2);
    if (bk != k) throw ShapeError("bmm: inner dimension mismatch");
    Tensor<T> y({G, n, m});
    for (int64_t g = 0; g < G; ++g) {
        CMapM<T> A(&a->value.data[g * n * k], n, k);
        MapM<T> Y(&y.data[g * n * m], n, m);
        if (transpose_b)
            Y.noalias() = A * CMapM<T>(&b->value.data[g * m * k], m, k).transpose();
        else
            Y.noalias() = A * CMapM<T>(&b->value.data[g * k * m], k, m);
    }
    return make_node<T>(std::move(y), {a, b}, [G, n, k, m, transpose_b](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (int64_t g = 0; g < G; ++g) {
            CMapM<T> GY(&self.grad.data[g * n * m], n, m);
            if (pa->requires_grad) {
                MapM<T> GA(&pa->ensure_grad().data[g * n * k], n, k);
                if (transpose_b)
                    GA.noalias() += GY * CMapM<T>(&pb->value.data[g * m * k], m, k);
                else
                    GA.noalias() += GY * CMapM<T>(&pb->value.data[g * k * m], k, m).transpose();
            }
            if (pb->requires_grad) {
                CMapM<T> A(&pa->value.data[g * n * k], n, k);
                if (transpose_b) {
                    MapM<T> GB(&pb->ensure_grad().data[g * m * k], m, k);
                    GB.noalias() += GY.transpose() * A;
                } else {
                    MapM<T> GB(&pb->ensure_grad().data[g * k * m], k, m);
                    GB.noalias() += A.transpose() * GY;
                }
            }
        }
    });
}

template <class T>
Var<T> gather_rows(const Var<T>& x, IndexMap index, int64_t row_len, Shape out_shape) {
    const int64_t out_rows = static_cast<int64_t>(index->size());
    if (shape_numel(out_shape) != out_rows * row_len)
        throw ShapeError("gather_rows: output shape " + shape_str(out_shape) + " does not hold " +
                         std::to_string(out_rows) + " rows of " + std::to_string(row_len));
    const int64_t in_rows = x->value.numel() / row_len;
    Tensor<T> y(std::move(out_shape), T(0));
    for (int64_t r = 0; r < out_rows; ++r) {
        const int64_t s = (*index)[r];
        if (s < 0) continue;
        if (s >= in_rows) throw ShapeError("gather_rows: index out of range");
        std::copy_n(&x->value.data[s * row_len], row_len, &y.data[r * row_len]);
    }
    return make_node<T>(std::move(y), {x}, [index, row_len, out_rows](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int64_t r = 0; r < out_rows; ++r) {
            const int64_t s = (*index)[r];
            if (s < 0) continue;
            T* dst = &g.data[s * row_len];
            const T* src = &self.grad.data[r * row_len];
            for (int64_t c = 0; c < row_len; ++c) dst[c] += src[c];
        }
    });
}

template <class T>
Var<T> scatter_rows(const Var<T>& x, IndexMap map, int64_t row_len, Shape out_shape, T s) {
    const int64_t in_rows = x->value.numel() / row_len;
    if (static_cast<int64_t>(map->size()) != in_rows) throw ShapeError("scatter_rows: map size mismatch");
    const int64_t out_rows = shape_numel(out_shape) / row_len;
    Tensor<T> y(std::move(out_shape), T(0));
    for (int64_t r = 0; r < in_rows; ++r) {
        const int64_t d = (*map)[r];
        if (d < 0) continue;
        if (d >= out_rows) throw ShapeError("scatter_rows: index out of range");
        T* dst = &y.data[d * row_len];
        const T* src = &x->value.data[r * row_len];
        for (int64_t c = 0; c < row_len; ++c) dst[c] += s * src[c];
    }
    return make_node<T>(std::move(y), {x}, [map, row_len, in_rows, s](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (int64_t r = 0; r < in_rows; ++r) {
            const int64_t d = (*map)[r];
            if (d < 0) continue;
            for (int64_t c = 0; c < row_len; ++c) g.data[r * row_len + c] += s * self.grad.data[d * row_len + c];
        }
    });
}

template <class T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    const int64_t rows = parts[0]->value.numel() / parts[0]->value.dim(-1);
    std::vector<int64_t> widths;
    int64_t total = 0;
    for (const auto& p : parts) {
        Shape a = p->shape(), b = parts[0]->shape();
        a.pop_back();
        b.pop_back();
        if (a != b) throw ShapeError("concat_last: leading shapes differ");
        widths.push_back(p->value.dim(-1));
        total += widths.back();
    }
    Shape shape = parts[0]->shape();
    shape.back() = total;
    Tensor<T> y(shape);
    for (int64_t r = 0; r < rows; ++r) {
        int64_t off = 0;
        for (size_t k = 0; k < parts.size(); ++k) {
            std::copy_n(&parts[k]->value.data[r * widths[k]], widths[k], &y.data[r * total + off]);
            off += widths[k];
        }
    }
    return make_node<T>(std::move(y), parts, [rows, widths, total](Node<T>& self) {
        int64_t off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k];
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < widths[k]; ++c) g.data[r * widths[k] + c] += self.grad.data[r * total + off + c];
            }
            off += widths[k];
        }
    });
}

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int64_t out_h, int64_t out_w) {
    const int64_t in_h = x->value.dim(0), in_w = x->value.dim(1);
    if (in_h == out_h && in_w == out_w) return x;
    Tensor<T> y = bilinear_resize(x->value, out_h, out_w);
    const int64_t block = x->value.inner(2);
    return make_node<T>(std::move(y), {x}, [in_h, in_w, out_h, out_w, block](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto ty = linear_taps(in_h, out_h);
        const auto tx = linear_taps(in_w, out_w);
        for (int64_t yy = 0; yy < out_h; ++yy) {
            for (int64_t xx = 0; xx < out_w; ++xx) {
                const T wy = T(ty[yy].w_hi), wx = T(tx[xx].w_hi);
                const T w[4] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
                const int64_t src[4] = {ty[yy].lo * in_w + tx[xx].lo, ty[yy].lo * in_w + tx[xx].hi,
                                        ty[yy].hi * in_w + tx[xx].lo, ty[yy].hi * in_w + tx[xx].hi};
                const T* go = &self.grad.data[(yy * out_w + xx) * block];
                for (int k = 0; k < 4; ++k) {
                    if (w[k] == T(0)) continue;
                    T* gi = &g.data[src[k] * block];
                    for (int64_t c = 0; c < block; ++c) gi[c] += w[k] * go[c];
                }
            }
        }
    });
}

template <class T>
Var<T> cosine_rows(const Var<T>& x, const Tensor<T>& classes, T eps) {
    const int64_t d = x->value.dim(-1);
    if (classes.dim(-1) != d)
        throw ShapeError("cosine similarity: feature width " + std::to_string(d) + " vs class width " +
                         std::to_string(classes.dim(-1)));
    const int64_t N = x->value.numel() / d, C = classes.numel() / d;
    Shape shape = x->value.shape;
    shape.back() = C;
    Tensor<T> y(shape);
    auto xn = std::make_shared<std::vector<T>>(N);
    std::vector<T> cn(C);
    for (int64_t j = 0; j < C; ++j) {
        T s = 0;
        for (int64_t i = 0; i < d; ++i) s += classes.data[j * d + i] * classes.data[j * d + i];
        cn[j] = std::max(std::sqrt(s), eps);
    }
    for (int64_t r = 0; r < N; ++r) {
        const T* xr = &x->value.data[r * d];
        T s = 0;
        for (int64_t i = 0; i < d; ++i) s += xr[i] * xr[i];
        (*xn)[r] = std::sqrt(s);
        const T nx = std::max((*xn)[r], eps);
        for (int64_t j = 0; j < C; ++j) {
            T dot = 0;
            for (int64_t i = 0; i < d; ++i) dot += xr[i] * classes.data[j * d + i];
            y.data[r * C + j] = std::clamp(dot / (nx * cn[j]), T(-1), T(1));
        }
    }
    auto cls = std::make_shared<Tensor<T>>(classes);
    return make_node<T>(std::move(y), {x}, [N, C, d, xn, cn, cls, eps](Node<T>& self) {
        auto& px = self.parents[0];
        auto& g = px->ensure_grad();
        for (int64_t r = 0; r < N; ++r) {
            const T* xr = &px->value.data[r * d];
            const T norm = (*xn)[r];
            const bool guarded = norm < eps;
            const T nx = std::max(norm, eps);
            for (int64_t j = 0; j < C; ++j) {
                const T yv = self.value.data[r * C + j];
                const T go = self.grad.data[r * C + j];
                if (go == T(0) || yv <= T(-1) || yv >= T(1)) continue;
                const T* cj = &cls->data[j * d];
                for (int64_t i = 0; i < d; ++i) {
                    T dy = cj[i] / (nx * cn[j]);
                    if (!guarded) dy -= yv * xr[i] / (nx * nx);
                    g.data[r * d + i] += go * dy;
                }
            }
        }
    });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, const Storage<int32_t>& labels, int32_t ignore_index,
                     int64_t* valid_count) {
    const int64_t C = logits->value.dim(-1);
    const int64_t P = logits->value.numel() / C;
    if (static_cast<int64_t>(labels.size()) != P)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(P) +
                         " rows");
    int64_t valid = 0;
    for (int32_t l : labels) {
        if (l == ignore_index) continue;
        if (l < 0 || l >= C)
            throw InputError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(C) + ")");
        ++valid;
    }
    if (valid_count) *valid_count = valid;
    auto probs = std::make_shared<Tensor<T>>(logits->value.shape);
    auto& pr = probs->data;
    std::vector<T> row_max(P, T(0));
    for (int64_t p = 0; p < P; ++p) {
        if (labels[p] == ignore_index) continue;
        const T* z = &logits->value.data[p * C];
        row_max[p] = *std::max_element(z, z + C);
        for (int64_t c = 0; c < C; ++c) pr[p * C + c] = z[c] - row_max[p];
    }
    arr(*probs) = arr(*probs).exp();
    T loss = 0;
    for (int64_t p = 0; p < P; ++p) {
        if (labels[p] == ignore_index) {
            std::fill_n(&pr[p * C], C, T(0));
            continue;
        }
        T sum = 0;
        for (int64_t c = 0; c < C; ++c) sum += pr[p * C + c];
        const T inv = T(1) / sum;
        for (int64_t c = 0; c < C; ++c) pr[p * C + c] *= inv;
        loss += std::log(sum) - (logits->value.data[p * C + labels[p]] - row_max[p]);
    }
    const T denom = valid > 0 ? T(valid) : T(1);
    Tensor<T> y({}, std::vector<T>{valid > 0 ? loss / denom : T(0)});
    auto labels_copy = std::make_shared<Storage<int32_t>>(labels);
    return make_node<T>(std::move(y), {logits}, [P, C, probs, labels_copy, ignore_index, denom](Node<T>& self) {
        const T go = self.grad.data[0] / denom;
        Tensor<T> g = *probs;
        for (int64_t p = 0; p < P; ++p) {
            const int32_t l = (*labels_copy)[p];
            if (l != ignore_index) g.data[p * C + l] -= T(1);
        }
        arr(g) *= go;
        accumulate(*self.parents[0], std::move(g));
    });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
    T s = 0;
    for (T v : x->value.data) s += v;
    return make_node<T>(Tensor<T>({}, std::vector<T>{s}), {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g.data) v += self.grad.data[0];
    });
}

#define RSOVS_INSTANTIATE(T)                                                                                    \
    template Var<T> constant(Tensor<T>);                                                                        \
    template Var<T> leaf(Tensor<T>, bool);                                                                      \
    template void backward(const Var<T>&);                                                                      \
    template Var<T> reshape(const Var<T>&, Shape);                                                              \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                        \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                          \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                          \
    template Var<T> scale(const Var<T>&, T);                                                                    \
    template Var<T> add_broadcast_leading(const Var<T>&, const Var<T>&);                                        \
    template Var<T> add_grouped(const Var<T>&, const Var<T>&, int64_t);                                         \
    template Var<T> mul_broadcast_leading(const Var<T>&, const Var<T>&);                                        \
    template Var<T> mul_broadcast_trailing(const Var<T>&, const Var<T>&);                                       \
    template Var<T> gelu(const Var<T>&);                                                                        \
    template Var<T> sigmoid(const Var<T>&);                                                                     \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                                 \
    template Var<T> softmax_last(const Var<T>&);                                                                \
    template Var<T> bmm(const Var<T>&, const Var<T>&, bool);                                                    \
    template Var<T> gather_rows(const Var<T>&, IndexMap, int64_t, Shape);                                       \
    template Var<T> scatter_rows(const Var<T>&, IndexMap, int64_t, Shape, T);                                   \
    template Var<T> concat_last(const std::vector<Var<T>>&);                                                    \
    template Var<T> resize_bilinear(const Var<T>&, int64_t, int64_t);                                           \
    template Var<T> cosine_rows(const Var<T>&, const Tensor<T>&, T);                                            \
    template Var<T> cross_entropy(const Var<T>&, const Storage<int32_t>&, int32_t, int64_t*);             \
    template Var<T> sum_all(const Var<T>&);

RSOVS_INSTANTIATE(float)
RSOVS_INSTANTIATE(double)

}  // namespace rsovs::ag
