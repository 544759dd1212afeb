#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsovs {

using Shape = std::vector<int64_t>;

/// Raised for any tensor shape or grid-layout violation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for malformed inputs that are not shape problems (empty names, bad labels).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for invalid configuration values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s);

/// 64-byte aligned allocation, so vectorized kernels see the same alignment on
/// every run and reductions sum in a fixed order.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. The first two axes are spatial (rows, cols) for every
/// grid-like quantity in the pipeline.
template <class T>
struct Tensor {
    Shape shape;
    Storage<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{}) : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, const std::vector<T>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
        check_size();
    }
    Tensor(Shape s, Storage<T> values) : shape(std::move(s)), data(std::move(values)) { check_size(); }

    void check_size() const {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int64_t i) const { return shape.at(i < 0 ? shape.size() + i : i); }

    /// Product of all axes from `first` on.
    int64_t inner(int64_t first) const {
        int64_t n = 1;
        for (size_t i = first; i < shape.size(); ++i) n *= shape[i];
        return n;
    }

    T& operator[](int64_t i) { return data[i]; }
    const T& operator[](int64_t i) const { return data[i]; }

    T& at(std::initializer_list<int64_t> idx) { return data[offset(idx)]; }
    const T& at(std::initializer_list<int64_t> idx) const { return data[offset(idx)]; }

    int64_t offset(std::initializer_list<int64_t> idx) const {
        int64_t off = 0;
        size_t k = 0;
        for (int64_t v : idx) off = off * shape[k++] + v;
        for (; k < shape.size(); ++k) off *= shape[k];
        return off;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
        return Tensor(std::move(s), data);
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    bool operator==(const Tensor& o) const = default;
};

}  // namespace rsovs
