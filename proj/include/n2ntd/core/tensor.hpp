#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace n2ntd {

// Dense row-major tensor, rank <= 4. Deliberately minimal: shape plus flat
// storage; kernels index raw pointers with explicit strides.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;

    explicit Tensor(std::initializer_list<int> dims) { resize(dims); }
    explicit Tensor(const std::vector<int>& dims) { resize(dims); }

    void resize(const std::vector<int>& dims)
    {
        shape = dims;
        v.assign(count(dims), T(0));
    }

    static int64_t count(const std::vector<int>& dims)
    {
        int64_t n = 1;
        for (int d : dims) n *= d;
        return n;
    }

    int rank() const { return int(shape.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    int64_t size() const { return int64_t(v.size()); }
    bool empty() const { return v.empty(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    T& operator[](int64_t i) { return v[size_t(i)]; }
    const T& operator[](int64_t i) const { return v[size_t(i)]; }

    // rank-specific accessors
    T& at(int a, int b) { return v[size_t(a) * shape[1] + b]; }
    const T& at(int a, int b) const { return v[size_t(a) * shape[1] + b]; }

    T& at(int a, int b, int c)
    {
        return v[(size_t(a) * shape[1] + b) * shape[2] + c];
    }
    const T& at(int a, int b, int c) const
    {
        return v[(size_t(a) * shape[1] + b) * shape[2] + c];
    }

    T& at(int a, int b, int c, int d)
    {
        return v[((size_t(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    const T& at(int a, int b, int c, int d) const
    {
        return v[((size_t(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const
    {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace n2ntd
