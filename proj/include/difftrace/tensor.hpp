#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace difftrace {

/// Dense NCHW tensor. The one value container everything else works on:
/// image batches, triggers, noise, parameter slabs.
template <typename R>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<R> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, R(0)) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw std::invalid_argument("Tensor: negative dimension");
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.n, o.c, o.h, o.w); }

    static Tensor full(int n_, int c_, int h_, int w_, R value) {
        Tensor t(n_, c_, h_, w_);
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    std::size_t size() const { return v.size(); }
    R* data() { return v.data(); }
    const R* data() const { return v.data(); }

    R& at(int i, int ch, int y, int x) {
        return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }
    const R& at(int i, int ch, int y, int x) const {
        return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
               "," + std::to_string(w) + "]";
    }

    /// Per-sample view boundaries: elements of sample i live in [i*stride, (i+1)*stride).
    std::size_t sample_stride() const { return static_cast<std::size_t>(c) * h * w; }
};

template <typename R>
void check_same_shape(const Tensor<R>& a, const Tensor<R>& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

// ---- elementwise helpers ----------------------------------------------------

template <typename R>
void fill(Tensor<R>& t, R value) {
    std::fill(t.v.begin(), t.v.end(), value);
}

/// y += a*x
template <typename R>
void axpy(Tensor<R>& y, R a, const Tensor<R>& x) {
    check_same_shape(y, x, "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] += a * x.v[i];
}

template <typename R>
void scale(Tensor<R>& t, R a) {
    for (auto& e : t.v) e *= a;
}

/// out = a*x + b*y
template <typename R>
Tensor<R> lincomb(R a, const Tensor<R>& x, R b, const Tensor<R>& y) {
    check_same_shape(x, y, "lincomb");
    Tensor<R> out = Tensor<R>::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = a * x.v[i] + b * y.v[i];
    return out;
}

template <typename R>
Tensor<R> sub(const Tensor<R>& a, const Tensor<R>& b) {
    return lincomb(R(1), a, R(-1), b);
}

template <typename R>
void clamp_(Tensor<R>& t, R lo, R hi) {
    for (auto& e : t.v) e = e < lo ? lo : (e > hi ? hi : e);
}

/// Inner product, accumulated in double.
template <typename R>
double dot(const Tensor<R>& a, const Tensor<R>& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a.v[i]) * double(b.v[i]);
    return s;
}

template <typename R>
double sum_sq(const Tensor<R>& a) {
    double s = 0.0;
    for (const auto& e : a.v) s += double(e) * double(e);
    return s;
}

template <typename R>
double l2_norm(const Tensor<R>& a) {
    return std::sqrt(sum_sq(a));
}

/// Mean of squared differences over all entries.
template <typename R>
double mse(const Tensor<R>& a, const Tensor<R>& b) {
    check_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a.v[i]) - double(b.v[i]);
        s += d * d;
    }
    return s / double(a.size());
}

/// Mean absolute difference over all entries.
template <typename R>
double mean_abs_diff(const Tensor<R>& a, const Tensor<R>& b) {
    check_same_shape(a, b, "mean_abs_diff");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a.v[i]) - double(b.v[i]));
    return s / double(a.size());
}

template <typename R>
bool all_finite(const Tensor<R>& t) {
    for (const auto& e : t.v)
        if (!std::isfinite(double(e))) return false;
    return true;
}

/// Batch sample i of `src`, broadcast against a [1,c,h,w]-shaped pattern is
/// common enough to deserve helpers.
template <typename R>
Tensor<R> slice_sample(const Tensor<R>& src, int i) {
    Tensor<R> out(1, src.c, src.h, src.w);
    const std::size_t s = src.sample_stride();
    std::copy(src.v.begin() + i * s, src.v.begin() + (i + 1) * s, out.v.begin());
    return out;
}

/// y[i] += a * pattern  for every sample i (pattern has n == 1).
template <typename R>
void add_pattern(Tensor<R>& y, R a, const Tensor<R>& pattern) {
    if (pattern.n != 1 || pattern.c != y.c || pattern.h != y.h || pattern.w != y.w)
        throw std::invalid_argument("add_pattern: pattern shape mismatch");
    const std::size_t s = y.sample_stride();
    for (int i = 0; i < y.n; ++i)
        for (std::size_t j = 0; j < s; ++j) y.v[i * s + j] += a * pattern.v[j];
}

template <typename Dst, typename Src>
Tensor<Dst> cast_tensor(const Tensor<Src>& t) {
    Tensor<Dst> out(t.n, t.c, t.h, t.w);
    for (std::size_t i = 0; i < t.size(); ++i) out.v[i] = static_cast<Dst>(t.v[i]);
    return out;
}

}  // namespace difftrace
