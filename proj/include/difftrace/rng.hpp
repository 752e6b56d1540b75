#pragma once

#include <cstdint>
#include <random>

#include "difftrace/tensor.hpp"

namespace difftrace {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Derives an independent stream seed from a base seed and a path of tags.
/// Every consumer of randomness gets its own derived stream so that adding or
/// reordering consumers cannot silently shift another stage's draws.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = detail::splitmix64(base ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t p : path) s = detail::splitmix64(s ^ detail::splitmix64(p));
    return s;
}

/// Seeded RNG with a platform-stable Gaussian (Box-Muller over mt19937_64).
/// std::normal_distribution is implementation-defined; this is not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0,1).
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = std::uint64_t(hi - lo) + 1;
        return lo + int(gen_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename R>
    void fill_normal(Tensor<R>& t) {
        for (auto& e : t.v) e = static_cast<R>(normal());
    }

    template <typename R>
    Tensor<R> normal_tensor(int n, int c, int h, int w) {
        Tensor<R> t(n, c, h, w);
        fill_normal(t);
        return t;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace difftrace
